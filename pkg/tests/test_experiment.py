import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from morphome.cli import main
from morphome.corpus import generate_triples, synthesize_paradigms
from morphome.evaluate import load_wug_items, read_report_csv
from morphome.experiment import (
    ConfigError,
    ExperimentConfig,
    Layout,
    MissingArtifact,
    condition_name,
    eval_experiment,
    grid_cells,
    load_classes,
    load_instances,
    make_wug_stimuli,
    predict_experiment,
    prepare_experiment,
    report_experiment,
    run_id_for,
    save_instances,
    train_experiment,
    wug_experiment,
)
from morphome.tags import L_CELLS


def tiny_config(out_dir, **kw):
    base = dict(
        synthetic={"n_l": 6, "n_nl": 6, "seed": 3, "stem_len": [3, 4]},
        conditions=[0.5],
        variants=["VANILLA", "FEATURE_GEOMETRIC"],
        sample_total=10,
        triple_fraction=0.02,
        split_seeds=[0],
        subsample_seeds=[0],
        train={
            "d_model": 32,
            "n_heads": 2,
            "n_layers": 1,
            "d_ff": 64,
            "dropout": 0.0,
            "batch_size": 16,
            "max_steps": 30,
            "eval_every": 15,
            "warmup_steps": 10,
            "dev_beam": 1,
            "final_beam": 2,
            "max_decode_len": 25,
        },
        wug_synthetic={"n_verbs": 2, "seed": 1},
        out_dir=str(out_dir),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def tree_hash(root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestConfig:
    def test_condition_names(self):
        assert condition_name(0.10) == "10L"
        assert condition_name(0.50) == "50L"
        assert condition_name(0.125) == "12.5L"

    def test_rejects_unknown_variant(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny_config(tmp_path, variants=["VANILLA", "BERT"])

    def test_rejects_per_run_train_fields(self, tmp_path):
        with pytest.raises(ConfigError, match="per run"):
            tiny_config(tmp_path, train={"seed": 3})

    def test_rejects_unknown_train_fields(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown train fields"):
            tiny_config(tmp_path, train={"learning_rate": 1.0})

    def test_needs_a_data_source(self, tmp_path):
        with pytest.raises(ConfigError, match="paradigms path or a synthetic"):
            tiny_config(tmp_path, synthetic=None)

    def test_load_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"bogus": 1, "synthetic": {"n_l": 1, "n_nl": 1}}))
        with pytest.raises(ConfigError, match="unknown config keys"):
            ExperimentConfig.load(path)

    def test_hash_ignores_out_dir(self, tmp_path):
        a = tiny_config(tmp_path / "a")
        b = tiny_config(tmp_path / "b")
        assert a.config_hash() == b.config_hash()
        c = tiny_config(tmp_path / "a", base_seed=9)
        assert a.config_hash() != c.config_hash()

    def test_env_overrides_out_dir(self, tmp_path, monkeypatch):
        cfg = tiny_config(tmp_path / "ignored")
        monkeypatch.setenv("MORPHOME_OUT", str(tmp_path / "env"))
        assert cfg.out_root() == tmp_path / "env"

    def test_grid_cells_filters(self, tmp_path):
        cfg = tiny_config(tmp_path, split_seeds=[0, 1])
        cells = grid_cells(cfg, variants=["VANILLA"], split_seed=1)
        assert cells == [(0.5, "VANILLA", "s1_u0")]
        with pytest.raises(ConfigError):
            grid_cells(cfg, conditions=["90L"])
        with pytest.raises(ConfigError):
            grid_cells(cfg, split_seed=7)


class TestInstanceIO:
    def test_roundtrip(self, tmp_path):
        pool = synthesize_paradigms(1, 0, seed=2)
        instances = generate_triples(pool[0])[:8]
        save_instances(instances, tmp_path / "inst.tsv")
        assert load_instances(tmp_path / "inst.tsv") == instances

    def test_rejects_wrong_columns(self, tmp_path):
        (tmp_path / "bad.tsv").write_text("a\tb\n")
        with pytest.raises(Exception, match="columns"):
            load_instances(tmp_path / "bad.tsv")


class TestWugStimuli:
    def test_default_geometry(self):
        items = make_wug_stimuli(n_verbs=15, seed=0)
        assert len(items) == 90
        assert len({i.lemma for i in items}) == 15
        assert all(i.tgt_tag in L_CELLS for i in items)
        assert sum(i.swapped for i in items) == 45

    def test_alternant_is_expected_stem(self):
        for item in make_wug_stimuli(n_verbs=3, seed=5):
            assert item.expected_stem[-1] in "pt"
            # the plain stem appears in the non-L source, the alternant in
            # the L-cell source, regardless of presentation order
            forms = {item.src1_tag: item.src1_form, item.src2_tag: item.src2_form}
            (l_tag,) = [t for t in forms if t in L_CELLS]
            assert forms[l_tag].startswith(item.expected_stem)

    def test_items_survive_save_load_validation(self, tmp_path):
        items = make_wug_stimuli(n_verbs=2, seed=1)
        from morphome.evaluate import save_wug_items

        save_wug_items(items, tmp_path / "wug.tsv")
        assert load_wug_items(tmp_path / "wug.tsv") == items


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One fully executed tiny grid shared by the stage tests."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = tiny_config(root / "out")
    prepare = prepare_experiment(cfg)
    train = train_experiment(cfg)
    predict_experiment(cfg)
    evals = eval_experiment(cfg)
    wugs = wug_experiment(cfg)
    reports = report_experiment(cfg)
    return cfg, prepare, train, evals, wugs, reports


class TestPipeline:
    def test_prepare_layout(self, pipeline):
        cfg, summary, *_ = pipeline
        layout = Layout(cfg.out_root())
        assert layout.paradigms_tsv.exists()
        assert layout.classes_tsv.exists()
        for v in cfg.variants:
            assert layout.vocab_json(v).exists()
        assert layout.split_json(0.5, 0).exists()
        data = layout.data_dir(0.5, "s0_u0")
        for part in ("train", "dev", "test"):
            assert (data / f"instances_{part}.tsv").exists()
        assert summary["conditions"]["50L"]["lemmas"] == 10
        assert summary["wug_items"] == 12
        # splits 7/1/2 of 10 lemmas at 13 triples per lemma
        counts = summary["conditions"]["50L"]["runs"]["s0_u0"]
        assert counts == {"train": 91, "dev": 13, "test": 26}

    def test_classes_cover_sampled_lemmas(self, pipeline):
        cfg, *_ = pipeline
        layout = Layout(cfg.out_root())
        classes = load_classes(layout.classes_tsv)
        assert len(classes) == 12
        assert all(v in ("L", "NL") for _, v in classes.values())

    def test_train_artifacts(self, pipeline):
        cfg, _, train, *_ = pipeline
        assert len(train) == 2
        layout = Layout(cfg.out_root())
        for variant in cfg.variants:
            run_dir = layout.run_dir(0.5, variant, "s0_u0")
            assert (run_dir / "checkpoints" / "best" / "params.npz").exists()
            assert (run_dir / "checkpoints" / "history.json").exists()
            record = json.loads((run_dir / "run.json").read_text())
            assert record["config_hash"] == cfg.config_hash()
            assert record["final_step"] == 30

    def test_train_rerun_skips(self, pipeline):
        cfg, *_ = pipeline
        layout = Layout(cfg.out_root())
        marker = layout.run_dir(0.5, "VANILLA", "s0_u0") / "run.json"
        before = marker.stat().st_mtime_ns
        train_experiment(cfg)
        assert marker.stat().st_mtime_ns == before

    def test_predictions_cover_test_set(self, pipeline):
        cfg, *_ = pipeline
        layout = Layout(cfg.out_root())
        from morphome.evaluate import load_predictions

        records = load_predictions(
            layout.run_dir(0.5, "VANILLA", "s0_u0") / "predictions.tsv"
        )
        assert len(records) == 26
        test_insts = load_instances(
            layout.data_dir(0.5, "s0_u0") / "instances_test.tsv"
        )
        assert [r.gold for r in records] == [i.tgt_form for i in test_insts]

    def test_metrics_shape(self, pipeline):
        _, _, _, evals, *_ = pipeline
        for m in evals:
            assert 0.0 <= m["sequence"]["overall"] <= 1.0
            assert 0.0 <= m["stem"]["overall"] <= 1.0
            assert set(m["sequence_by_class"]) <= {"L", "NL"}
            for cell in m["cells"].values():
                assert 0.0 <= cell["transformed"] <= 1.0

    def test_wug_results(self, pipeline):
        cfg, _, _, _, wugs, _ = pipeline
        assert len(wugs) == 2
        for w in wugs:
            assert w["n_items"] == 12
            assert set(w["matchers"]) == {"exact_form", "stem", "stem_relaxed"}
        layout = Layout(cfg.out_root())
        assert (
            layout.run_dir(0.5, "VANILLA", "s0_u0") / "wug_predictions.tsv"
        ).exists()

    def test_reports(self, pipeline):
        cfg, _, _, _, _, reports = pipeline
        meta, acc = read_report_csv(reports["accuracy"])
        assert meta["config_hash"] == cfg.config_hash()
        assert {r["variant"] for r in acc} == set(cfg.variants)
        assert {r["metric"] for r in acc} == {"sequence", "stem"}
        meta, cells = read_report_csv(reports["cells"])
        assert all(r["cluster"] in ("L", "NL") for r in cells)
        meta, summary = read_report_csv(reports["summary"])
        assert all(r["n_runs"] == "1" for r in summary)
        meta, wug = read_report_csv(reports["wug"])
        assert meta["matcher"] == "stem_relaxed"
        assert all(r["human_acc"] == "" for r in wug)

    def test_report_rerun_identical(self, pipeline):
        cfg, _, _, _, _, reports = pipeline
        before = reports["accuracy"].read_bytes()
        report_experiment(cfg)
        assert reports["accuracy"].read_bytes() == before


class TestPrepareDeterminism:
    def test_rerun_byte_identical(self, tmp_path):
        cfg = tiny_config(tmp_path / "out", variants=["VANILLA"])
        prepare_experiment(cfg)
        layout = Layout(cfg.out_root())
        first = tree_hash(layout.prepare_dir)
        second_root = tree_hash(layout.condition_dir(0.5))
        prepare_experiment(cfg)
        assert tree_hash(layout.prepare_dir) == first
        assert tree_hash(layout.condition_dir(0.5)) == second_root


class TestMissingArtifacts:
    def test_predict_before_train(self, tmp_path):
        cfg = tiny_config(tmp_path / "out", variants=["VANILLA"])
        prepare_experiment(cfg)
        with pytest.raises(MissingArtifact, match="train"):
            predict_experiment(cfg)

    def test_eval_before_predict(self, tmp_path):
        cfg = tiny_config(tmp_path / "out", variants=["VANILLA"])
        prepare_experiment(cfg)
        train_experiment(cfg)
        with pytest.raises(MissingArtifact, match="predict"):
            eval_experiment(cfg)

    def test_train_before_prepare(self, tmp_path):
        cfg = tiny_config(tmp_path / "out", variants=["VANILLA"])
        with pytest.raises(MissingArtifact, match="prepare"):
            train_experiment(cfg)

    def test_report_before_eval(self, tmp_path):
        cfg = tiny_config(tmp_path / "out", variants=["VANILLA"])
        prepare_experiment(cfg)
        with pytest.raises(MissingArtifact, match="eval"):
            report_experiment(cfg)


class TestParallel:
    def test_parallel_train_matches_grid(self, tmp_path):
        cfg = tiny_config(
            tmp_path / "out",
            variants=["VANILLA", "FEATURE_ONEHOT"],
            train={
                "d_model": 32,
                "n_heads": 2,
                "n_layers": 1,
                "d_ff": 64,
                "dropout": 0.0,
                "batch_size": 16,
                "max_steps": 4,
                "eval_every": 4,
                "max_decode_len": 25,
            },
        )
        prepare_experiment(cfg)
        records = train_experiment(cfg, parallel=2)
        assert len(records) == 2
        assert {r["variant"] for r in records} == {"VANILLA", "FEATURE_ONEHOT"}
        assert all(r["config_hash"] == cfg.config_hash() for r in records)


class TestCli:
    def write_config(self, tmp_path) -> Path:
        cfg = tiny_config(tmp_path / "out", variants=["VANILLA"])
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_json()))
        return path

    def test_full_pipeline_exit_codes(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        for cmd in ("prepare", "train", "predict", "eval", "wug", "report"):
            code = main([cmd, "--config", str(cfg_path)])
            assert code == 0, f"{cmd}: {capsys.readouterr()}"
        out = capsys.readouterr().out
        assert "wrote" in out
        assert (tmp_path / "out" / "reports" / "accuracy.csv").exists()

    def test_missing_dependency_exit_code(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        assert main(["predict", "--config", str(cfg_path)]) == 2
        assert "train" in capsys.readouterr().err

    def test_validation_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"bogus": True}))
        assert main(["prepare", "--config", str(path)]) == 1
        assert main(["prepare", "--config", str(tmp_path / "absent.json")]) == 1

    def test_filters(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        assert (
            main(["train", "--config", str(cfg_path), "--variant", "VANILLA",
                  "--condition", "50L", "--seed", "0"])
            == 0
        )
        assert (
            main(["train", "--config", str(cfg_path), "--condition", "90L"]) == 1
        )

    def test_module_entrypoint(self):
        proc = subprocess.run(
            [sys.executable, "-m", "morphome.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "prepare" in proc.stdout
