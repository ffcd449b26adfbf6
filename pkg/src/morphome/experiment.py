"""Experiment orchestration over an outputs tree.

Layout: <out>/prepare/ holds the corpus, classes, vocabs, splits, and
per-run instance TSVs; <out>/<condition>/<variant>/<run_id>/ holds each
run's checkpoints, predictions, and metrics; <out>/reports/ holds the
aggregated CSVs. Every stage is idempotent: artifacts carry the experiment
config hash and are only rebuilt when it changes.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (
    AlternationSpec,
    CorpusError,
    Paradigm,
    ReinflectionInstance,
    classify_verb,
    default_suffix_table,
    generate_triples,
    load_paradigms,
    sample_condition,
    save_paradigms,
    split_lemmas,
    subsample_triples,
    synthesize_paradigms,
)
from .encoding import VARIANTS, Vocab, build_vocab, get_variant
from .evaluate import (
    CellScores,
    WugItem,
    aggregate_cell_scores,
    human_cell_accuracy,
    kmeans_cells,
    load_human_responses,
    load_predictions,
    load_wug_items,
    make_records,
    mean_sd,
    paradigm_shape,
    save_predictions,
    save_wug_items,
    score_wug_predictions,
    sequence_accuracy,
    stem_accuracy,
    write_report_csv,
)
from .tags import ALL_CELLS, CellTag
from .train import TrainConfig, load_model, predict_instances, train_run
from .util import atomic_write_text, derive_seed, read_json, stable_hash, write_json


class ConfigError(ValueError):
    pass


class MissingArtifact(RuntimeError):
    """An upstream artifact is absent; .command names the stage to run."""

    def __init__(self, message: str, command: str):
        super().__init__(f"{message} (run `morphome {command}` first)")
        self.command = command


def condition_name(fraction: float) -> str:
    return f"{fraction * 100:g}L"


@dataclass
class ExperimentConfig:
    paradigms: str | None = None
    synthetic: dict | None = None
    conditions: list[float] = field(default_factory=lambda: [0.10, 0.50, 0.90])
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    sample_total: int = 332
    triple_fraction: float = 0.25
    split_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    subsample_seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    train: dict = field(default_factory=dict)
    out_dir: str = "outputs"
    base_seed: int = 0
    wug_stimuli: str | None = None
    wug_synthetic: dict | None = None
    human_responses: str | None = None

    def __post_init__(self):
        if not self.conditions:
            raise ConfigError("no conditions")
        for f in self.conditions:
            if not 0.0 <= f <= 1.0:
                raise ConfigError(f"condition fraction {f} outside [0, 1]")
        for v in self.variants:
            try:
                get_variant(v)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.paradigms is None and self.synthetic is None:
            raise ConfigError("need either a paradigms path or a synthetic block")
        if not self.split_seeds or not self.subsample_seeds:
            raise ConfigError("need at least one split seed and one subsample seed")
        bad = set(self.train) - set(TrainConfig.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown train fields: {sorted(bad)}")
        for filled in ("variant", "seed"):
            if filled in self.train:
                raise ConfigError(f"train.{filled} is assigned per run, drop it")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        obj = read_json(path)
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        bad = set(obj) - known
        if bad:
            raise ConfigError(f"{path}: unknown config keys: {sorted(bad)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def config_hash(self) -> str:
        """Identity of the experiment content: everything except where the
        outputs land. Referenced input files contribute their own content
        hash via the prepare manifest."""
        obj = self.to_json()
        obj.pop("out_dir")
        return stable_hash(obj)[:16]

    def out_root(self) -> Path:
        return Path(os.environ.get("MORPHOME_OUT") or self.out_dir)

    def runs(self) -> list[tuple[int, int]]:
        return [(s, u) for s in self.split_seeds for u in self.subsample_seeds]

    def train_config(self, variant: str, cond: float, run_id: str) -> TrainConfig:
        seed = derive_seed(self.base_seed, condition_name(cond), variant, run_id)
        return TrainConfig(variant=variant, seed=seed, **self.train)


def run_id_for(split_seed: int, subsample_seed: int) -> str:
    return f"s{split_seed}_u{subsample_seed}"


@dataclass
class Layout:
    root: Path

    @property
    def prepare_dir(self) -> Path:
        return self.root / "prepare"

    @property
    def paradigms_tsv(self) -> Path:
        return self.prepare_dir / "paradigms.tsv"

    @property
    def classes_tsv(self) -> Path:
        return self.prepare_dir / "classes.tsv"

    @property
    def manifest_json(self) -> Path:
        return self.prepare_dir / "manifest.json"

    @property
    def wug_tsv(self) -> Path:
        return self.prepare_dir / "wug_stimuli.tsv"

    def vocab_json(self, variant: str) -> Path:
        return self.prepare_dir / f"vocab_{variant}.json"

    def condition_dir(self, cond: float) -> Path:
        return self.root / condition_name(cond)

    def split_json(self, cond: float, split_seed: int) -> Path:
        return self.condition_dir(cond) / "_data" / f"split_s{split_seed}.json"

    def data_dir(self, cond: float, run_id: str) -> Path:
        return self.condition_dir(cond) / "_data" / run_id

    def run_dir(self, cond: float, variant: str, run_id: str) -> Path:
        return self.condition_dir(cond) / variant / run_id

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"


INSTANCE_COLUMNS = (
    "lemma",
    "src1_tag",
    "src1_form",
    "src2_tag",
    "src2_form",
    "tgt_tag",
    "tgt_form",
)


def save_instances(instances: list[ReinflectionInstance], path) -> None:
    lines = ["\t".join(INSTANCE_COLUMNS)]
    for i in instances:
        lines.append(
            "\t".join(
                (
                    i.lemma,
                    i.src1_tag.unimorph(),
                    i.src1_form,
                    i.src2_tag.unimorph(),
                    i.src2_form,
                    i.tgt_tag.unimorph(),
                    i.tgt_form,
                )
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_instances(path) -> list[ReinflectionInstance]:
    out = []
    with open(path, encoding="utf-8") as f:
        header: list[str] | None = None
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split("\t")
                if tuple(header) != INSTANCE_COLUMNS:
                    raise CorpusError(f"{path}:{lineno}: unexpected columns {header}")
                continue
            parts = line.split("\t")
            if len(parts) != len(INSTANCE_COLUMNS):
                raise CorpusError(f"{path}:{lineno}: expected {len(INSTANCE_COLUMNS)} fields")
            lemma, t1, f1, t2, f2, tt, tf = parts
            out.append(
                ReinflectionInstance(
                    lemma=lemma,
                    src1_form=f1,
                    src1_tag=CellTag.parse(t1),
                    src2_form=f2,
                    src2_tag=CellTag.parse(t2),
                    tgt_tag=CellTag.parse(tt),
                    tgt_form=tf,
                )
            )
    return out


def save_classes(paradigms: list[Paradigm], path) -> None:
    table = default_suffix_table()
    lines = ["lemma\tconj_class\tverb_class"]
    for p in sorted(paradigms, key=lambda p: p.lemma):
        lines.append(f"{p.lemma}\t{p.conj_class}\t{classify_verb(p, table)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_classes(path) -> dict[str, tuple[str, str]]:
    out: dict[str, tuple[str, str]] = {}
    with open(path, encoding="utf-8") as f:
        next(f)
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            lemma, conj, vclass = line.split("\t")
            out[lemma] = (conj, vclass)
    return out


def _resolve_paradigms(cfg: ExperimentConfig, synthetic: bool) -> list[Paradigm]:
    if synthetic or cfg.paradigms is None:
        if cfg.synthetic is None:
            raise ConfigError("synthetic data requested but config has no synthetic block")
        block = dict(cfg.synthetic)
        n_l = block.pop("n_l")
        n_nl = block.pop("n_nl")
        seed = block.pop("seed", cfg.base_seed)
        spec = AlternationSpec(**block) if block else None
        return synthesize_paradigms(n_l, n_nl, spec, seed=seed)
    if not Path(cfg.paradigms).exists():
        raise ConfigError(f"paradigm file not found: {cfg.paradigms}")
    return load_paradigms(cfg.paradigms)


def make_wug_stimuli(
    n_verbs: int = 15,
    seed: int = 0,
    final_map: dict[str, str] | None = None,
    conj_class: str = "AR",
) -> list[WugItem]:
    """Nonce stimuli with a stem-final alternation absent from the training
    recipe (fricative to stop by default). Each verb contributes the three
    probed target cells under both source orderings: one source shows the
    plain stem in a non-L cell, the other the alternant in an L-cell."""
    spec = AlternationSpec(final_map=final_map or {"f": "p", "s": "t"})
    paradigms = synthesize_paradigms(n_verbs, 0, spec, seed=derive_seed(seed, "wug"))
    table = spec.table()
    src_plain = CellTag("IND", 3, "SG")
    src_alt = CellTag("SBJV", 1, "PL")
    targets = (CellTag("IND", 1, "SG"), CellTag("SBJV", 2, "SG"), CellTag("SBJV", 3, "SG"))
    items = []
    for p in paradigms:
        plain_form = p.forms[src_plain]
        alt_form = p.forms[src_alt]
        alt_stem = alt_form[: -len(table.canonical_suffix(p.conj_class, src_alt))]
        for tgt in targets:
            for swapped in (False, True):
                first = (alt_form, src_alt) if swapped else (plain_form, src_plain)
                second = (plain_form, src_plain) if swapped else (alt_form, src_alt)
                items.append(
                    WugItem(
                        lemma=p.lemma,
                        conj_class=p.conj_class,
                        src1_form=first[0],
                        src1_tag=first[1],
                        src2_form=second[0],
                        src2_tag=second[1],
                        tgt_tag=tgt,
                        expected_stem=alt_stem,
                        swapped=swapped,
                    )
                )
    return items


def _filter(values, selected):
    if selected is None:
        return list(values)
    keep = [v for v in values if v in selected]
    if not keep:
        raise ConfigError(f"filter {selected!r} matches none of {list(values)}")
    return keep


def _parse_condition_filter(cfg: ExperimentConfig, names: list[str] | None):
    if names is None:
        return None
    by_name = {condition_name(c): c for c in cfg.conditions}
    out = []
    for n in names:
        if n not in by_name:
            raise ConfigError(f"unknown condition {n!r} (have {sorted(by_name)})")
        out.append(by_name[n])
    return out


def prepare_experiment(cfg: ExperimentConfig, synthetic: bool = False) -> dict:
    """Write the corpus, class table, per-variant vocabs, per-condition
    splits, and per-run instance TSVs. Deterministic: a rerun with the same
    config reproduces every byte."""
    layout = Layout(cfg.out_root())
    paradigms = _resolve_paradigms(cfg, synthetic)
    table = default_suffix_table()
    by_lemma = {p.lemma: p for p in paradigms}
    classes = {p.lemma: classify_verb(p, table) for p in paradigms}

    layout.prepare_dir.mkdir(parents=True, exist_ok=True)
    save_paradigms(paradigms, layout.paradigms_tsv)
    save_classes(paradigms, layout.classes_tsv)

    forms = [f for p in paradigms for f in p.forms.values()]
    for vname in cfg.variants:
        vocab = build_vocab(forms, get_variant(vname))
        write_json(layout.vocab_json(vname), vocab.to_json())

    summary: dict = {
        "config_hash": cfg.config_hash(),
        "paradigms": len(paradigms),
        "l_shaped": sum(1 for v in classes.values() if v == "L"),
        "conditions": {},
    }
    for cond in cfg.conditions:
        lemmas = sample_condition(
            paradigms,
            cond,
            total=cfg.sample_total,
            seed=derive_seed(cfg.base_seed, "sample", condition_name(cond)),
            suffix_table=table,
        )
        cond_summary = {"lemmas": len(lemmas), "runs": {}}
        for split_seed in cfg.split_seeds:
            split = split_lemmas(
                lemmas, classes, seed=split_seed, condition=cond
            )
            write_json(layout.split_json(cond, split_seed), split.to_json())
            for sub_seed in cfg.subsample_seeds:
                run_id = run_id_for(split_seed, sub_seed)
                data_dir = layout.data_dir(cond, run_id)
                n_inst = {}
                for part_name, part in (
                    ("train", split.train),
                    ("dev", split.dev),
                    ("test", split.test),
                ):
                    instances = []
                    for lemma in part:
                        triples = generate_triples(by_lemma[lemma])
                        instances.extend(
                            subsample_triples(
                                triples, cfg.triple_fraction, seed=sub_seed
                            )
                        )
                    save_instances(instances, data_dir / f"instances_{part_name}.tsv")
                    n_inst[part_name] = len(instances)
                cond_summary["runs"][run_id] = n_inst
        summary["conditions"][condition_name(cond)] = cond_summary

    if cfg.wug_stimuli:
        items = load_wug_items(cfg.wug_stimuli, table)
        save_wug_items(items, layout.wug_tsv)
        summary["wug_items"] = len(items)
    elif cfg.wug_synthetic:
        items = make_wug_stimuli(**cfg.wug_synthetic)
        save_wug_items(items, layout.wug_tsv)
        summary["wug_items"] = len(items)

    write_json(layout.manifest_json, summary)
    return summary


def _require(path: Path, what: str, command: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} missing at {path}", command)
    return path


def _load_vocab(layout: Layout, variant: str) -> Vocab:
    path = _require(layout.vocab_json(variant), f"vocab for {variant}", "prepare")
    return Vocab.from_json(read_json(path))


def _run_done(run_dir: Path, cfg_hash: str) -> bool:
    run_json = run_dir / "run.json"
    if not run_json.exists():
        return False
    try:
        return read_json(run_json).get("config_hash") == cfg_hash
    except (OSError, ValueError):
        return False


def train_one_run(
    cfg: ExperimentConfig, cond: float, variant: str, run_id: str, log=None
) -> dict:
    """Train a single grid cell if its artifacts are stale or absent."""
    layout = Layout(cfg.out_root())
    run_dir = layout.run_dir(cond, variant, run_id)
    cfg_hash = cfg.config_hash()
    if _run_done(run_dir, cfg_hash):
        return read_json(run_dir / "run.json")

    data_dir = layout.data_dir(cond, run_id)
    train_insts = load_instances(
        _require(data_dir / "instances_train.tsv", "training instances", "prepare")
    )
    dev_insts = load_instances(data_dir / "instances_dev.tsv")
    vocab = _load_vocab(layout, variant)
    tcfg = cfg.train_config(variant, cond, run_id)
    _, result = train_run(
        train_insts,
        dev_insts,
        vocab,
        tcfg,
        out_dir=run_dir / "checkpoints",
        log=log,
    )
    record = {
        "config_hash": cfg_hash,
        "condition": condition_name(cond),
        "variant": variant,
        "run": run_id,
        "train_config": tcfg.to_json(),
        "best_step": result.best_step,
        "best_dev_acc": result.best_dev_acc,
        "final_step": result.final_step,
        "wall_seconds": round(result.wall_seconds, 2),
    }
    write_json(run_dir / "run.json", record)
    return record


def _train_worker(args) -> tuple[str, str, str]:
    cfg_json, cond, variant, run_id = args
    cfg = ExperimentConfig(**cfg_json)
    train_one_run(cfg, cond, variant, run_id)
    return (condition_name(cond), variant, run_id)


def grid_cells(
    cfg: ExperimentConfig,
    conditions: list[str] | None = None,
    variants: list[str] | None = None,
    split_seed: int | None = None,
) -> list[tuple[float, str, str]]:
    conds = _filter(cfg.conditions, _parse_condition_filter(cfg, conditions))
    variants = _filter(cfg.variants, variants)
    runs = [
        run_id_for(s, u)
        for s, u in cfg.runs()
        if split_seed is None or s == split_seed
    ]
    if not runs:
        raise ConfigError(f"no runs with split seed {split_seed}")
    return [(c, v, r) for c in conds for v in variants for r in runs]


def train_experiment(
    cfg: ExperimentConfig,
    conditions: list[str] | None = None,
    variants: list[str] | None = None,
    split_seed: int | None = None,
    parallel: int = 1,
    log=None,
) -> list[dict]:
    cells = grid_cells(cfg, conditions, variants, split_seed)
    if parallel <= 1:
        return [train_one_run(cfg, c, v, r, log=log) for c, v, r in cells]
    cfg_hash = cfg.config_hash()
    layout = Layout(cfg.out_root())
    pending = [
        (cfg.to_json(), c, v, r)
        for c, v, r in cells
        if not _run_done(layout.run_dir(c, v, r), cfg_hash)
    ]
    with concurrent.futures.ProcessPoolExecutor(max_workers=parallel) as pool:
        for done in pool.map(_train_worker, pending):
            if log:
                log({"done": "/".join(done)})
    return [read_json(layout.run_dir(c, v, r) / "run.json") for c, v, r in cells]


def predict_experiment(
    cfg: ExperimentConfig,
    conditions: list[str] | None = None,
    variants: list[str] | None = None,
    split_seed: int | None = None,
) -> list[Path]:
    """Decode the test instances of every trained run into predictions.tsv."""
    layout = Layout(cfg.out_root())
    cfg_hash = cfg.config_hash()
    classes = load_classes(_require(layout.classes_tsv, "class table", "prepare"))
    written = []
    for cond, variant, run_id in grid_cells(cfg, conditions, variants, split_seed):
        run_dir = layout.run_dir(cond, variant, run_id)
        out_path = run_dir / "predictions.tsv"
        if out_path.exists():
            head = out_path.read_text(encoding="utf-8").split("\n", 1)[0]
            if head == f"# config_hash={cfg_hash}":
                written.append(out_path)
                continue
        best = run_dir / "checkpoints" / "best"
        if not _run_done(run_dir, cfg_hash):
            raise MissingArtifact(
                f"no completed training for {condition_name(cond)}/{variant}/{run_id}",
                "train",
            )
        _require(best / "params.npz", "best checkpoint", "train")
        model, vocab, _ = load_model(best)
        test_insts = load_instances(
            _require(
                layout.data_dir(cond, run_id) / "instances_test.tsv",
                "test instances",
                "prepare",
            )
        )
        tcfg = cfg.train_config(variant, cond, run_id)
        preds = predict_instances(
            model,
            vocab,
            test_insts,
            beam_size=tcfg.final_beam,
            max_len=tcfg.max_decode_len,
        )
        records = make_records(test_insts, preds, classes)
        save_predictions(
            records,
            out_path,
            meta={
                "config_hash": cfg_hash,
                "condition": condition_name(cond),
                "variant": variant,
                "run": run_id,
                "beam": tcfg.final_beam,
            },
        )
        written.append(out_path)
    return written


def eval_one_run(run_dir: Path, cfg_hash: str) -> dict:
    pred_path = _require(run_dir / "predictions.tsv", "predictions", "predict")
    records = load_predictions(pred_path)
    table = default_suffix_table()
    shape = paradigm_shape(records, table)
    metrics = {
        "config_hash": cfg_hash,
        "n_records": len(records),
        "sequence": sequence_accuracy(records, "overall"),
        "sequence_by_class": sequence_accuracy(records, "verb_class"),
        "stem": stem_accuracy(records, table, "overall"),
        "stem_by_class": stem_accuracy(records, table, "verb_class"),
        "cells": {
            c.label: {
                "raw": shape.raw[c],
                "transformed": shape.transformed[c],
                "count": shape.counts[c],
            }
            for c in ALL_CELLS
            if c in shape.raw
        },
        "missing_cells": [c.label for c in shape.missing],
    }
    write_json(run_dir / "metrics.json", metrics)
    return metrics


def eval_experiment(
    cfg: ExperimentConfig,
    conditions: list[str] | None = None,
    variants: list[str] | None = None,
    split_seed: int | None = None,
) -> list[dict]:
    layout = Layout(cfg.out_root())
    cfg_hash = cfg.config_hash()
    out = []
    for cond, variant, run_id in grid_cells(cfg, conditions, variants, split_seed):
        run_dir = layout.run_dir(cond, variant, run_id)
        metrics_path = run_dir / "metrics.json"
        if metrics_path.exists():
            cached = read_json(metrics_path)
            if cached.get("config_hash") == cfg_hash:
                out.append(cached)
                continue
        out.append(eval_one_run(run_dir, cfg_hash))
    return out


def wug_experiment(
    cfg: ExperimentConfig,
    conditions: list[str] | None = None,
    variants: list[str] | None = None,
    split_seed: int | None = None,
) -> list[dict]:
    """Decode the nonce stimuli with every trained run and score all three
    matchers; writes wug.json and wug_predictions.tsv per run."""
    layout = Layout(cfg.out_root())
    cfg_hash = cfg.config_hash()
    table = default_suffix_table()
    items = load_wug_items(
        _require(layout.wug_tsv, "wug stimuli", "prepare"), table
    )
    out = []
    for cond, variant, run_id in grid_cells(cfg, conditions, variants, split_seed):
        run_dir = layout.run_dir(cond, variant, run_id)
        wug_path = run_dir / "wug.json"
        if wug_path.exists():
            cached = read_json(wug_path)
            if cached.get("config_hash") == cfg_hash:
                out.append(cached)
                continue
        if not _run_done(run_dir, cfg_hash):
            raise MissingArtifact(
                f"no completed training for {condition_name(cond)}/{variant}/{run_id}",
                "train",
            )
        model, vocab, _ = load_model(run_dir / "checkpoints" / "best")
        tcfg = cfg.train_config(variant, cond, run_id)
        preds = predict_instances(
            model,
            vocab,
            items,
            beam_size=tcfg.final_beam,
            max_len=tcfg.max_decode_len,
        )
        result = {
            "config_hash": cfg_hash,
            "condition": condition_name(cond),
            "variant": variant,
            "run": run_id,
            "n_items": len(items),
            "matchers": {},
        }
        for matcher in ("exact_form", "stem", "stem_relaxed"):
            report = score_wug_predictions(items, preds, matcher, table)
            result["matchers"][matcher] = {
                "overall": report.overall,
                "per_cell": {c.label: v for c, v in report.per_cell.items()},
            }
        lines = ["lemma\ttgt_tag\tordering\texpected_stem\tpred"]
        for item, pred in zip(items, preds):
            lines.append(
                f"{item.lemma}\t{item.tgt_tag.unimorph()}\t"
                f"{'swapped' if item.swapped else 'given'}\t{item.expected_stem}\t{pred}"
            )
        atomic_write_text(run_dir / "wug_predictions.tsv", "\n".join(lines) + "\n")
        write_json(wug_path, result)
        out.append(result)
    return out


ACCURACY_METRICS = (
    ("sequence", "sequence", "overall"),
    ("sequence_by_class", "sequence", None),
    ("stem", "stem", "overall"),
    ("stem_by_class", "stem", None),
)


def report_experiment(
    cfg: ExperimentConfig,
    conditions: list[str] | None = None,
    variants: list[str] | None = None,
) -> dict[str, Path]:
    """Aggregate per-run metrics into the report CSVs: per-run accuracy
    rows, mean/SD summary, per-cell shape with cluster labels, and the wug
    table when stimuli were evaluated."""
    layout = Layout(cfg.out_root())
    cfg_hash = cfg.config_hash()
    conds = _filter(cfg.conditions, _parse_condition_filter(cfg, conditions))
    variants_ = _filter(cfg.variants, variants)
    meta = {"config_hash": cfg_hash}

    acc_rows, summary_rows, cell_rows, wug_rows = [], [], [], []
    human_acc: dict[CellTag, float] | None = None
    if cfg.human_responses:
        items = load_wug_items(_require(layout.wug_tsv, "wug stimuli", "prepare"))
        responses = load_human_responses(cfg.human_responses)
        human_acc = human_cell_accuracy(responses, items, matcher="stem_relaxed")

    for cond in conds:
        cname = condition_name(cond)
        for variant in variants_:
            metrics_by_run = {}
            wug_by_run = {}
            for split_seed, sub_seed in cfg.runs():
                run_id = run_id_for(split_seed, sub_seed)
                run_dir = layout.run_dir(cond, variant, run_id)
                m_path = run_dir / "metrics.json"
                if not m_path.exists():
                    raise MissingArtifact(
                        f"metrics missing for {cname}/{variant}/{run_id}", "eval"
                    )
                metrics_by_run[run_id] = read_json(m_path)
                w_path = run_dir / "wug.json"
                if w_path.exists():
                    wug_by_run[run_id] = read_json(w_path)

            by_metric: dict[tuple[str, str], list[float]] = {}
            for run_id, m in metrics_by_run.items():
                for key, metric, group in ACCURACY_METRICS:
                    groups = m[key] if group is None else {group: m[key][group]}
                    for g, value in groups.items():
                        acc_rows.append(
                            {
                                "variant": variant,
                                "condition": cname,
                                "run": run_id,
                                "metric": metric,
                                "group": g,
                                "value": f"{value:.6f}",
                            }
                        )
                        by_metric.setdefault((metric, g), []).append(value)
            for (metric, g), values in sorted(by_metric.items()):
                mu, sd = mean_sd(values)
                summary_rows.append(
                    {
                        "variant": variant,
                        "condition": cname,
                        "metric": metric,
                        "group": g,
                        "mean": f"{mu:.6f}",
                        "sd": f"{sd:.6f}",
                        "n_runs": len(values),
                    }
                )

            shapes = [
                CellScores(
                    raw={},
                    transformed={
                        CellTag.parse(k): v["transformed"]
                        for k, v in m["cells"].items()
                    },
                    counts={},
                )
                for m in metrics_by_run.values()
            ]
            agg = aggregate_cell_scores(shapes)
            raw_means = {}
            for c in ALL_CELLS:
                vals = [
                    m["cells"][c.label]["raw"]
                    for m in metrics_by_run.values()
                    if c.label in m["cells"]
                ]
                if vals:
                    raw_means[c] = sum(vals) / len(vals)
            assignment = kmeans_cells(agg) if agg else None
            for c in ALL_CELLS:
                if c not in agg:
                    continue
                cell_rows.append(
                    {
                        "variant": variant,
                        "condition": cname,
                        "cell": c.label,
                        "raw": f"{raw_means[c]:.6f}",
                        "transformed": f"{agg[c]:.6f}",
                        "cluster": assignment.labels[c],
                    }
                )

            if wug_by_run:
                per_cell: dict[str, list[float]] = {}
                for w in wug_by_run.values():
                    for cell_label, v in w["matchers"]["stem_relaxed"]["per_cell"].items():
                        per_cell.setdefault(cell_label, []).append(v)
                for cell_label, values in sorted(per_cell.items()):
                    h = ""
                    if human_acc is not None:
                        cell = CellTag.parse(cell_label)
                        if cell in human_acc:
                            h = f"{human_acc[cell]:.6f}"
                    wug_rows.append(
                        {
                            "variant": variant,
                            "condition": cname,
                            "cell": cell_label,
                            "model_acc": f"{mean_sd(values)[0]:.6f}",
                            "human_acc": h,
                        }
                    )

    paths = {}
    write_report_csv(
        layout.reports_dir / "accuracy.csv",
        ["variant", "condition", "run", "metric", "group", "value"],
        acc_rows,
        meta,
    )
    paths["accuracy"] = layout.reports_dir / "accuracy.csv"
    write_report_csv(
        layout.reports_dir / "summary.csv",
        ["variant", "condition", "metric", "group", "mean", "sd", "n_runs"],
        summary_rows,
        meta,
    )
    paths["summary"] = layout.reports_dir / "summary.csv"
    write_report_csv(
        layout.reports_dir / "cells.csv",
        ["variant", "condition", "cell", "raw", "transformed", "cluster"],
        cell_rows,
        meta,
    )
    paths["cells"] = layout.reports_dir / "cells.csv"
    if wug_rows:
        write_report_csv(
            layout.reports_dir / "wug.csv",
            ["variant", "condition", "cell", "model_acc", "human_acc"],
            wug_rows,
            {**meta, "matcher": "stem_relaxed"},
        )
        paths["wug"] = layout.reports_dir / "wug.csv"
    return paths
