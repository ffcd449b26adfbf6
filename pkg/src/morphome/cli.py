"""Command-line pipeline: prepare, train, predict, eval, wug, report.

Exit codes: 0 success, 1 validation error, 2 missing upstream artifact,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .corpus import CorpusError
from .evaluate import EvalError
from .experiment import (
    ConfigError,
    ExperimentConfig,
    MissingArtifact,
    eval_experiment,
    predict_experiment,
    prepare_experiment,
    report_experiment,
    train_experiment,
    wug_experiment,
)
from .numcore.adam import DivergedError
from .train import TrainingDiverged


def _add_common(sp, with_seed: bool = True) -> None:
    sp.add_argument("--config", required=True, help="experiment config JSON")
    sp.add_argument(
        "--condition",
        action="append",
        metavar="NAME",
        help="restrict to a condition by name, e.g. 10L (repeatable)",
    )
    sp.add_argument(
        "--variant", action="append", metavar="NAME", help="restrict to a variant (repeatable)"
    )
    if with_seed:
        sp.add_argument(
            "--seed", type=int, default=None, help="restrict to one split seed"
        )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="morphome",
        description="Train and analyze re-inflection transformers on "
        "frequency-controlled verb paradigms.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="build corpus, splits, vocabs, instances")
    sp.add_argument("--config", required=True, help="experiment config JSON")
    sp.add_argument(
        "--synthetic",
        action="store_true",
        help="synthesize the paradigm corpus even if the config names a file",
    )

    sp = sub.add_parser("train", help="train the run grid")
    _add_common(sp)
    sp.add_argument(
        "--parallel", type=int, default=1, metavar="N", help="worker processes"
    )

    _add_common(sub.add_parser("predict", help="decode test instances"))
    _add_common(sub.add_parser("eval", help="score predictions into metrics.json"))
    _add_common(sub.add_parser("wug", help="decode and score nonce stimuli"))
    _add_common(sub.add_parser("report", help="aggregate metrics into CSVs"), with_seed=False)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.command == "prepare":
            summary = prepare_experiment(cfg, synthetic=args.synthetic)
            print(f"prepared {summary['paradigms']} paradigms "
                  f"({summary['l_shaped']} L-shaped), hash {summary['config_hash']}")
            for cname, cond in summary["conditions"].items():
                n_runs = len(cond["runs"])
                print(f"  {cname}: {cond['lemmas']} lemmas, {n_runs} runs")
            if "wug_items" in summary:
                print(f"  wug stimuli: {summary['wug_items']} items")
        elif args.command == "train":
            records = train_experiment(
                cfg,
                conditions=args.condition,
                variants=args.variant,
                split_seed=args.seed,
                parallel=args.parallel,
                log=lambda rec: print(f"    {rec}"),
            )
            for r in records:
                print(
                    f"{r['condition']}/{r['variant']}/{r['run']}: "
                    f"best dev {r['best_dev_acc']:.4f} at step {r['best_step']}"
                )
        elif args.command == "predict":
            for path in predict_experiment(
                cfg, args.condition, args.variant, args.seed
            ):
                print(f"wrote {path}")
        elif args.command == "eval":
            for m in eval_experiment(cfg, args.condition, args.variant, args.seed):
                print(
                    f"n={m['n_records']} seq={m['sequence']['overall']:.4f} "
                    f"stem={m['stem']['overall']:.4f}"
                )
        elif args.command == "wug":
            for w in wug_experiment(cfg, args.condition, args.variant, args.seed):
                stem = w["matchers"]["stem_relaxed"]["overall"]
                print(f"{w['condition']}/{w['variant']}/{w['run']}: relaxed stem {stem:.4f}")
        elif args.command == "report":
            for name, path in report_experiment(
                cfg, args.condition, args.variant
            ).items():
                print(f"wrote {name}: {path}")
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, DivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, CorpusError, EvalError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
