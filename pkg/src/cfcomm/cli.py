"""Command-line entry points for running and inspecting experiments."""
from __future__ import annotations

import argparse
import os
import sys

from .config import PRESETS, load_config, preset
from .errors import ConfigError, TrainingFault, UsageError
from .training import (aggregate, confusion_matrix, evaluate, run_baseline,
                       train)


def _resolve_config(value: str):
    """A --config value is a preset name or a path to a key=value file."""
    if value in PRESETS:
        return preset(value)
    if not os.path.exists(value):
        raise ConfigError(
            f"--config {value!r} is neither a file nor a preset "
            f"(presets: {', '.join(sorted(PRESETS))})")
    return load_config(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfcomm",
        description="Train and analyse communicating agents with "
                    "counterfactual advantages.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one seeded training run")
    p_train.add_argument("--config", required=True,
                         help="config file path or preset name")
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--log-every", type=int, default=0,
                         help="print a progress line every N epochs")

    p_eval = sub.add_parser("evaluate", help="score a stored checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, required=True)
    p_eval.add_argument("--greedy", action="store_true")
    p_eval.add_argument("--seed", type=int, default=None,
                        help="evaluation episode stream seed")

    p_base = sub.add_parser("baseline", help="run a reference baseline")
    p_base.add_argument("--kind", required=True, choices=["no-comm", "static-comm"])
    p_base.add_argument("--config", required=True)
    p_base.add_argument("--seed", type=int, default=0)
    p_base.add_argument("--out", default=None,
                        help="output directory (default: runs/<kind>_seed<seed>)")
    p_base.add_argument("--log-every", type=int, default=0)

    p_analyze = sub.add_parser("analyze", help="inspect a trained protocol")
    analyze_sub = p_analyze.add_subparsers(dest="analysis", required=True)
    p_conf = analyze_sub.add_parser("confusion",
                                    help="fact-vs-message census")
    p_conf.add_argument("--checkpoint", required=True)
    p_conf.add_argument("--episodes", type=int, default=200)
    p_conf.add_argument("--seed", type=int, default=None)

    p_agg = sub.add_parser("aggregate", help="merge per-seed metrics CSVs")
    p_agg.add_argument("--runs", required=True, help="directory of run subdirs")
    p_agg.add_argument("--out", required=True, help="output CSV path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            result = train(_resolve_config(args.config), args.seed, args.out,
                           log_every=args.log_every)
            print(f"finished {result.epochs_run} epochs"
                  + (" (early stop)" if result.stopped_early else ""))
            print(f"metrics: {result.metrics_path}")
            print(f"final checkpoint: {result.final_checkpoint}")
        elif args.command == "evaluate":
            kwargs = {} if args.seed is None else {"seed": args.seed}
            mean, stderr = evaluate(args.checkpoint, args.episodes,
                                    greedy=args.greedy, **kwargs)
            print(f"mean reward {mean:.4f} +- {stderr:.4f} stderr "
                  f"over {args.episodes} episodes")
        elif args.command == "baseline":
            out = args.out or os.path.join("runs", f"{args.kind}_seed{args.seed}")
            result = run_baseline(_resolve_config(args.config), args.kind,
                                  args.seed, out, log_every=args.log_every)
            print(f"finished {result.epochs_run} epochs; "
                  f"talking-policy updates: {result.comm_updates}")
            print(f"metrics: {result.metrics_path}")
        elif args.command == "analyze":
            kwargs = {} if args.seed is None else {"seed": args.seed}
            matrix = confusion_matrix(args.checkpoint, args.episodes, **kwargs)
            print(matrix.render())
        elif args.command == "aggregate":
            path = aggregate(args.runs, args.out)
            print(f"wrote {path}")
    except (ConfigError, UsageError, TrainingFault, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
