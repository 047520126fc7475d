"""Command-line entry points.

    cnalab train --config F [--record-trajectory]
    cnalab suite --config F [--jobs N]
    cnalab landscape --run DIR [--resolution R] [--out DIR]
    cnalab report --runs GLOB [--out DIR]
    cnalab metrics --checkpoint F --data SPEC

Exit codes: 0 ok, 2 config parse error, 3 data/format error, 4 numeric
failure.
"""

import argparse
import json
import sys

from .config import load_config
from .errors import (ConfigError, ConvergenceError, DataError, FormatError,
                     NumericError)


def cmd_train(args):
    cfg = load_config(args.config)
    if args.record_trajectory:
        cfg.record_trajectory = True
    from .harness import run_training
    run_training(cfg)
    return 0


def cmd_suite(args):
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            suite = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"suite config not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    from .harness import make_report, run_suite
    summary, output_root = run_suite(suite, jobs=args.jobs)
    try:
        make_report(f"{output_root}/**/record_epoch*.json", output_root)
    except DataError as exc:
        print(f"[suite] report skipped: {exc}", file=sys.stderr)
    return 0


def cmd_landscape(args):
    from .harness import make_landscape
    make_landscape(args.run, resolution=args.resolution, out_dir=args.out)
    return 0


def cmd_report(args):
    from .harness import make_report
    make_report(args.runs, args.out, group_by=args.group_by)
    return 0


def cmd_metrics(args):
    from .checkpoint import load_checkpoint
    from .config import MetricOptions, resolve_datasets
    from .metrics import gap_metric_set

    ck = load_checkpoint(args.checkpoint)
    try:
        spec = json.loads(args.data)
    except json.JSONDecodeError:
        with open(args.data, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    train_ds, test_ds = resolve_datasets(spec)
    opts = MetricOptions.from_dict(spec.get("metrics"))
    metrics = gap_metric_set(ck.net, train_ds, test_ds, opts.entropy,
                             opts.margin_percentile, opts.cna_split)
    print(json.dumps(metrics.to_dict(), indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cnalab",
                                     description="activation-complexity metric laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one experiment cell")
    p.add_argument("--config", required=True)
    p.add_argument("--record-trajectory", action="store_true",
                   help="record probe activations every minibatch update")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("suite", help="run a dataset x corruption x architecture grid")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("landscape", help="PCA trajectory + metric landscape of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("report", help="metric-vs-gap correlation report")
    p.add_argument("--runs", required=True, help="glob matching RunRecord JSON files")
    p.add_argument("--out", default="report")
    p.add_argument("--group-by", choices=("arch", "dataset"), default="arch")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("metrics", help="one-shot metric set for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset spec, JSON file or literal")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ConvergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
