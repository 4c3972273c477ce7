"""Command line interface: ``setmlp {train,bench-evolution,extreme,eval,synth}``.

On failure a single machine-readable line ``error: {"type": ..., "message": ...}``
is written to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, ExperimentConfig, read_config
from .data import save_binary, save_csv, synth_hdls
from .experiment import (
    REFERENCE_EXTREME_WIDTHS,
    bench_evolution,
    format_gib,
    run_eval,
    run_extreme,
    run_train,
    sizes_for_bench,
)


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI experiment config; flags override its values")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--data", dest="data_path", help="CSV or .sevd dataset (default: synthetic)")
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--has-header", dest="has_header", action="store_true", default=None)
    for name, typ in [("synth-samples", int), ("synth-features", int), ("synth-classes", int),
                      ("synth-informative", int), ("synth-noise", float), ("synth-class-sep", float),
                      ("synth-seed", int), ("train-fraction", float), ("split-seed", int),
                      ("epsilon", float), ("zeta", float), ("regrow-sigma", float),
                      ("learning-rate", float), ("momentum", float), ("weight-decay", float),
                      ("batch-size", int), ("epochs", int), ("dropout-rate", float),
                      ("trials", int), ("seed", int), ("parallel-trials", int)]:
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ)
    p.add_argument("--hidden", help="hidden widths, e.g. '1000,1000'")
    p.add_argument("--scaling", choices=["minmax", "zscore", "none"])
    p.add_argument("--no-stratify", dest="stratified", action="store_false", default=None)
    p.add_argument("--no-evolution", dest="evolution", action="store_false", default=None,
                   help="freeze the initial topology (fixed-probability baseline)")
    p.add_argument("--evolution-impl", choices=["v1", "v2"])
    p.add_argument("--activation", dest="hidden_activation", choices=["relu", "sigmoid"])
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--output-dir", "-o", dest="output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="setmlp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_train_args(sub.add_parser("train", help="train SET-MLP / fixed-topology MLP over trials"))

    b = sub.add_parser("bench-evolution", help="time both evolution implementations")
    b.add_argument("--sizes", default="500,2000,8000,15000")
    b.add_argument("--epsilon", type=float, default=10.0)
    b.add_argument("--zeta", type=float, default=0.3)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--output", "-o", default="bench.csv")

    e = sub.add_parser("extreme", help="build and train a very large sparse MLP")
    e.add_argument("--widths", default=",".join(map(str, REFERENCE_EXTREME_WIDTHS)))
    e.add_argument("--epsilon", type=float, default=10.0)
    e.add_argument("--epochs", type=int, default=1)
    e.add_argument("--samples", type=int, default=100)
    e.add_argument("--learning-rate", type=float, default=0.05)
    e.add_argument("--batch-size", type=int, default=5)
    e.add_argument("--dropout-rate", type=float, default=0.4)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--memory-limit-gb", type=float, default=16.0)
    e.add_argument("--dtype", choices=["float32", "float64"], default="float64")
    e.add_argument("--output", "-o", help="write the report as JSON")

    v = sub.add_parser("eval", help="score a checkpoint on a dataset")
    v.add_argument("checkpoint")
    v.add_argument("dataset")
    v.add_argument("--label-column", default="-1")
    v.add_argument("--has-header", action="store_true")
    v.add_argument("--output", "-o", help="confusion matrix CSV path")

    s = sub.add_parser("synth", help="write a synthetic high-dimension/low-sample dataset")
    s.add_argument("output", help=".csv or .sevd path")
    s.add_argument("--samples", type=int, default=150)
    s.add_argument("--features", type=int, default=1000)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--informative", type=int, default=30)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--class-sep", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg.apply(read_config(args.config))
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names and v is not None}
    if args.preset:
        overrides["preset"] = args.preset
    return cfg.apply(overrides)


def cmd_train(args) -> int:
    summary = run_train(config_from_args(args))
    print(f"mean best accuracy {summary['mean_best_accuracy']:.4f} "
          f"+- {summary['std_best_accuracy']:.4f} over {summary['trials']} trial(s)")
    print(f"connections {summary['nnz_total']} of {summary['dense_connections']} "
          f"(sparsity {100 * summary['sparsity']:.2f}%)")
    return 0


def cmd_bench(args) -> int:
    rows = bench_evolution(sizes_for_bench(args.sizes), args.epsilon, args.zeta, args.repeats,
                           args.seed, output=args.output)
    for r in rows:
        print(f"{r['size']:>6} {r['impl']}  {r['mean_s']:.4f}s +- {r['std_s']:.4f}  (nnz {r['nnz']})")
    return 0


def cmd_extreme(args) -> int:
    widths = sizes_for_bench(args.widths)
    rep = run_extreme(widths, args.epsilon, args.epochs, args.samples, args.learning_rate,
                      args.batch_size, args.dropout_rate, seed=args.seed,
                      memory_limit_gb=args.memory_limit_gb, dtype=args.dtype)
    print(f"neurons              {rep['neurons']}")
    print(f"connections          {rep['connections']}")
    print(f"expected connections {rep['expected_connections']}")
    if "reported_connections" in rep:
        print(f"reference (reported) {rep['reported_connections']}")
    print(f"sparsity             {100 * rep['sparsity']:.4f}%")
    print(f"memory estimate      {format_gib(rep['memory_estimate']['total'])}")
    print(f"peak RSS             {format_gib(rep['peak_rss_bytes'])}")
    for i, t in enumerate(rep["epoch_seconds"], 1):
        print(f"epoch {i} wall time    {t:.1f}s")
    if args.output:
        Path(args.output).write_text(json.dumps(rep, indent=2, default=str))
    return 0


def cmd_eval(args) -> int:
    label = int(args.label_column) if args.label_column.lstrip("-").isdigit() else args.label_column
    kwargs = {} if args.dataset.endswith(".sevd") else {"label_column": label, "has_header": args.has_header}
    res = run_eval(args.checkpoint, args.dataset, output=args.output, **kwargs)
    print(f"accuracy {res['accuracy']!r}")
    print(res["confusion"].render(), end="")
    return 0


def cmd_synth(args) -> int:
    ds = synth_hdls(args.samples, args.features, args.classes, args.informative, args.noise,
                    args.seed, class_sep=args.class_sep)
    (save_binary if args.output.endswith(".sevd") else save_csv)(ds, args.output)
    print(f"wrote {ds.n_samples} x {ds.n_features} ({ds.n_classes} classes) to {args.output}")
    return 0


COMMANDS = {"train": cmd_train, "bench-evolution": cmd_bench, "extreme": cmd_extreme,
            "eval": cmd_eval, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        err = {"type": "ConfigError", "field": exc.field, "message": str(exc)}
    except MemoryError as exc:
        err = {"type": "MemoryError", "message": str(exc)}
    except (ValueError, OSError) as exc:
        err = {"type": type(exc).__name__, "message": str(exc)}
    print("error: " + json.dumps(err), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
