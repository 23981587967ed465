"""``harlstm`` command line.

::

    harlstm [--seed N] [--output-dir DIR] [--threads N] train <config> [--set key=value ...]
    harlstm gridsearch <config> <grid>
    harlstm evaluate <checkpoint> <config>
    harlstm ablation <config>
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
import traceback

from . import __version__
from . import config as cfgmod

# source file -> the component it belongs to, used in error messages
COMPONENTS = {
    "tensor": "numerics-core",
    "params": "numerics-core",
    "layers": "layers",
    "network": "layers",
    "training": "training",
    "checkpoint": "training",
    "data": "data",
    "metrics": "metrics",
    "kvfile": "experiment-cli",
    "config": "experiment-cli",
    "experiment": "experiment-cli",
    "cli": "experiment-cli",
}


def _add_globals(p, default):
    # sub-parsers use SUPPRESS so a flag given before the command survives
    p.add_argument("--seed", type=int, default=default, help="override the config seed")
    p.add_argument("--output-dir", default=default, help="override the config output_dir")
    p.add_argument("--threads", type=int, default=default, help="cap BLAS threads (0 = library default)")
    if default is argparse.SUPPRESS:
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")


def build_parser():
    parser = argparse.ArgumentParser(prog="harlstm", description="Train and evaluate residual bidirectional LSTMs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every evaluation")
    _add_globals(parser, None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("config")
    _add_globals(p, argparse.SUPPRESS)

    p = sub.add_parser("gridsearch", help="train every point of a hyper-parameter grid")
    p.add_argument("config")
    p.add_argument("grid")
    _add_globals(p, argparse.SUPPRESS)

    p = sub.add_parser("evaluate", help="test-set metrics for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config")
    _add_globals(p, argparse.SUPPRESS)

    p = sub.add_parser("ablation", help="compare the four architecture variants")
    p.add_argument("config")
    _add_globals(p, argparse.SUPPRESS)
    return parser


def _load_config(args):
    cfg = cfgmod.load(args.config)
    overrides = dict(cfgmod.parse_override(s) for s in args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    return cfg.with_overrides(overrides) if overrides else cfg


def _thread_limit(n):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _component(exc):
    name = None
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("harlstm."):
            name = mod.split(".")[1]
    return COMPONENTS.get(name, "experiment-cli")


def run(args):
    from . import experiment

    cfg = _load_config(args)
    with _thread_limit(cfg.threads):
        if args.command == "train":
            summary = experiment.run_train(cfg, args.config)
            final = summary["final_test"]
            print(f"test accuracy {final['accuracy']:.4f}  weighted F1 {final['weighted_f1']:.4f}"
                  f"  -> {cfg.output_dir}")
        elif args.command == "gridsearch":
            grid = cfgmod.load_grid(args.grid)
            ranked = experiment.run_gridsearch(cfg, grid, args.config)
            for r, t in enumerate(ranked, start=1):
                print(f"{r:3d}  best test F1 {t.best_test_f1:.4f}  {t.label}")
        elif args.command == "evaluate":
            report, _ = experiment.run_evaluate(args.checkpoint, cfg, args.config, out=args.output_dir)
            print(json.dumps(report, indent=2, sort_keys=True))
        elif args.command == "ablation":
            rows = experiment.run_ablation(cfg, args.config)
            for row in rows:
                print(f"{row['title']:<22} accuracy {row['accuracy']:.4f}  weighted F1 {row['weighted_f1']:.4f}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run(args)
    except KeyboardInterrupt:
        print("harlstm: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:
        print(f"harlstm: error in {_component(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
