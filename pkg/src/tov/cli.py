"""Command-line entry point: ``tov <subcommand> [--config ...] [--seed ...] [--out ...] [--threads ...]``.

Exit codes: 0 success, 1 configuration or input error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import pipeline, verify
from .config import ExperimentConfig
from .errors import ConfigError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file (defaults reproduce the logistic experiment)")
    p.add_argument("--seed", type=int, help="override experiment.seed (unsigned 64-bit)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; affects speed only")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tov", description="Train-on-validation data selection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("generate", "write synthetic datasets and their metadata"),
        ("score", "score the pool for every run"),
        ("select-train-eval", "select subsets, train final models and report test log-loss"),
        ("sweep", "learning-rate grid search on random selections"),
    ]:
        _common(sub.add_parser(name, help=help_))
    v = sub.add_parser("verify", help="run numerical verification suites")
    _common(v)
    v.add_argument("--suite", action="append", choices=verify.SUITES,
                   help="suite to run (repeatable; default: all)")
    pd = sub.add_parser("plot-data", help="turn report rows into n,strategy,mean,stderr tables")
    _common(pd)
    pd.add_argument("reports", nargs="*", help="report rows.csv files")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.set("experiment.seed", args.seed)
    cfg.validate()
    return cfg


def run(args) -> int:
    out = Path(args.out)
    threads = max(1, args.threads)
    if args.command == "verify":
        names = args.suite or list(verify.SUITES)
        seed = args.seed if args.seed is not None else 0
        results = [verify.run_suite(n, seed=seed) for n in names]
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify").mkdir(exist_ok=True)
        (out / "verify" / "report.json").write_text(verify.report_json(results), encoding="utf-8")
        for r in results:
            print(r.line())
        return 0 if all(r.passed for r in results) else 2
    if args.command == "plot-data":
        path = pipeline.cmd_plotdata(args.reports, out)
        print(path)
        return 0

    cfg = _load_config(args)
    if args.command == "generate":
        print(pipeline.cmd_generate(cfg, out))
    elif args.command == "score":
        for p in pipeline.cmd_score(cfg, out, threads):
            print(p)
    elif args.command == "select-train-eval":
        print(pipeline.cmd_select_train_eval(cfg, out, threads))
    elif args.command == "sweep":
        print(pipeline.cmd_sweep(cfg, out, threads))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # BLAS stays single-threaded so results never depend on --threads
        with threadpool_limits(limits=1):
            return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
