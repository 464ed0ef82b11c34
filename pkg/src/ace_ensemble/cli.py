"""Command line entry point: ``ace-ensemble {train,sweep,ncl-demo,gradcheck}``.

Exit codes: 0 success, 2 invalid configuration, 3 I/O failure,
4 numeric failure (non-finite training loss or a failed gradient check).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import gradcheck
from .errors import ConfigError, IdxParseError, NumericError
from .experiment import load_config, run_experiment, write_report

log = logging.getLogger("ace_ensemble")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4


def _overrides(args) -> dict:
    values = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for flag, key in (("mnist_dir", "mnist_dir"), ("output", "report"), ("format", "format"),
                      ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = str(value)
    if getattr(args, "deterministic", None):
        values["deterministic"] = "true"
    elif getattr(args, "workers", None) and args.workers > 1:
        values.setdefault("deterministic", "false")
    return values


def _print_table(report):
    cols = report.columns
    print("  ".join(f"{c:>12}" for c in cols))
    for r in report.rows:
        values = {report.key_name: r.key, **r.metrics,
                  "seeds": len(r.seeds), "wall_s": r.wall_s}
        print("  ".join(f"{values[c]:>12.6g}" if isinstance(values[c], float)
                        else f"{values[c]!s:>12}" for c in cols))


def _run(args, defaults: dict):
    overrides = dict(defaults)
    overrides.update(_overrides(args))
    cfg = load_config(args.config, overrides)
    if args.command == "train" and len(cfg.gammas if cfg.mode == "ncl" else cfg.lambdas) != 1:
        raise ConfigError("lambdas: train runs a single value; use sweep for several")
    log.info("resolved config:\n%s", cfg.to_text())
    report = run_experiment(cfg, log=log.info)
    _print_table(report)
    if cfg.report:
        write_report(report, cfg.report, cfg.format)
        if cfg.format == "csv":
            Path(str(cfg.report) + ".config").write_text(cfg.to_text())
        log.info("report written to %s", cfg.report)
    return 0


NCL_DEMO_DEFAULTS = {
    "mode": "ncl", "dataset": "regression", "n_train": "200", "n_test": "1000",
    "noise_sd": "0.3", "K": "4", "hidden": "16", "gammas": "0,0.2,0.4,0.6",
    "seeds": "0,1,2,3,4", "optimizer": "momentum", "lr": "0.02", "momentum": "0.9",
    "epochs": "600", "batch_size": "32",
}


def _gradcheck(args):
    stats = gradcheck.run_suite(args.instances, args.seed)
    for k, v in stats.items():
        print(f"{k:>20} {v:.3e}" if isinstance(v, float) else f"{k:>20} {v}")
    ok = gradcheck.passed(stats)
    print("gradcheck", "PASSED" if ok else "FAILED")
    return 0 if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ace-ensemble", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("train", "train at a single lambda"),
                            ("sweep", "sweep a list of lambdas"),
                            ("ncl-demo", "NCL regression ensemble on synthetic data")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="key = value config file")
        p.add_argument("-s", "--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--mnist-dir", dest="mnist_dir")
        p.add_argument("-o", "--output", help="report path")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("-j", "--workers", type=int, help="parallel (lambda, seed) cells")
        p.add_argument("--deterministic", action="store_true", help="force serial execution")
    p = sub.add_parser("gradcheck", help="compare closed-form gradients with finite differences")
    p.add_argument("-n", "--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.command == "gradcheck":
            return _gradcheck(args)
        return _run(args, NCL_DEMO_DEFAULTS if args.command == "ncl-demo" else {})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IdxParseError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
