"""Command-line scenario runner.

    lagstep list
    lagstep run unicycle-compensated --verify
    lagstep run --config my.cfg --out results/

Exit status: 0 on success (or on divergence with --expect-divergence),
1 on configuration errors, 2 on unexpected divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import pathlib
import sys
import warnings

import numpy as np

from .errors import ConfigurationError
from .scenarios import ConfigParseError, RunConfig, list_scenarios, load_config, resolve
from .simulator import PREDICTORS, IncompatibleHistoryWarning, SimTrace, simulate
from .verification import format_report, verification_report

OUT_ENV = "LAGSTEP_OUT"
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lagstep", description="Predictor-feedback simulations with input delays.")
    parser.add_argument("--scenario-dir", help="directory of user *.cfg scenarios (default: $LAGSTEP_SCENARIO_DIR)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list builtin and user scenarios")
    run = sub.add_parser("run", help="run a scenario and write trace.csv, metrics.csv, verify.txt")
    run.add_argument("name", nargs="?", help="builtin or user scenario name")
    run.add_argument("--config", help="scenario config file")
    run.add_argument("--dt", type=float, help="step size override")
    run.add_argument("--horizon", type=float, help="final time override")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<name> or ./lagstep-out/<name>)")
    run.add_argument("--verify", action="store_true", help="run the verification checks")
    run.add_argument("--expect-divergence", action="store_true", help="treat divergence as a success")
    run.add_argument("--predictor", choices=PREDICTORS, help="predictor implementation override")
    return parser


def write_metrics(trace: SimTrace, path) -> None:
    table = np.column_stack([trace.times, trace.xi(), trace.gamma()])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header="t,xi,gamma", comments="")


def _configure(args) -> RunConfig:
    if (args.name is None) == (args.config is None):
        raise ConfigurationError("give either a scenario name or --config PATH")
    cfg = load_config(args.config) if args.config else resolve(args.name, args.scenario_dir)
    overrides = {}
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.predictor is not None:
        overrides["predictor"] = args.predictor
    if overrides:
        cfg.scenario = dataclasses.replace(cfg.scenario, **overrides)
        cfg.scenario.validate()
    cfg.verify = cfg.verify or args.verify
    cfg.expect_divergence = cfg.expect_divergence or args.expect_divergence
    return cfg


def _out_dir(args, name) -> pathlib.Path:
    if args.out:
        return pathlib.Path(args.out)
    root = os.environ.get(OUT_ENV) or "lagstep-out"
    return pathlib.Path(root) / name


def run(args) -> int:
    try:
        cfg = _configure(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, cfg.name)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IncompatibleHistoryWarning)
        trace = simulate(cfg.scenario)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    trace.to_csv(out / "trace.csv")
    write_metrics(trace, out / "metrics.csv")
    report = {"scenario": cfg.name}
    if cfg.verify:
        report.update(verification_report(trace, cfg.scenario.model))
    else:
        norms = trace.norms()
        report.update(status=trace.status,
                      diverged_at=trace.diverged_at if trace.diverged_at is not None else "none",
                      final_norm=float(norms[-1]), max_norm=float(norms.max()))
    if trace.reason:
        report["reason"] = trace.reason
    report["expect_divergence"] = str(cfg.expect_divergence).lower()
    (out / "verify.txt").write_text(format_report(report))
    print(f"{cfg.name}: {trace.status}" + (f" at t={trace.diverged_at:.6g}" if trace.diverged_at is not None else "")
          + f"; wrote {out}")
    if trace.status == "diverged" and not cfg.expect_divergence:
        print(f"error: {trace.reason}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        try:
            rows = list_scenarios(args.scenario_dir)
        except ConfigParseError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        width = max(len(r[0]) for r in rows)
        for name, desc, origin in rows:
            tag = "" if origin == "builtin" else f"  [{origin}]"
            print(f"{name:<{width}}  {desc}{tag}")
        return EXIT_OK
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
