"""Command line entry point: ``python3 -m divshare {run,sweep,theory}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import ConfigError, DivShareError, load_config
from .harness import (METRICS_COLUMNS, evaluate_all, metric_direction, metrics_rows, sweep, time_to_target,
                      write_csv, write_sweep_csv)
from .netsim import build_network, run_simulation
from .tasks import build_task
from .theory import delays_from_network, theory_report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divshare", description="Fragment-sharing decentralized learning simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--snapshots", type=float, default=None, help="snapshot interval in simulated seconds")

    p = sub.add_parser("run", help="simulate one configuration")
    common(p)
    p.add_argument("--trace", action="store_true", help="also write trace.ndjson")

    p = sub.add_parser("sweep", help="run a parameter grid")
    common(p)
    p.add_argument("--replicates", type=int, default=1, help="seeds per grid point")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("theory", help="mixing constants for the configured network")
    common(p)
    p.add_argument("--trials", type=int, default=0, help="Monte-Carlo trials for the contraction check")
    p.add_argument("--rho", type=float, default=0.5, help="contraction level for the check")
    return parser


def _config(args):
    if not Path(args.config).is_file():
        raise ConfigError("--config", f"no such file: {args.config}")
    cfg = load_config(args.config)
    if args.snapshots is not None:
        cfg = cfg.replace(snapshot_interval=args.snapshots)
    return cfg


def _run(args, out: Path) -> int:
    cfg = _config(args)
    task = build_task(cfg)
    trace = run_simulation(cfg, task=task)
    series = evaluate_all(trace, task)
    write_csv(metrics_rows(series, cfg.protocol, cfg.seed), METRICS_COLUMNS, out / "metrics.csv")
    if args.trace:
        trace.write_ndjson(out / "trace.ndjson")
    primary = series[task.primary_metric]
    print(f"{task.primary_metric}: final (last 3 snapshots) = {primary.final(3):.6g}")
    if cfg.target is not None:
        ttt = time_to_target(primary, cfg.target, metric_direction(task.primary_metric))
        print(f"time to target {cfg.target}: {ttt:.6g}")
    print(f"end time {trace.end_time:.6g}s, dropped queue entries {int(trace.drops.sum())}")
    return 0


def _sweep(args, out: Path) -> int:
    cfg = _config(args)
    if args.replicates < 1:
        raise ConfigError("replicates", "must be >= 1")
    rows = sweep(cfg, replicates=args.replicates, workers=args.workers)
    write_sweep_csv(rows, out / "sweep.csv")
    failed = sum(1 for r in rows if r.get("error"))
    print(f"{len(rows)} runs written to {out / 'sweep.csv'} ({failed} diverged)")
    return 0


def _theory(args, out: Path) -> int:
    cfg = _config(args)
    task = build_task(cfg)
    delays = delays_from_network(build_network(cfg), cfg.model_bytes(task.dim), cfg.compute_time)
    report = theory_report(cfg.n, cfg.j_fanout, delays, rng=np.random.default_rng(cfg.seed),
                           contraction_trials=args.trials, contraction_rho=args.rho)
    (out / "theory.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(report.table())
    return 0


COMMANDS = {"run": _run, "sweep": _sweep, "theory": _theory}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DivShareError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
