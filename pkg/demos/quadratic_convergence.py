"""DivShare on a noiseless least-squares problem: optimality gap and consensus over time."""

import argparse

import numpy as np

from divshare.core import validate_config
from divshare.netsim import run_simulation
from divshare.tasks import build_task


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rounds", type=int, default=500)
    parser.add_argument("--omega", type=float, default=0.25)
    parser.add_argument("--fanout", type=int, default=3)
    parser.add_argument("--step", type=float, default=0.9, help="step size as a multiple of 1/L")
    parser.add_argument("--seed", type=int, default=6)
    args = parser.parse_args()

    raw = dict(n=8, omega=args.omega, j_fanout=args.fanout, batch_size=10, rounds=args.rounds, seed=args.seed,
               snapshot_interval=args.rounds / 10, dataset={"kind": "quadratic", "m": 10, "d": 20, "noise": 0.0})
    task = build_task(validate_config(dict(raw, eta=0.01)))
    L = max(obj.smoothness() for obj in task.objectives)
    cfg = validate_config(dict(raw, eta=args.step / L))
    trace = run_simulation(cfg, task=task)
    problem = task.extras["problem"]

    print(f"L = {L:.3f}, eta = {cfg.eta:.4f}")
    print(f"{'time':>8} {'F(xbar)-F*':>12} {'|grad F|':>10} {'spread':>10}")
    for t, models in zip(trace.snapshot_times, trace.snapshots):
        xbar = models.mean(axis=0)
        gap = problem.value(xbar) - problem.optimum
        grad = np.linalg.norm(problem.gradient(xbar))
        spread = np.max(np.abs(models - xbar))
        print(f"{t:8.1f} {gap:12.3e} {grad:10.3e} {spread:10.3e}")


if __name__ == "__main__":
    main()
