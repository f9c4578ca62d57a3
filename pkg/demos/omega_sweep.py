"""Sweep the fragmentation fraction under stragglers and report the fastest setting per seed."""

import argparse
import math
from pathlib import Path

import numpy as np

from divshare.core import load_config
from divshare.harness import sweep

HERE = Path(__file__).resolve().parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=HERE / "configs" / "omega_sweep.json", type=Path)
    parser.add_argument("--replicates", type=int, default=3)
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args()

    base = load_config(args.config)
    omegas = list(base.sweep_grid["omega"])
    rows = sweep(base, replicates=args.replicates, workers=args.workers)
    print(f"J/n = {base.j_fanout / base.n:g}")
    print(f"{'omega':>8} " + " ".join(f"{'seed' + str(r):>8}" for r in range(args.replicates)) + f" {'drops/rnd':>10}")
    grid = np.full((len(omegas), args.replicates), math.inf)
    for row in rows:
        grid[row["grid_index"], row["replicate"]] = row["time_to_target"]
    for k, omega in enumerate(omegas):
        drops = np.mean([r["drops_mean_per_round"] for r in rows if r["grid_index"] == k])
        cells = " ".join(f"{t:8.0f}" if math.isfinite(t) else f"{'never':>8}" for t in grid[k])
        print(f"{omega:8g} {cells} {drops:10.2f}")
    best = [omegas[int(np.argmin(grid[:, r]))] for r in range(args.replicates)]
    print("fastest omega per seed:", best)


if __name__ == "__main__":
    main()
