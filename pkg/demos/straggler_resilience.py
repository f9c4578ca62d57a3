"""Time to a target test MSE with and without stragglers, DivShare against AD-PSGD.

Runs the 2x2 grid of ``configs/straggler_sweep.json`` for a few replicates
and prints the slowdown each protocol suffers when half the nodes straggle.
"""

import argparse
import math
from pathlib import Path

from divshare.core import load_config
from divshare.harness import sweep, write_sweep_csv

HERE = Path(__file__).resolve().parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=HERE / "configs" / "straggler_sweep.json", type=Path)
    parser.add_argument("--replicates", type=int, default=3)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--csv", type=Path, default=None, help="also write the sweep rows here")
    args = parser.parse_args()

    base = load_config(args.config)
    rows = sweep(base, replicates=args.replicates, workers=args.workers)
    if args.csv:
        write_sweep_csv(rows, args.csv)

    print(f"{'protocol':>9} {'stragglers':>10} " + " ".join(f"{'seed' + str(r):>8}" for r in range(args.replicates)))
    table = {}
    for row in rows:
        table.setdefault((row["protocol"], row["straggler_count"]), []).append(row["time_to_target"])
    for (protocol, count), times in table.items():
        cells = " ".join(f"{t:8.0f}" if math.isfinite(t) else f"{'never':>8}" for t in times)
        print(f"{protocol:>9} {count:>10} {cells}")

    for protocol in ("divshare", "adpsgd"):
        clean = table.get((protocol, 0))
        slow = table.get((protocol, base.straggler_count))
        if clean and slow:
            ratios = [s / c if math.isfinite(c) else math.nan for s, c in zip(slow, clean)]
            print(f"{protocol} slowdown under stragglers: " + ", ".join(f"{r:.2f}x" for r in ratios))


if __name__ == "__main__":
    main()
