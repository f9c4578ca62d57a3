"""Print the mixing constants for a few (n, J) pairs and one delayed instance."""

import argparse
import math

import numpy as np

from divshare.theory import DelayMatrix, alpha_coeffs, t_hat, theory_report


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=2000, help="Monte-Carlo trials for the contraction estimate")
    args = parser.parse_args()

    print(f"{'n':>5} {'J':>3} {'alpha1':>10} {'alpha':>10} {'T_hat':>10} {'(T_hat-n)/log(n)^2':>20}")
    for n in (8, 16, 60, 256, 1024):
        J = math.ceil(math.log2(n))
        a1, a = alpha_coeffs(n, J)
        th = t_hat(n, J)
        print(f"{n:5d} {J:3d} {a1:10.6f} {a:10.6f} {th:10.3f} {(th - n) / math.log(n) ** 2:20.3f}")

    # one node whose messages reach every peer a round late
    k = np.ones((6, 6), dtype=int)
    k[2, :] = 2
    np.fill_diagonal(k, 1)
    rep = theory_report(6, 3, DelayMatrix(k), rng=np.random.default_rng(0), contraction_trials=args.trials)
    print()
    print(rep.table())


if __name__ == "__main__":
    main()
