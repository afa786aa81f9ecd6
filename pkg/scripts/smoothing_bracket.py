"""Tabulate the Gaussian-smoothing ratio I(y, lam) / p(y) of the logistic density.

Prints the ratio on a (y, lam) grid and the bracket [1/C, C] that contains it.
"""

import argparse

import numpy as np

from srmdp.stratification import uses_bracket, uses_ratio


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--ymax", type=float, default=10.0)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--order", type=int, default=128)
    p.add_argument("--lams", type=float, nargs="+", default=[0.0, 0.25, 0.5, 1.0])
    args = p.parse_args()

    ys = np.linspace(-args.ymax, args.ymax, 9)
    print("y".rjust(8) + "".join(f"lam={lam:<6g}".rjust(14) for lam in args.lams))
    table = np.array([uses_ratio(ys, lam, args.mu, args.order) for lam in args.lams]).T
    for y, row in zip(ys, table):
        print(f"{y:8.2f}" + "".join(f"{v:14.6f}" for v in row))

    fine = np.linspace(-args.ymax, args.ymax, 2001)
    lo, hi, C = uses_bracket(fine, np.linspace(0, max(args.lams), 41), args.mu, args.order)
    print(f"\nmin ratio {lo:.6f}  max ratio {hi:.6f}  C = {C:.6f}")


if __name__ == "__main__":
    main()
