"""Tabulate the Wegner constant against its high- and low-energy limits.

    python scripts/wegner_asymptotics.py [--d 1 2 3] [--c0 1 2]
"""

import argparse

import numpy as np

from gaussloc import bounds
from gaussloc.field import gaussian_spec


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", nargs="+", type=int, default=[1, 2, 3])
    ap.add_argument("--c0", nargs="+", type=float, default=[1.0, 2.0])
    args = ap.parse_args(argv)
    print(f"{'d':>2} {'c0':>4} {'E':>10} {'ratio':>10}")
    for d in args.d:
        for c0 in args.c0:
            cov = gaussian_spec(d, c0=c0).scaled_cov
            lim = bounds.wegner_asymptotic_limits(d, c0)
            for E in np.geomspace(1e2, 1e8, 4):
                W = bounds.wegner_constant(E, c0, 1.0, d, covariance=cov).value
                print(f"{d:>2} {c0:>4} {E:>10.3g} {W / E ** (d / 2) / lim['high']:>10.6f}")
            for E in -np.geomspace(1e1, 1e5, 3):
                lnW = bounds.wegner_constant(E, c0, 1.0, d, covariance=cov).intermediates["ln_W"]
                print(f"{d:>2} {c0:>4} {E:>10.3g} {lnW / E**2 / lim['low']:>10.6f}")


if __name__ == "__main__":
    main()
