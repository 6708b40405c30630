"""Refinement study: differential frame operator against the exact commutator.

    python scripts/stencil_order.py [--hs 0.2 0.1 0.05]
"""

import argparse

import numpy as np

from gaussloc.geometry import Box
from gaussloc.grid import Grid
from gaussloc.operator import assemble_on_grid, frame_operator


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hs", nargs="+", type=float, default=[0.2, 0.1, 0.05])
    args = ap.parse_args(argv)
    hs, errs = np.array(args.hs), []
    for h in hs:
        grid = Grid.dirichlet_cube((0.0,), 20.0, h)
        x = grid.points()[:, 0]
        op = assemble_on_grid(grid, np.cos(x))
        box = Box((0.0,), 16.0, 4.8)
        f = np.exp(-x**2 / 50) * np.cos(0.7 * x)
        err = np.max(np.abs(frame_operator(op, box) @ f - frame_operator(op, box, "stencil") @ f))
        errs.append(err)
        print(f"h={h:<6g} max|diff|={err:.3e}")
    print(f"fitted order {np.polyfit(np.log(hs), np.log(errs), 1)[0]:.3f}")


if __name__ == "__main__":
    main()
