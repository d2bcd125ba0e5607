"""Discrete homogenized minimizers for several exponents, with grid refinement."""

import argparse

from common import BUMP, UNIT

from perfhom.capacity import CapacityModel
from perfhom.gammademo import GridSpec, homogenized_minimize
from perfhom.process import ConstantLaw


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--intensity", type=float, default=10.0)
    p.add_argument("--q", type=lambda s: [float(x) for x in s.split(",")], default=[1.5, 2.0, 2.5])
    p.add_argument("--N", type=lambda s: [int(x) for x in s.split(",")], default=[8, 16, 32])
    args = p.parse_args()
    print(f"{'q':>5} {'N':>4} {'energy':>14} {'max u':>10} {'iters':>6} {'residual':>10}")
    for q in args.q:
        for N in args.N:
            sol = homogenized_minimize(GridSpec(UNIT, N), CapacityModel(3, q), ConstantLaw(1.0), args.intensity, BUMP)
            print(f"{q:5.2f} {N:4d} {sol.energy:14.8g} {abs(sol.u).max():10.4g} {sol.iterations:6d} {sol.residual:10.2e}")


if __name__ == "__main__":
    main()
