"""Solver against closed-form capacities over a grid of radii and exponents."""

import numpy as np

from perfhom.cli import capacity_table


def main():
    for n, q in ((3, 2.0), (3, 1.5), (2, 1.5)):
        print(f"# n={n} q={q}")
        print(capacity_table(n, q, [0.5, 1.0, 2.0], [4.0, 100.0, np.inf], [1.0, 2.0]), end="")


if __name__ == "__main__":
    main()
