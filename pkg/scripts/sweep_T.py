"""Localized versus centralized H2 cost on the 3x3 swing mesh for T = 3..20."""

import argparse

from slskit import experiments as ex
from slskit import plant as P


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hops", type=int, default=2, help="bus hops of locality")
    ap.add_argument("--T-max", type=int, default=20)
    args = ap.parse_args()
    plant = P.swing_mesh(3, args.seed)
    d = args.hops * ex.STATE_HOPS_PER_BUS_HOP
    rows = ex.sweep_T(plant, [d], range(3, args.T_max + 1), h=2)
    print(ex.sweep_csv(rows), end="")


if __name__ == "__main__":
    main()
