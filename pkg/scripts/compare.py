"""Centralized, delay-only and localized costs on a fixture or generated plant."""

import argparse
import json

from slskit import experiments as ex
from slskit import plant as P


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mesh", type=int, default=0, help="swing mesh side; 0 uses the chain fixture")
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--T", type=int, default=10)
    args = ap.parse_args()
    plant = P.swing_mesh(args.mesh, 0) if args.mesh else P.load_fixture()
    cmp = ex.compare_centralized(plant, args.d, args.T)
    print(json.dumps(cmp.to_json(), indent=2))


if __name__ == "__main__":
    main()
