"""H2 versus L1 tradeoff on the 3x3 swing mesh, written as CSV to stdout."""

from slskit import experiments as ex
from slskit import plant as P

if __name__ == "__main__":
    sweep = ex.run_tradeoff(P.swing_mesh(3, 0), 3, 8, h=2, n=6)
    print(ex.tradeoff_csv(sweep), end="")
