"""DA-SLR against the ADMM baseline on case_mini2 (writes out/compare_mini2/)."""
import sys

from gridmesh.cli import main

if __name__ == "__main__":
    sys.exit(main(["compare", "--case", "mini2", "--max-iters", "40", "--gap-tol", "0.01", "--seed", "7",
                   "--out", "out/compare_mini2"] + sys.argv[1:]))
