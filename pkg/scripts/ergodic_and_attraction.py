"""Time averages of x^3 and exp(-x) from three initial segments, plus the
decay of E|x_a - x_b|^2 between two of them (example 1, BEM, step 0.01)."""

import argparse
import sys

from sddelab.cli import main

parser = argparse.ArgumentParser(description="ergodic averages and attraction for example 1")
parser.add_argument("--out", default="results/ergodic")
parser.add_argument("--workers", default="1")
args = parser.parse_args()

common = ["--example", "ex1_bem", "--plot", "--workers", args.workers]
for experiment in ("ergodic", "attraction", "moments"):
    code = main([experiment, *common, "--out", f"{args.out}/{experiment}"])
    if code:
        sys.exit(code)
