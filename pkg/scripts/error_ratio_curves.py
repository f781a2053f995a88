"""Long-horizon strong error ratio for both built-in examples.

Writes error_curve.csv, markers.csv and error_ratio.svg under OUT/ex1_bem and
OUT/ex2_tem. Pass ``--quick`` for a small run that finishes in seconds.
"""

import argparse
import sys

from sddelab.cli import main

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--out", default="results/error_ratio")
parser.add_argument("--workers", default="1")
parser.add_argument("--quick", action="store_true")
args = parser.parse_args()

quick = ["--paths", "50", "--horizon", "20"] if args.quick else []
for example, extra in (("ex1_bem", ["--delta-fine", "0.001"] if args.quick else []), ("ex2_tem", [])):
    code = main(["convergence", "--example", example, "--plot", "--workers", args.workers,
                 "--out", f"{args.out}/{example}", *quick, *extra])
    if code:
        sys.exit(code)
