"""KS and W1 distance of coarse-step marginals to a fine-step reference at t=100.

Also dumps empirical CDFs at the snapshot times (10, 95, 96, 100 by default).
"""

import argparse
import sys

from sddelab.cli import main

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--out", default="results/invariant")
parser.add_argument("--workers", default="1")
parser.add_argument("--delta-fine", default="1e-4", help="reference step (1e-3 is ten times cheaper)")
args = parser.parse_args()

sys.exit(main(["invariant", "--example", "ex1_bem", "--paths", "100", "--delta-fine", args.delta_fine,
               "--plot", "--workers", args.workers, "--out", args.out]))
