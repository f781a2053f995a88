"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py          # ci profile, about two minutes
    python scripts/run_acceptance.py --full   # full sizes, about 20 minutes on one core
"""

import os
import sys
from pathlib import Path

import pytest

full = "--full" in sys.argv[1:]
os.environ["SDDELAB_PROFILE"] = "full" if full else "ci"
suite = Path(__file__).resolve().parent.parent / "tests" / "test_acceptance.py"
sys.exit(pytest.main([str(suite), "-q", "-rN"]))
