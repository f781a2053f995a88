import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Acceptance tests append "criterion N: PASS/FAIL ..." lines here; they are
# echoed once more in the terminal summary so they are easy to find.
ACCEPTANCE_LINES: list = []


@pytest.fixture
def report_line():
    def add(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        profile = os.environ.get("SDDELAB_PROFILE", "ci")
        terminalreporter.section(f"acceptance criteria (profile: {profile})")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def ex1():
    from sddelab import builtin_example
    return builtin_example("ex1_bem")


@pytest.fixture
def ex2():
    from sddelab import builtin_example
    return builtin_example("ex2_tem")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
