"""Shared test configuration.

Single-threaded BLAS keeps results bit-reproducible and avoids thread
oversubscription when pytest runs kernels in parallel with numba's own
threading.  Set before numpy is imported anywhere.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_rng(seed):
    return np.random.default_rng(seed)


# One line per acceptance criterion; test_acceptance appends, the summary
# hook replays them so the verdicts are visible even without pytest -s.
acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
