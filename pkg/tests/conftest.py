import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blobs():
    """Two well separated 2-D Gaussian classes, 40 rows each, features in [0, 1]."""
    g = np.random.default_rng(5)
    a = g.normal([0.25, 0.25], 0.05, (40, 2))
    b = g.normal([0.75, 0.75], 0.05, (40, 2))
    x = np.clip(np.vstack([a, b]), 0, 1)
    y = np.r_[np.zeros(40, int), np.ones(40, int)]
    perm = g.permutation(80)
    return x[perm], y[perm]


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
