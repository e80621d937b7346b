import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# Invariant checks run at least 1000 random cases each.
settings.register_profile(
    "invariants", max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("invariants")


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def random_survival(rng, n, p=1, tie_prone=False, censor_rate=0.3):
    """Small random cohort: (durations, events, X)."""
    if tie_prone:
        t = rng.integers(1, max(3, n // 2), size=n).astype(float)
    else:
        t = rng.permutation(n).astype(float) + 1.0 + rng.uniform(0, 0.5, n)
    e = rng.uniform(size=n) > censor_rate
    e[rng.integers(n)] = True
    X = rng.normal(size=(n, p))
    return t, e, X


# Acceptance criteria append "PASS/FAIL ..." lines here; printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
