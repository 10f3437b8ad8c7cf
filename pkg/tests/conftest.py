import numpy as np
import pytest

from coopalloc.model import Instance

_ACCEPTANCE_LINES = []


def random_instance(rng, m, n, rate_lo=0.2, rate_hi=1.5, spread=1.5):
    """Exp(1) fading times a log-uniform per-link scale; demands uniform."""
    gamma = rng.exponential(1.0, (m, n)) * 10.0 ** rng.uniform(0.0, spread, (m, n))
    return Instance(gamma, rng.uniform(rate_lo, rate_hi, n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def acceptance_report():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
