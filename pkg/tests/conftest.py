import numpy as np
import pytest

from snpdensity.density import SnpDensity
from snpdensity.indexset import build_index_set


def random_density(rng, d, K, max_norm=1.0, whitening=None):
    """SNP density with a random direction and ||theta|| uniform in [0, max_norm]."""
    index_set = build_index_set(d, K)
    theta = rng.standard_normal(len(index_set))
    theta *= rng.uniform(0.0, max_norm) / np.linalg.norm(theta)
    return SnpDensity(index_set, theta, whitening)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria push one line each here; printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
