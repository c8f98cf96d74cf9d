import numpy as np
import pytest
from hypothesis import settings

from ugrid.data import random_coefficients
from ugrid.grid import full_interior_mask
from ugrid.stencils import make_problem

# single-core runs share the CPU with training; timing deadlines only add flakiness
settings.register_profile("ugrid", deadline=None)
settings.load_profile("ugrid")


def random_mask(n, rng, density=0.8):
    m = (rng.random((n, n)) < density).astype(np.float64)
    m[[0, -1], :] = 0.0
    m[:, [0, -1]] = 0.0
    return m


def random_problem(family, n, rng, mask=None, zero_f=False):
    """Random instance with a random mask, boundary values, f and coefficients."""
    if mask is None:
        mask = random_mask(n, rng)
    b = np.where(mask != 0, 0.0, rng.uniform(-1, 1, (n, n)))
    f = np.zeros((n, n)) if zero_f else rng.uniform(-1, 1, (n, n)) / (n - 1) ** 2
    return make_problem(family, f, b, mask, **random_coefficients(family, n, rng))


def square_problem(family, n, rng):
    return random_problem(family, n, rng, mask=full_interior_mask(n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
