import numpy as np
import pytest

from rspo.game import make_game, random_preference

DEMO_P = [[0.5, 1.0], [0.0, 0.5]]

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES = {}


@pytest.fixture
def demo_game():
    return make_game(DEMO_P, [0.5, 0.5], tau=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_game(rng, n, tau=0.1, reference="dirichlet"):
    if reference == "dirichlet":
        mu = rng.dirichlet(np.ones(n))
    elif reference == "interior":
        mu = interior_policy(rng, n)
    else:
        mu = None
    return make_game(random_preference(n, rng), mu, tau)


def interior_policy(rng, n, floor=0.02):
    p = rng.dirichlet(np.ones(n)) + floor
    return p / p.sum()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
