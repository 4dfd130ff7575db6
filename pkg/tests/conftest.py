import numpy as np
import pytest
from hypothesis import settings

from picard_sim.fo_env import FOEnvironment, OrderSequence
from picard_sim.instgen import generate_instance

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def toy_instance():
    """Two nodes, one product, one unit of capacity and stock at each node."""
    env = FOEnvironment([[1, 1]], [1, 1])
    orders = OrderSequence([0, 0], [[0.9, 0.1], [0.8, 0.2]])
    return env, orders


@pytest.fixture
def toy():
    return toy_instance()


@pytest.fixture(scope="session")
def desk_instance():
    return generate_instance(30, 10_000, 30_000, 0.0, 0.8, 7)


def small_instance(seed, J=5, I=20, T=200, beta=0.0, coverage=0.8):
    return generate_instance(J, I, T, beta, coverage, seed)


def random_fo(rng, J, I, T, max_x=3, max_c=None):
    """Free-form FO instance with sparse stock, for property tests."""
    x1 = rng.integers(0, max_x + 1, size=(I, J))
    c1 = rng.integers(0, (max_c or max(2, T // J)) + 1, size=J)
    products = rng.integers(0, I, size=T)
    rewards = np.round(rng.random((T, J)), 3)
    return FOEnvironment(x1, c1), OrderSequence(products, rewards)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
