import numpy as np
import pytest

from rcmrough.corrector import sigma_gamma, solve_harmonic
from rcmrough.env import Constant, LineModel, PercolationWeighted, UniformInterval, clusters, gen_env
from rcmrough.roughpath import StepPath
from rcmrough.walk import JumpPath

ACCEPTANCE_LINES = []


class Solved:
    def __init__(self, env):
        self.env = env
        self.labels = clusters(env)
        self.field = solve_harmonic(env, self.labels)
        self.stats = sigma_gamma(env, self.labels, self.field)


@pytest.fixture(scope="session")
def uniform64():
    return Solved(gen_env(UniformInterval(1, 10), 2, 64, 1))


@pytest.fixture(scope="session")
def uniform16():
    return Solved(gen_env(UniformInterval(1, 10), 2, 16, 3))


@pytest.fixture(scope="session")
def constant16():
    return Solved(gen_env(Constant(1.0), 2, 16, 0))


@pytest.fixture(scope="session")
def line16():
    return Solved(gen_env(LineModel(1, 2), 2, 16, 5))


@pytest.fixture(scope="session")
def perc32():
    return Solved(gen_env(PercolationWeighted(0.7, 1, 2), 2, 32, 2))


def random_jump_path(rng, m, d=2, horizon=1.0):
    """Lattice path with ``m`` nearest-neighbor jumps at sorted uniform times."""
    times = np.sort(rng.uniform(0, horizon, m))
    while m > 1 and np.any(np.diff(times) <= 0):
        times = np.sort(rng.uniform(0, horizon, m))
    steps = np.zeros((m, d), dtype=np.int64)
    axis = rng.integers(0, d, m)
    steps[np.arange(m), axis] = rng.choice([-1, 1], m)
    return JumpPath(start=(0,) * d, horizon=horizon, times=times, positions=np.cumsum(steps, axis=0))


def random_step_path(rng, m, k=2, horizon=1.0):
    times = np.sort(rng.uniform(0, horizon, m))
    values = np.vstack([rng.normal(size=(1, k)), rng.normal(size=(m, k))])
    return StepPath(times, values, horizon)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
