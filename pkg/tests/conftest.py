import numpy as np
import pytest

from srm_dyn.core import Dataset
from srm_dyn.dynamics import InitialConditionSampler, generate_dataset, get_system

ACCEPTANCE_LINES = []


def record(criterion, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def ball_data(rng, N, T, n, B=1.0):
    """Random states inside the ball of radius B."""
    X = rng.uniform(-1, 1, size=(N, T + 1, n))
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    return Dataset(X * (B * rng.uniform(0.1, 1.0, size=norms.shape) / np.maximum(norms, 1e-12)), B)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pendulum():
    return get_system("double_pendulum")


@pytest.fixture(scope="session")
def box_sampler():
    return InitialConditionSampler.uniform_box([-0.5] * 4, [0.5] * 4)


@pytest.fixture(scope="session")
def small_pendulum_data(pendulum, box_sampler):
    return generate_dataset(pendulum, box_sampler, N=12, T=3, sampling_period=0.05, substeps=10, B=2.2, seed=3)


@pytest.fixture
def linear_data():
    """x_{t+1} = 0.5 x_t in one dimension."""
    x0 = np.linspace(-1.0, 1.0, 9)
    states = np.stack([x0 * 0.5 ** t for t in range(4)], axis=1)[..., None]
    return Dataset(states, 1.0)
