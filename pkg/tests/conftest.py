import numpy as np
import pytest
from hypothesis import strategies as st

from superstate_rl import envs
from superstate_rl.pomdp import PomdpModel


def random_stochastic(rng, *shape):
    m = rng.random(shape) + 1e-3
    return m / m.sum(axis=-1, keepdims=True)


def random_model(seed, S=3, A=2, Y=3, gamma=0.9):
    rng = np.random.default_rng(seed)
    return PomdpModel(
        transition=random_stochastic(rng, A, S, S),
        obs_kernel=random_stochastic(rng, S, Y),
        reward=rng.uniform(-1, 1, (S, A)),
        init_dist=random_stochastic(rng, S),
        gamma=gamma,
    )


def fully_observed(seed, S=3, A=2, gamma=0.9):
    m = random_model(seed, S, A, S, gamma)
    return m.replace(obs_kernel=np.eye(S))


@st.composite
def small_models(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    S = draw(st.integers(1, 4))
    A = draw(st.integers(1, 3))
    Y = draw(st.integers(1, 4))
    return random_model(seed, S, A, Y)


@pytest.fixture
def retail():
    return envs.customer_retail()


@pytest.fixture
def toy():
    return envs.two_state_toy()


@pytest.fixture
def maze():
    return envs.tmaze()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
