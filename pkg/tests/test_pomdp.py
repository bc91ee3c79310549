import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superstate_rl import envs
from superstate_rl.errors import ZeroProbabilityObservation
from superstate_rl.pomdp import (PomdpModel, belief_of_history, belief_update, expected_reward, make_rng,
                                 obs_likelihood, rollout, step_simulator, validate)

from conftest import random_model, small_models


def test_customer_retail_is_valid(retail):
    assert validate(retail) == []


def test_bad_row_is_named(retail):
    P = retail.transition.copy()
    P[1, 2, 0] -= 0.1
    problems = validate(retail.replace(transition=P))
    assert len(problems) == 1
    assert problems[0].startswith("transition[1][2]")


def test_gamma_one_rejected(retail):
    problems = validate(retail.replace(gamma=1.0))
    assert any("gamma" in p for p in problems)


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        PomdpModel(np.ones((1, 2, 2)) / 2, np.eye(3), np.zeros((2, 1)), np.full(2, 0.5), 0.9)


# -- filtering ---------------------------------------------------------------

def test_fully_observed_update_collapses():
    m = random_model(3, S=3, A=2, Y=3).replace(obs_kernel=np.eye(3))
    b = belief_update(m, np.array([0.2, 0.5, 0.3]), 1, 2)
    np.testing.assert_array_equal(b, [0.0, 0.0, 1.0])


def test_uniform_everything_stays_uniform():
    m = PomdpModel(np.full((2, 3, 3), 1 / 3), np.full((3, 4), 0.25), np.zeros((3, 2)), np.full(3, 1 / 3), 0.9)
    np.testing.assert_allclose(belief_update(m, np.full(3, 1 / 3), 0, 2), np.full(3, 1 / 3))


def test_customer_update_by_hand(retail):
    # predicted state distribution under a0 from uniform: (0.25, 0.3, 0.25, 0.2);
    # times P(y3 | s) = (0, 0, 0.2, 0.6) gives (0, 0, 0.05, 0.12) over 0.17
    b = belief_update(retail, np.full(4, 0.25), 0, 3)
    np.testing.assert_allclose(b, [0, 0, 5 / 17, 12 / 17], atol=1e-15)


def test_customer_obs_likelihood_by_hand(retail):
    sigma = obs_likelihood(retail, np.full(4, 0.25), 1)
    np.testing.assert_allclose(sigma, [0.2775, 0.295, 0.2375, 0.19], atol=1e-15)


def test_uniform_obs_rows_give_uniform_sigma():
    m = random_model(1, S=3, A=2, Y=4).replace(obs_kernel=np.full((3, 4), 0.25))
    np.testing.assert_allclose(obs_likelihood(m, np.array([0.1, 0.6, 0.3]), 0), np.full(4, 0.25))


def test_deterministic_observed_sigma_is_one_hot():
    P = np.zeros((1, 3, 3))
    P[0, [0, 1, 2], [1, 2, 0]] = 1
    m = PomdpModel(P, np.eye(3), np.zeros((3, 1)), np.full(3, 1 / 3), 0.9)
    np.testing.assert_array_equal(obs_likelihood(m, np.eye(3)[2], 0), [1, 0, 0])


def test_zero_probability_observation_raises(retail):
    m = PomdpModel(np.eye(2)[None], np.eye(2), np.zeros((2, 1)), np.array([1.0, 0.0]), 0.9)
    with pytest.raises(ZeroProbabilityObservation):
        belief_update(m, m.init_dist, 0, 1)


def test_history_step_index_reported():
    m = PomdpModel(np.eye(2)[None], np.eye(2), np.zeros((2, 1)), np.array([1.0, 0.0]), 0.9)
    with pytest.raises(ZeroProbabilityObservation) as info:
        belief_of_history(m, [(0, 0), (0, 0), (0, 1)])
    assert info.value.step == 2


def test_belief_of_history_base_cases(retail):
    np.testing.assert_array_equal(belief_of_history(retail, ()), retail.init_dist)
    np.testing.assert_allclose(belief_of_history(retail, [(1, 2)]), belief_update(retail, retail.init_dist, 1, 2))


def test_length_three_history_matches_chain(retail):
    H = [(0, 1), (1, 2), (0, 3)]
    b = retail.init_dist
    for a, y in H:
        b = belief_update(retail, b, a, y)
    np.testing.assert_allclose(belief_of_history(retail, H), b, atol=0)


def test_expected_reward_cases(retail):
    assert expected_reward(retail, np.eye(4)[3], 0) == 1.0
    const = retail.replace(reward=np.full((4, 2), -0.7))
    assert expected_reward(const, np.array([0.1, 0.2, 0.3, 0.4]), 1) == pytest.approx(-0.7, abs=1e-15)
    m = random_model(5, S=4)
    assert expected_reward(m, np.full(4, 0.25), 1) == pytest.approx(m.reward[:, 1].mean(), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(small_models(), st.integers(0, 2**31 - 1))
def test_update_properties(model, seed):
    rng = np.random.default_rng(seed)
    belief = rng.dirichlet(np.ones(model.n_states))
    a = int(rng.integers(model.n_actions))
    sigma = obs_likelihood(model, belief, a)
    assert abs(sigma.sum() - 1) <= 1e-9
    for y in range(model.n_obs):
        joint = (belief @ model.transition[a]) * model.obs_kernel[:, y]
        assert abs(joint.sum() - sigma[y]) <= 1e-12
        post = belief_update(model, belief, a, y)
        assert np.all(post >= 0)
        assert abs(post.sum() - 1) <= 1e-9
        assert np.all(np.abs(expected_reward(model, post, a)) <= model.r_bar + 1e-12)


@settings(max_examples=40, deadline=None)
@given(small_models(), st.integers(0, 2**31 - 1), st.integers(0, 6))
def test_prefix_compositional(model, seed, length):
    history, _ = rollout(model, list(np.random.default_rng(seed).integers(model.n_actions, size=length + 1)),
                         length + 1, make_rng(seed))
    H, (a, y) = history[:-1], history[-1]
    np.testing.assert_allclose(belief_of_history(model, history),
                               belief_update(model, belief_of_history(model, H), a, y), atol=1e-12)


# -- simulator ---------------------------------------------------------------

def test_simulator_deterministic_model():
    P = np.zeros((1, 3, 3))
    P[0, [0, 1, 2], [1, 2, 0]] = 1
    reward = np.array([[2.0], [3.0], [4.0]])
    m = PomdpModel(P, np.eye(3), reward, np.full(3, 1 / 3), 0.9)
    assert step_simulator(m, 1, 0, make_rng(7)) == (2, 2, 3.0)


def test_simulator_seed_repeats(retail):
    first = rollout(retail, [0, 1] * 20, 40, make_rng(11))
    second = rollout(retail, [0, 1] * 20, 40, make_rng(11))
    assert first == second


def test_simulator_frequencies(retail):
    rng = make_rng(2024)
    n = 100_000
    counts = np.zeros(4)
    for _ in range(n):
        s2, _, _ = step_simulator(retail, 1, 0, rng)
        counts[s2] += 1
    p = retail.transition[0, 1]
    sd = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sd)


def test_simulator_never_emits_impossible_observation():
    m = envs.tmaze()
    history, steps = rollout(m, [0] * 30, 30, make_rng(0))
    belief_of_history(m, history)  # would raise on an impossible observation
    assert len(steps) == 30
