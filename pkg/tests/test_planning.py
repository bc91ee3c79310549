import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superstate_rl import envs
from superstate_rl.errors import NotConverged
from superstate_rl.planning import (belief_tree_value, default_depth, greedy_actions, oracle_value,
                                    policy_evaluation, theorem2_gap, value_iteration, _backup)
from superstate_rl.pomdp import PomdpModel, belief_of_history
from superstate_rl.superstates import build, uniform_policy

from conftest import fully_observed, random_model


def one_state(r=1.0, g=0.9):
    return PomdpModel(np.ones((1, 1, 1)), np.ones((1, 1)), np.full((1, 1), r), np.ones(1), g)


def test_geometric_series():
    vt = value_iteration(build(one_state(), 1), tol=1e-12)
    np.testing.assert_allclose(vt.values, 10.0, atol=1e-9)


def test_zero_rewards(retail):
    smdp = build(retail.replace(reward=np.zeros((4, 2))), 2)
    assert np.all(value_iteration(smdp).values == 0)
    q, v = policy_evaluation(smdp, uniform_policy(smdp.n_states, 2))
    assert np.all(q == 0) and np.all(v == 0)


def test_values_are_max_of_q(retail):
    vt = value_iteration(build(retail, 2))
    np.testing.assert_array_equal(vt.values, vt.q_values.max(axis=1))
    np.testing.assert_array_equal(vt.q_values[np.arange(len(vt.greedy)), vt.greedy], vt.values)


@pytest.mark.parametrize("seed", range(3))
def test_fixed_point_matches_linear_solve(seed):
    m = fully_observed(seed, S=3, A=2)
    smdp = build(m, 1)
    vt = value_iteration(smdp, tol=1e-12)
    n = smdp.n_states
    pol = vt.greedy_policy()
    P = sum(pol[:, [a]] * smdp.dense_transition()[a] for a in range(2))
    r = (pol * smdp.reward).sum(axis=1)
    v = np.linalg.solve(np.eye(n) - m.gamma * P, r)
    np.testing.assert_allclose(vt.values, v, atol=1e-9)


def test_contraction_of_sweeps(retail):
    smdp = build(retail, 2)
    v = np.zeros(smdp.n_states)
    residuals = []
    for _ in range(30):
        v_new = _backup(smdp, v).max(axis=1)
        residuals.append(np.max(np.abs(v_new - v)))
        v = v_new
    for k, res in enumerate(residuals):
        assert res <= retail.gamma ** k * residuals[0] + 1e-9


def test_not_converged(retail):
    with pytest.raises(NotConverged):
        value_iteration(build(retail, 1), tol=1e-12, max_iter=3)


def test_ties_go_to_lowest_index():
    q = np.array([[1.0, 1.0, 0.5], [0.2, 0.9, 0.9], [3.0, 2.0, 3.0]])
    np.testing.assert_array_equal(greedy_actions(q), [0, 1, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_greedy_invariant_to_positive_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    q = rng.integers(0, 3, size=(6, 4)).astype(float)
    np.testing.assert_array_equal(greedy_actions(q), greedy_actions(q * scale))


def test_single_action_evaluation_is_optimal():
    m = random_model(2, S=3, A=1, Y=2)
    smdp = build(m, 2)
    _, v = policy_evaluation(smdp, np.ones((smdp.n_states, 1)))
    np.testing.assert_allclose(v, value_iteration(smdp, tol=1e-13).values, atol=1e-9)


def test_exact_and_iterative_agree(retail):
    smdp = build(retail, 1)
    pol = uniform_policy(smdp.n_states, 2)
    q1, v1 = policy_evaluation(smdp, pol, method="exact")
    q2, v2 = policy_evaluation(smdp, pol, method="iterative")
    np.testing.assert_allclose(v1, v2, atol=1e-8)
    np.testing.assert_allclose(q1, q2, atol=1e-8)


def test_unknown_method(retail):
    smdp = build(retail, 1)
    with pytest.raises(ValueError, match="unknown method"):
        policy_evaluation(smdp, uniform_policy(smdp.n_states, 2), method="magic")


# -- belief tree -------------------------------------------------------------

def test_depth_zero(retail):
    ov = belief_tree_value(retail, retail.init_dist, 0)
    assert ov.value == 0.0
    assert ov.truncation_bound == pytest.approx(10.0)


@pytest.mark.parametrize("depth", [1, 3, 5])
def test_constant_reward_closed_form(retail, depth):
    c = 0.4
    m = retail.replace(reward=np.full((4, 2), c))
    ov = belief_tree_value(m, m.init_dist, depth)
    assert ov.value == pytest.approx(c * (1 - 0.9 ** depth) / (1 - 0.9), abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_fully_observed_tree_matches_mdp(seed):
    m = fully_observed(seed, S=3, A=2)
    q = np.zeros((3, 2))
    for _ in range(3000):
        q = m.reward + m.gamma * np.einsum("ast,t->sa", m.transition, q.max(axis=1))
    for s in range(3):
        ov = belief_tree_value(m, np.eye(3)[s], 8)
        assert abs(ov.value - q[s].max()) <= ov.truncation_bound + 1e-12
        cert = belief_tree_value(m, np.eye(3)[s], 2, leaf="bounds")
        assert abs(cert.value - q[s].max()) <= cert.truncation_bound + 1e-9


def test_successive_depths_shrink_by_gamma(toy):
    values = [belief_tree_value(toy, toy.init_dist, d).value for d in range(9)]
    diffs = np.abs(np.diff(values))
    for d in range(len(diffs)):
        assert diffs[d] <= toy.gamma ** d * toy.r_bar + 1e-9


def test_bounds_leaf_brackets_zero_leaf(toy):
    for d in (2, 4, 6):
        zero = belief_tree_value(toy, toy.init_dist, d)
        cert = belief_tree_value(toy, toy.init_dist, d, leaf="bounds")
        assert cert.truncation_bound <= zero.truncation_bound
        # the two intervals must overlap
        assert cert.lower <= zero.value + zero.truncation_bound + 1e-12
        assert zero.value - zero.truncation_bound <= cert.upper + 1e-12


def test_oracle_reaches_tolerance(retail):
    ov = oracle_value(retail, retail.init_dist, 1e-6)
    assert ov.truncation_bound <= 1e-6
    deep = belief_tree_value(retail, retail.init_dist, 6)
    assert abs(ov.value - deep.value) <= deep.truncation_bound + 1e-6


def test_default_depth_budget():
    m = envs.customer_retail()
    d = default_depth(m)
    assert 0.9 ** d / 0.1 <= 0.05 < 0.9 ** (d - 1) / 0.1


# -- superstate versus POMDP gap ---------------------------------------------

def test_gap_vanishes_when_window_covers_history():
    m = fully_observed(1, S=3, A=2)
    smdp = build(m, 4)
    histories = [((0, 1),), ((1, 2), (0, 0)), ((0, 0), (1, 1), (1, 2))]
    for rec in theorem2_gap(m, smdp, histories, rho=0.9, tol=1e-8):
        assert rec.gap <= rec.truncation + 1e-7


def test_gap_needs_one_oracle(retail):
    with pytest.raises(ValueError):
        theorem2_gap(retail, build(retail, 1), [()], rho=0.55)


def test_gap_record_fields(retail):
    smdp = build(retail, 1)
    rec, = theorem2_gap(retail, smdp, [((0, 3), (1, 2))], rho=0.55, depth=6)
    assert rec.slack == pytest.approx(rec.xi_bound + rec.truncation - rec.gap)
    assert rec.rho_source == "dobrushin"
    assert rec.gap >= 0


def test_tmaze_gap_is_half_the_value(maze):
    hint = maze.labels["observations"].index("hint1")
    pos = [maze.labels["observations"].index(f"pos{i}") for i in (2, 3, 4)]
    # walk to the junction; windows of length <= 3 have forgotten the hint
    H = ((0, hint), (0, pos[0]), (0, pos[1]), (0, pos[2]))
    for l in (1, 3):
        rec, = theorem2_gap(maze, build(maze, l), [H], rho=0.55, tol=1e-6)
        assert rec.gap == pytest.approx(rec.v_star / 2, rel=1e-3)
