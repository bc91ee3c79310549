import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superstate_rl import envs
from superstate_rl.bounds import BoundInputs, xi_smdp_pomdp
from superstate_rl.filtering import stability_check
from superstate_rl.learning import (FeatureMap, PolitexConfig, SoftmaxPolicy, TdConfig, default_warmup,
                                    empirical_regret, exploration_ok, make_features, politex_train,
                                    project_ball, recurrent_rows, softmax_rows, td_train)
from superstate_rl.planning import oracle_value, policy_evaluation, value_iteration
from superstate_rl.pomdp import PomdpModel
from superstate_rl.superstates import build, uniform_policy


@pytest.fixture(scope="module")
def toy_l1():
    toy = envs.two_state_toy()
    return toy, build(toy, 1)


# -- features ---------------------------------------------------------------

def test_one_hot_is_orthonormal():
    states = [(), ((0, 0),), ((0, 1),), ((1, 0),)]
    fm = FeatureMap("one-hot", 8, 2, 1, states=states)
    F = fm.matrix().reshape(8, 8)
    np.testing.assert_array_equal(F @ F.T, np.eye(8))


def test_random_projection_is_seeded(toy_l1):
    _, smdp = toy_l1
    f1 = make_features(smdp, "random-projection", dim=3, seed=4)
    f2 = make_features(smdp, "random-projection", dim=3, seed=4)
    np.testing.assert_array_equal(f1.matrix(), f2.matrix())
    assert np.linalg.norm(f1.matrix(), axis=2).max() == pytest.approx(1.0)


def test_belief_features_grow_on_demand(toy_l1):
    toy, _ = toy_l1
    fm = make_features(None, "belief", model=toy, l=2)
    assert fm.n_rows == 1
    j = fm.successor(0, 1, 0)
    assert fm.states[j] == ((1, 0),)
    np.testing.assert_allclose(fm.phi(j, 1)[2:].sum(), 1.0)


def test_unknown_feature_kind(toy_l1):
    with pytest.raises(ValueError):
        make_features(toy_l1[1], "wavelets")


def test_project_ball_examples():
    np.testing.assert_array_equal(project_ball(np.array([0.3, 0.4]), 1.0), [0.3, 0.4])
    np.testing.assert_allclose(project_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    with pytest.raises(ValueError):
        project_ball(np.ones(2), 0.0)


# -- TD ---------------------------------------------------------------------

def test_td_is_deterministic(toy_l1):
    toy, smdp = toy_l1
    pol = uniform_policy(smdp.n_states, 2)
    cfg = TdConfig(tau=3000, seed=12, theta_init="random")
    a, _ = td_train(toy, 1, pol, make_features(smdp), cfg)
    b, _ = td_train(toy, 1, pol, make_features(smdp), cfg)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_zero_reward_shrinks_theta(toy_l1):
    toy, _ = toy_l1
    quiet = toy.replace(reward=np.zeros((2, 2)))
    smdp = build(quiet, 1)
    cfg = TdConfig(tau=10_000, seed=3, theta_init="random", radius=5.0)
    start = np.random.default_rng(0).standard_normal(make_features(smdp).dim)
    start *= 4.0 / np.linalg.norm(start)
    q, _ = td_train(quiet, 1, uniform_policy(smdp.n_states, 2), make_features(smdp), cfg, theta0=start)
    assert np.linalg.norm(q.theta) <= np.linalg.norm(start)


@pytest.mark.parametrize("kind", ["one-hot", "random-projection"])
def test_td_stays_in_ball_with_bounded_steps(toy_l1, kind):
    toy, smdp = toy_l1
    fm = make_features(smdp, kind, dim=4, seed=1)
    cfg = TdConfig(tau=5000, seed=2, radius=1.5, step_size=0.2, log_every=50)
    q, diag = td_train(toy, 1, uniform_policy(smdp.n_states, 2), fm, cfg)
    assert all(norm <= 1.5 + 1e-12 for _, _, norm, _ in diag.rows)
    assert diag.max_step_norm <= 0.2 * (toy.r_bar + 2 * 1.5) + 1e-12


def test_td_rejects_mismatched_window(toy_l1):
    toy, smdp = toy_l1
    with pytest.raises(ValueError):
        td_train(toy, 2, uniform_policy(smdp.n_states, 2), make_features(smdp), TdConfig(tau=10))


def test_warmup_rule():
    assert default_warmup(10_000, 0.5) == math.ceil(math.log(10_000) / (2 * math.log(2)))
    assert default_warmup(10_000, 1.0) == 0
    assert default_warmup(10_000, 0.0) == 1000
    assert default_warmup(100, 1e-6) == 10


def test_recurrent_rows_exclude_start(toy_l1):
    _, smdp = toy_l1
    mask = recurrent_rows(smdp, uniform_policy(smdp.n_states, 2))
    assert not mask[smdp.index_of[()]]
    assert mask.sum() == smdp.n_states - 1


def test_td_on_fully_observed_surrogate(toy_l1):
    # sample from the superstate chain itself, so no belief mismatch enters
    toy, smdp = toy_l1
    n = smdp.n_states
    init = np.zeros(n)
    init[smdp.index_of[()]] = 1.0
    surrogate = PomdpModel(smdp.dense_transition(), np.eye(n), smdp.reward, init, toy.gamma)
    chain = build(surrogate, 1)
    pol = uniform_policy(chain.n_states, 2)
    q_exact, _ = policy_evaluation(chain, pol)
    mask = recurrent_rows(chain, pol)
    errors = []
    for seed in range(3):
        _, diag = td_train(surrogate, 1, pol, make_features(chain), TdConfig(tau=100_000, seed=seed, l_prime=0),
                           q_reference=q_exact, error_mask=mask)
        errors.append(diag.rows[-1][3])
    assert np.median(errors) <= 0.05


# -- policies ---------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-50, 50), st.floats(0.01, 10))
def test_softmax_shift_invariance(seed, shift, eta):
    scores = np.random.default_rng(seed).normal(size=(4, 3)) * 5
    np.testing.assert_allclose(softmax_rows(scores, eta, 0.05), softmax_rows(scores + shift, eta, 0.05), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.9))
def test_softmax_full_support(seed, mix):
    scores = np.random.default_rng(seed).normal(size=(5, 3)) * 1e3
    probs = softmax_rows(scores, 10.0, mix)
    assert probs.min() >= mix / 3 - 1e-15
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_first_politex_policy_is_uniform(toy_l1):
    toy, smdp = toy_l1
    fm = make_features(smdp)
    res = politex_train(toy, 1, fm, PolitexConfig(M=1, td=TdConfig(tau=200)), smdp=smdp)
    np.testing.assert_allclose(res.policy_tables()[0], 0.5)


def test_tiny_eta_keeps_policies_uniform(toy_l1):
    toy, smdp = toy_l1
    res = politex_train(toy, 1, make_features(smdp), PolitexConfig(M=4, td=TdConfig(tau=500), eta=1e-12),
                        smdp=smdp)
    for table in res.policy_tables():
        np.testing.assert_allclose(table, 0.5, atol=1e-9)


def test_politex_policies_explore(toy_l1):
    toy, smdp = toy_l1
    res = politex_train(toy, 1, make_features(smdp), PolitexConfig(M=5, td=TdConfig(tau=2000), eta=20.0),
                        smdp=smdp)
    for table in res.policy_tables():
        assert table.min() >= 0.05 / 2 - 1e-15


def test_politex_is_deterministic(toy_l1):
    toy, smdp = toy_l1
    cfg = PolitexConfig(M=3, td=TdConfig(tau=1000), seed=5)
    a = politex_train(toy, 1, make_features(smdp), cfg, smdp=smdp)
    b = politex_train(toy, 1, make_features(smdp), cfg, smdp=smdp)
    for x, y in zip(a.thetas, b.thetas):
        np.testing.assert_array_equal(x, y)


def test_exploration_check_raises(toy_l1):
    toy, smdp = toy_l1
    assert not exploration_ok(0.55, 1, 0.05, 2)
    with pytest.raises(ValueError):
        politex_train(toy, 1, make_features(smdp), PolitexConfig(M=1, td=TdConfig(tau=10)), rho=0.55)


# -- regret -----------------------------------------------------------------

def test_regret_of_optimal_policy_within_gap_bound():
    toy = envs.two_state_toy()
    rho = stability_check(toy).rho_dobrushin
    ov = oracle_value(toy, toy.init_dist, 0.05)
    for l in (1, 2):
        smdp = build(toy, l)
        greedy = value_iteration(smdp).greedy_policy()
        xi = xi_smdp_pomdp(BoundInputs(r_bar=1, gamma=toy.gamma, rho=rho, l=l))
        for rec in empirical_regret(toy, smdp, [greedy] * 3, [100] * 3, ov.value):
            assert rec.per_iter_gap <= xi + ov.truncation_bound


def test_regret_zero_model():
    toy = envs.two_state_toy().replace(reward=np.zeros((2, 2)))
    smdp = build(toy, 1)
    recs = empirical_regret(toy, smdp, [uniform_policy(smdp.n_states, 2)] * 2, [10, 12], 0.0)
    assert all(r.per_iter_gap == 0 and r.cumulative == 0 for r in recs)


def test_regret_cumulates_by_episode_length():
    toy = envs.two_state_toy()
    smdp = build(toy, 1)
    pol = uniform_policy(smdp.n_states, 2)
    recs = empirical_regret(toy, smdp, [pol, pol], [10, 30], 5.0)
    assert recs[1].cumulative == pytest.approx(40 * recs[0].per_iter_gap)
