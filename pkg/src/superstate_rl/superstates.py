"""Truncated-history superstates and the finite superstate MDP built on them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ZeroProbabilityObservation
from .filtering import dobrushin
from .pomdp import PomdpModel, filter_from, obs_likelihood

Superstate = tuple  # tuple[tuple[int, int], ...], length <= l


def group(history, l: int) -> Superstate:
    """Keep the last ``l`` (action, observation) pairs of ``history``."""
    if l < 1:
        raise ValueError("l must be >= 1")
    h = tuple(tuple(p) for p in history)
    return h[-l:] if len(h) > l else h


def rep_belief(model: PomdpModel, superstate: Superstate, l: int) -> np.ndarray:
    """Representative belief pi(.|B).

    Warm-start prefixes (shorter than ``l``) are whole histories and are
    filtered from ``init_dist``.  Full-length superstates are filtered from
    ``model.filter_prior``, which equals ``init_dist`` unless the model
    supplies its own prior for truncated histories.
    """
    prior = model.init_dist if len(superstate) < l else model.filter_prior
    return filter_from(model, prior, superstate)


def enumerate_reachable(model: PomdpModel, l: int) -> list:
    """Breadth-first closure of superstates reachable from the empty history.

    Each BFS layer is sorted lexicographically, so the ordering is fully
    deterministic.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    seen = {(): None}
    order = [()]
    layer = [()]
    while layer:
        nxt = set()
        for B in layer:
            try:
                belief = rep_belief(model, B, l)
            except ZeroProbabilityObservation:
                raise ZeroProbabilityObservation(
                    f"superstate {B} is reached along a trajectory but has probability 0 when filtered "
                    "from the model's prior; give the model a superstate_prior with full support"
                ) from None
            for a in range(model.n_actions):
                sigma = obs_likelihood(model, belief, a)
                for y in np.flatnonzero(sigma > 0):
                    B2 = group(B + ((a, int(y)),), l)
                    if B2 not in seen:
                        nxt.add(B2)
        layer = sorted(nxt)
        for B in layer:
            seen[B] = None
        order.extend(layer)
    return order


@dataclass(frozen=True, eq=False)
class SuperstateMdp:
    """Finite MDP over superstates.

    ``transition[a]`` is a sparse ``(N, N)`` matrix with entry ``[i, j]`` equal
    to the probability of moving from superstate ``i`` to ``j`` under ``a``.
    """

    states: list
    index_of: dict
    transition: list
    reward: np.ndarray
    rep_belief: np.ndarray
    l: int
    gamma: float

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.transition)

    @property
    def r_bar(self) -> float:
        return float(np.max(np.abs(self.reward))) if self.reward.size else 0.0

    def dense_transition(self) -> np.ndarray:
        return np.stack([t.toarray() for t in self.transition])

    def policy_matrix(self, policy: np.ndarray) -> sparse.csr_matrix:
        """Superstate chain M[i, j] = sum_a policy[i, a] * P[a][i, j]."""
        m = sparse.csr_matrix((self.n_states, self.n_states))
        for a, t in enumerate(self.transition):
            m = m + sparse.diags(policy[:, a]) @ t
        return m.tocsr()

    def to_dict(self) -> dict:
        """Serialise as a fully observed model file plus a superstate table."""
        n = self.n_states
        init = [0.0] * n
        init[self.index_of[()]] = 1.0
        return {
            "kind": "superstate_mdp",
            "l": self.l,
            "n_states": n,
            "n_actions": self.n_actions,
            "n_obs": n,
            "gamma": self.gamma,
            "init_dist": init,
            "transition": self.dense_transition().tolist(),
            "obs_kernel": np.eye(n).tolist(),
            "reward": self.reward.tolist(),
            "superstates": [[list(p) for p in B] for B in self.states],
            "rep_belief": self.rep_belief.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuperstateMdp":
        states = [tuple(tuple(int(v) for v in p) for p in B) for B in d["superstates"]]
        trans = [sparse.csr_matrix(np.asarray(t, dtype=float)) for t in d["transition"]]
        return cls(
            states=states,
            index_of={B: i for i, B in enumerate(states)},
            transition=trans,
            reward=np.asarray(d["reward"], dtype=float),
            rep_belief=np.asarray(d.get("rep_belief", np.zeros((len(states), 0))), dtype=float),
            l=int(d["l"]),
            gamma=float(d["gamma"]),
        )


def build(model: PomdpModel, l: int, states=None) -> SuperstateMdp:
    """Construct rewards and transitions of the superstate MDP.

    ``r~(B, a) = sum_s pi(s|B) r(s, a)`` and ``P~(B'|B, a)`` accumulates
    ``sigma(pi(.|B), y, a)`` over the observations ``y`` whose extension
    regroups to ``B'``.
    """
    if states is None:
        states = enumerate_reachable(model, l)
    index_of = {B: i for i, B in enumerate(states)}
    n, A = len(states), model.n_actions
    beliefs = np.empty((n, model.n_states))
    reward = np.empty((n, A))
    rows = [[] for _ in range(A)]
    cols = [[] for _ in range(A)]
    vals = [[] for _ in range(A)]
    for i, B in enumerate(states):
        try:
            belief = rep_belief(model, B, l)
        except ZeroProbabilityObservation as exc:
            raise ZeroProbabilityObservation(f"superstate {B} is unreachable: {exc}", step=exc.step) from None
        beliefs[i] = belief
        reward[i] = belief @ model.reward
        for a in range(A):
            sigma = obs_likelihood(model, belief, a)
            for y in np.flatnonzero(sigma > 0):
                B2 = group(B + ((a, int(y)),), l)
                j = index_of.get(B2)
                if j is None:
                    raise KeyError(f"successor {B2} of {B} missing from the superstate list")
                rows[a].append(i)
                cols[a].append(j)
                vals[a].append(sigma[y])
    trans = [
        sparse.csr_matrix((vals[a], (rows[a], cols[a])), shape=(n, n))  # duplicates are summed
        for a in range(A)
    ]
    return SuperstateMdp(states, index_of, trans, reward, beliefs, l, model.gamma)


def superstate_mixing(smdp: SuperstateMdp, policy: np.ndarray) -> float:
    """Dobrushin overlap coefficient rho' of the policy-induced superstate chain."""
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (smdp.n_states, smdp.n_actions):
        raise ValueError("policy must have one row per superstate")
    return dobrushin(smdp.policy_matrix(policy).toarray())


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)
