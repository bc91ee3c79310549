"""Exact solvers for the superstate MDP and a belief-tree oracle for the POMDP.

The oracle expands the belief tree breadth-first, dropping zero-probability
observation branches and merging bit-identical beliefs within a layer.  Leaves
are valued either at zero (the classic depth-limited recursion) or with a pair
of certified bounds on the optimal POMDP value:

* lower: the best blind (single fixed action) policy, linear in the belief;
* upper: the fast informed bound, a max of linear functions.

Both bounds are preserved by Bellman backups, so the root interval brackets
the optimal value and its half-width is a certified error bar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import NotConverged
from .pomdp import PomdpModel, belief_of_history
from .superstates import SuperstateMdp, group

TIE_RTOL = 1e-10


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax with ties resolved to the lowest action index."""
    top = q.max(axis=1, keepdims=True)
    near = q >= top - TIE_RTOL * np.maximum(1.0, np.abs(top))
    return near.argmax(axis=1)


@dataclass
class ValueTable:
    values: np.ndarray
    q_values: np.ndarray
    greedy: np.ndarray
    residual: float
    iterations: int = 0

    def greedy_policy(self) -> np.ndarray:
        pol = np.zeros_like(self.q_values)
        pol[np.arange(len(self.greedy)), self.greedy] = 1.0
        return pol


def _backup(smdp: SuperstateMdp, v: np.ndarray) -> np.ndarray:
    q = np.empty((smdp.n_states, smdp.n_actions))
    for a, t in enumerate(smdp.transition):
        q[:, a] = smdp.reward[:, a] + smdp.gamma * (t @ v)
    return q


def value_iteration(smdp: SuperstateMdp, tol: float = 1e-10, max_iter: int = 100_000) -> ValueTable:
    """Iterate the Bellman optimality operator until successive sup-norm change <= tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(smdp.n_states)
    residual = math.inf
    for it in range(1, max_iter + 1):
        q = _backup(smdp, v)
        v_new = q.max(axis=1)
        residual = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        v = v_new
        if residual <= tol:
            q = _backup(smdp, v)
            return ValueTable(q.max(axis=1), q, greedy_actions(q), residual, it)
    raise NotConverged(f"value iteration residual {residual:.3e} > {tol:.1e} after {max_iter} sweeps", residual)


def policy_evaluation(smdp: SuperstateMdp, policy: np.ndarray, method: str = "exact", tol: float = 1e-12,
                      max_iter: int = 1_000_000):
    """Q and V of a stationary superstate policy.

    Returns
    -------
    q : ndarray (N, A)
    v : ndarray (N,)
    """
    policy = np.asarray(policy, dtype=float)
    r_mu = (policy * smdp.reward).sum(axis=1)
    p_mu = smdp.policy_matrix(policy)
    g = smdp.gamma
    if method == "exact":
        n = smdp.n_states
        system = (sparse.identity(n, format="csc") - g * p_mu.tocsc())
        v = np.atleast_1d(spsolve(system, r_mu))
    elif method == "iterative":
        v = np.zeros(smdp.n_states)
        stop = tol * (1.0 - g) if g > 0 else tol
        for _ in range(max_iter):
            v_new = r_mu + g * (p_mu @ v)
            done = np.max(np.abs(v_new - v)) <= stop
            v = v_new
            if done:
                break
        else:
            raise NotConverged("iterative policy evaluation did not converge", float(np.max(np.abs(v_new - v))))
    else:
        raise ValueError(f"unknown method {method!r}")
    return _backup(smdp, v), v


# ---------------------------------------------------------------------------
# belief-tree oracle


@dataclass(frozen=True)
class OracleValue:
    value: float
    truncation_bound: float
    depth: int
    lower: float = float("nan")
    upper: float = float("nan")
    nodes: int = 0


def mdp_q_values(model: PomdpModel, tol: float = 1e-12) -> np.ndarray:
    """Q-function of the fully observed MDP over hidden states."""
    q = np.zeros((model.n_states, model.n_actions))
    for _ in range(1_000_000):
        v = q.max(axis=1)
        q_new = model.reward + model.gamma * np.einsum("ast,t->sa", model.transition, v)
        if np.max(np.abs(q_new - q)) <= tol:
            return q_new
        q = q_new
    raise NotConverged("MDP value iteration did not converge", float(np.max(np.abs(q_new - q))))


def blind_alpha_vectors(model: PomdpModel) -> np.ndarray:
    """Value of always playing action a, one column per action (lower bounds)."""
    S = model.n_states
    cols = []
    for a in range(model.n_actions):
        cols.append(np.linalg.solve(np.eye(S) - model.gamma * model.transition[a], model.reward[:, a]))
    return np.stack(cols, axis=1)


def fast_informed_bound(model: PomdpModel, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Alpha vectors of the fast informed bound (upper bound), one column per action."""
    # alpha_a(s) = r(s,a) + g * sum_y max_a' sum_s' P(s'|s,a) O(y|s') alpha_a'(s')
    alpha = mdp_q_values(model)
    PO = np.einsum("ast,ty->asty", model.transition, model.obs_kernel)  # (A,S,S',Y)
    for _ in range(max_iter):
        inner = np.einsum("asty,tb->asyb", PO, alpha)  # (A,S,Y,A')
        new = model.reward.T + model.gamma * inner.max(axis=3).sum(axis=2)  # (A,S)
        new = new.T
        if np.max(np.abs(new - alpha)) <= tol:
            return new
        alpha = new
    raise NotConverged("fast informed bound did not converge", float(np.max(np.abs(new - alpha))))


@dataclass
class _Layer:
    beliefs: np.ndarray                   # (n, S)
    parent: Optional[np.ndarray] = None   # per edge into this layer
    action: Optional[np.ndarray] = None
    prob: Optional[np.ndarray] = None
    child: Optional[np.ndarray] = None    # unique-node index of each edge
    expanded: Optional[np.ndarray] = None  # (n,) bool, set once the next layer exists


class BeliefTree:
    """Breadth-first belief tree rooted at a single belief.

    ``leaf`` selects the value of unexpanded nodes: ``"zero"`` or ``"bounds"``.
    In bounds mode, nodes whose two bounds already agree (to ``settle_tol``) are
    not expanded further.
    """

    def __init__(self, model: PomdpModel, belief: np.ndarray, leaf: str = "zero", settle_tol: float = 1e-12):
        if leaf not in ("zero", "bounds"):
            raise ValueError("leaf must be 'zero' or 'bounds'")
        self.model = model
        self.leaf = leaf
        self.settle_tol = settle_tol
        self.layers = [_Layer(np.asarray(belief, dtype=float)[None, :].copy())]
        self.edges = []  # edges[k] connects layers[k] -> layers[k+1]
        if leaf == "bounds":
            self._lo_alpha = blind_alpha_vectors(model)
            self._hi_alpha = fast_informed_bound(model)

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    @property
    def n_nodes(self) -> int:
        return sum(len(L.beliefs) for L in self.layers)

    def leaf_bounds(self, beliefs: np.ndarray):
        if self.leaf == "zero":
            z = np.zeros(len(beliefs))
            return z, z
        return (beliefs @ self._lo_alpha).max(axis=1), (beliefs @ self._hi_alpha).max(axis=1)

    def next_layer_size(self) -> int:
        """Upper estimate of the node count the next expansion would add."""
        m = self.model
        return len(self.layers[-1].beliefs) * m.n_actions * m.n_obs

    def expand(self) -> int:
        """Add one layer; returns the number of new unique beliefs."""
        m = self.model
        top = self.layers[-1]
        X = top.beliefs
        if self.leaf == "bounds":
            lo, hi = self.leaf_bounds(X)
            active = (hi - lo) > self.settle_tol
        else:
            active = np.ones(len(X), dtype=bool)
        top.expanded = active
        idx = np.flatnonzero(active)
        parents, actions, probs, kids = [], [], [], []
        for a in range(m.n_actions):
            pred = X[idx] @ m.transition[a]                        # (k, S)
            joint = pred[:, :, None] * m.obs_kernel[None, :, :]    # (k, S, Y)
            sigma = joint.sum(axis=1)                              # (k, Y)
            pi, yi = np.nonzero(sigma > 0)
            if len(pi) == 0:
                continue
            kids.append(joint[pi, :, yi] / sigma[pi, yi][:, None])
            parents.append(idx[pi])
            actions.append(np.full(len(pi), a))
            probs.append(sigma[pi, yi])
        if kids:
            children = np.concatenate(kids)
            uniq, inverse = np.unique(children, axis=0, return_inverse=True)
            edge = dict(parent=np.concatenate(parents), action=np.concatenate(actions),
                        prob=np.concatenate(probs), child=inverse.reshape(-1))
        else:
            uniq = np.zeros((0, m.n_states))
            edge = dict(parent=np.zeros(0, int), action=np.zeros(0, int), prob=np.zeros(0), child=np.zeros(0, int))
        self.edges.append(edge)
        self.layers.append(_Layer(uniq))
        return len(uniq)

    def evaluate(self):
        """Back up leaf values to the root; returns ``(lower, upper)``."""
        m = self.model
        A, g = m.n_actions, m.gamma
        lo, hi = self.leaf_bounds(self.layers[-1].beliefs)
        for k in range(len(self.layers) - 2, -1, -1):
            layer, edge = self.layers[k], self.edges[k]
            n = len(layer.beliefs)
            base = layer.beliefs @ m.reward                        # (n, A)
            key = edge["parent"] * A + edge["action"]
            cont_lo = np.bincount(key, weights=edge["prob"] * lo[edge["child"]], minlength=n * A).reshape(n, A)
            cont_hi = np.bincount(key, weights=edge["prob"] * hi[edge["child"]], minlength=n * A).reshape(n, A)
            new_lo = (base + g * cont_lo).max(axis=1)
            new_hi = (base + g * cont_hi).max(axis=1)
            leaf_lo, leaf_hi = self.leaf_bounds(layer.beliefs)
            keep = ~layer.expanded
            new_lo[keep] = leaf_lo[keep]
            new_hi[keep] = leaf_hi[keep]
            lo, hi = new_lo, new_hi
        return float(lo[0]), float(hi[0])


def zero_leaf_bound(model: PomdpModel, depth: int) -> float:
    if model.gamma == 0.0:
        return 0.0 if depth > 0 else model.r_bar
    return model.gamma ** depth * model.r_bar / (1.0 - model.gamma)


def belief_tree_value(model: PomdpModel, belief: np.ndarray, depth: int, leaf: str = "zero") -> OracleValue:
    """Depth-limited expectimax value of ``belief``.

    With ``leaf="zero"`` this is ``V_depth`` with ``V_0 = 0`` and the error bar
    is ``gamma**depth * r_bar / (1 - gamma)``.  With ``leaf="bounds"`` the value
    is the midpoint of a certified interval and the error bar its half-width
    (never larger than the zero-leaf bar).
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    tree = BeliefTree(model, belief, leaf=leaf)
    for _ in range(depth):
        tree.expand()
    lo, hi = tree.evaluate()
    if leaf == "zero":
        return OracleValue(lo, zero_leaf_bound(model, depth), depth, lo, lo, tree.n_nodes)
    return _bracket(lo, hi, depth, tree.n_nodes)


def _bracket(lo, hi, depth, nodes) -> OracleValue:
    # the two bounds can cross by rounding error once they meet
    if lo > hi:
        lo = hi = 0.5 * (lo + hi)
    return OracleValue(0.5 * (lo + hi), 0.5 * (hi - lo), depth, lo, hi, nodes)


def default_depth(model: PomdpModel, fraction: float = 0.05) -> int:
    """Smallest d with gamma^d * r_bar / (1 - gamma) <= fraction * r_bar."""
    g = model.gamma
    if g == 0.0:
        return 1
    return max(0, math.ceil(math.log(fraction * (1.0 - g)) / math.log(g)))


def oracle_value(model: PomdpModel, belief: np.ndarray, tol: float, max_nodes: int = 2_000_000,
                 max_depth: int = 200) -> OracleValue:
    """Certified V*(belief): deepen a bounds-leaf tree until the half-width <= tol.

    Stops early (returning the best interval found) when the next layer would
    exceed ``max_nodes`` candidate children or ``max_depth`` is reached.
    """
    tree = BeliefTree(model, belief, leaf="bounds")
    lo, hi = tree.evaluate()
    while 0.5 * (hi - lo) > tol and tree.depth < max_depth:
        if tree.next_layer_size() > max_nodes:
            break
        tree.expand()
        lo, hi = tree.evaluate()
    return _bracket(lo, hi, tree.depth, tree.n_nodes)


@dataclass(frozen=True)
class GapRecord:
    history: tuple
    v_star: float
    v_smdp: float
    gap: float
    xi_bound: float
    truncation: float
    slack: float
    rho: float
    rho_source: str


def theorem2_gap(model: PomdpModel, smdp: SuperstateMdp, histories: Sequence, rho: float,
                 rho_source: str = "dobrushin", depth: Optional[int] = None, tol: Optional[float] = None,
                 values: Optional[ValueTable] = None, max_nodes: int = 2_000_000, oracle_cache=None):
    """Compare the POMDP optimum at pi(H) with the superstate optimum at G(H).

    Exactly one of ``depth`` (zero-leaf expectimax) or ``tol`` (certified
    bounds oracle) selects the oracle.  ``oracle_cache`` maps a history to an
    ``OracleValue`` so sweeps over ``l`` reuse the expensive part.
    """
    from .bounds import BoundInputs, xi_smdp_pomdp

    if (depth is None) == (tol is None):
        raise ValueError("pass exactly one of depth or tol")
    if values is None:
        values = value_iteration(smdp, tol=1e-11)
    r_bar = model.r_bar
    xi = xi_smdp_pomdp(BoundInputs(r_bar=r_bar, gamma=model.gamma, rho=rho, l=smdp.l))
    out = []
    for H in histories:
        H = tuple(tuple(p) for p in H)
        ov = None if oracle_cache is None else oracle_cache.get(H)
        if ov is None:
            belief = belief_of_history(model, H)
            if depth is not None:
                ov = belief_tree_value(model, belief, depth)
            else:
                ov = oracle_value(model, belief, tol, max_nodes=max_nodes)
            if oracle_cache is not None:
                oracle_cache[H] = ov
        v_smdp = float(values.values[smdp.index_of[group(H, smdp.l)]])
        gap = abs(ov.value - v_smdp)
        out.append(GapRecord(H, ov.value, v_smdp, gap, xi, ov.truncation_bound,
                             xi + ov.truncation_bound - gap, rho, rho_source))
    return out
