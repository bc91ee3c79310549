"""Filter stability diagnostics.

The Dobrushin coefficient used here is the *overlap* form,
``delta(M) = min_{x != y} sum_z min(M[x, z], M[y, z])``, so 1 means identical
rows and 0 means some pair of rows has disjoint support.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModel, InvalidStochasticMatrix, ZeroProbabilityObservation
from .pomdp import ROW_TOL, PomdpModel, belief_update, filter_from, rollout

TV_FLOOR = 1e-12


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def dobrushin(matrix) -> float:
    """Minimum pairwise row overlap of a row-stochastic matrix."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise InvalidStochasticMatrix("expected a 2-D matrix")
    if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > ROW_TOL):
        raise InvalidStochasticMatrix("every row must be a probability vector")
    n = m.shape[0]
    if n < 2:
        return 1.0
    if n <= 64:
        overlap = np.minimum(m[:, None, :], m[None, :, :]).sum(axis=2)
        iu = np.triu_indices(n, k=1)
        return float(min(1.0, overlap[iu].min()))
    best = 1.0
    for i in range(n - 1):
        best = min(best, float(np.minimum(m[i], m[i + 1:]).sum(axis=1).min()))
    return best


def transition_dobrushin(model: PomdpModel) -> float:
    return min(dobrushin(model.transition[a]) for a in range(model.n_actions))


@dataclass(frozen=True)
class StabilityReport:
    delta_P: float
    delta_Phi: float
    product: float
    stable: bool
    rho_dobrushin: float

    CSV_HEADER = "delta_P,delta_Phi,product,stable,rho_dobrushin"

    def as_csv_row(self) -> str:
        return f"{self.delta_P!r},{self.delta_Phi!r},{self.product!r},{str(self.stable).lower()},{self.rho_dobrushin!r}"

    def as_text(self) -> str:
        rows = [
            ("delta_P", f"{self.delta_P:.12g}"),
            ("delta_Phi", f"{self.delta_Phi:.12g}"),
            ("product", f"{self.product:.12g}"),
            ("stable", str(self.stable).lower()),
            ("rho_dobrushin", f"{self.rho_dobrushin:.12g}"),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}} = {v}" for k, v in rows)


def stability_check(model: PomdpModel) -> StabilityReport:
    dp = transition_dobrushin(model)
    dphi = dobrushin(model.obs_kernel)
    product = (1.0 - dp) * (1.0 - dphi)
    return StabilityReport(dp, dphi, product, product < 1.0, 1.0 - product)


@dataclass(frozen=True)
class ContractionEstimate:
    rho_hat: float
    max_ratio: float
    worst_pair: tuple  # (belief, belief, action, observation)
    n_pairs: int

    @property
    def contractive(self) -> bool:
        """True when every sampled ratio is strictly below 1."""
        return self.max_ratio < 1.0 - 1e-9

    @property
    def expansive(self) -> bool:
        return self.max_ratio > 1.0 + 1e-9


def _belief_pairs(n_states: int, n_pairs: int, rng: np.random.Generator) -> np.ndarray:
    eye = np.eye(n_states)
    iu, ju = np.triu_indices(n_states, k=1)
    vertices = np.stack([eye[iu], eye[ju]], axis=1)
    # Dirichlet(1,...,1) as normalised exponentials; fills row-major, so a
    # larger n_pairs only appends pairs
    e = rng.standard_exponential(size=(n_pairs, 2, n_states))
    random_pairs = e / e.sum(axis=2, keepdims=True)
    return np.concatenate([vertices, random_pairs], axis=0)


def estimate_rho(model: PomdpModel, n_pairs: int, rng: np.random.Generator) -> ContractionEstimate:
    """Empirical contraction modulus of the one-step Bayes operators.

    Maximises ``TV(K pi, K pi') / TV(pi, pi')`` over all simplex-vertex pairs,
    ``n_pairs`` random pairs and every (a, y) whose update is defined for both
    beliefs.  ``rho_hat = 1 - max_ratio`` (it may be negative when some update
    expands TV distance).
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    pairs = _belief_pairs(model.n_states, n_pairs, rng)
    p1, p2 = pairs[:, 0], pairs[:, 1]
    base = 0.5 * np.abs(p1 - p2).sum(axis=1)
    ok_base = base >= TV_FLOOR
    best = (-1.0, None)
    any_valid = False
    for a in range(model.n_actions):
        pred1 = p1 @ model.transition[a]
        pred2 = p2 @ model.transition[a]
        for y in range(model.n_obs):
            j1 = pred1 * model.obs_kernel[:, y]
            j2 = pred2 * model.obs_kernel[:, y]
            n1 = j1.sum(axis=1)
            n2 = j2.sum(axis=1)
            valid = ok_base & (n1 > 0) & (n2 > 0)
            if not valid.any():
                continue
            any_valid = True
            idx = np.flatnonzero(valid)
            q1 = j1[idx] / n1[idx, None]
            q2 = j2[idx] / n2[idx, None]
            ratio = 0.5 * np.abs(q1 - q2).sum(axis=1) / base[idx]
            k = int(np.argmax(ratio))
            if ratio[k] > best[0]:
                i = idx[k]
                best = (float(ratio[k]), (p1[i].copy(), p2[i].copy(), a, y))
    if not any_valid:
        raise DegenerateModel("no (a, y) gives a well-defined update for any sampled pair")
    max_ratio, worst = best
    return ContractionEstimate(1.0 - max_ratio, max_ratio, worst, int(len(pairs)))


def _uniform_policy(model):
    def pick(history, rng):
        return int(rng.integers(model.n_actions))

    return pick


def sample_same_superstate_pair(model: PomdpModel, l: int, rng: np.random.Generator, max_prefix: int = 6):
    """Draw two histories that share their last ``l`` pairs.

    Both are simulated from the true POMDP under uniformly random actions.
    Returns ``None`` if the pair is identical or the second prefix makes the
    shared suffix impossible.
    """
    k1 = int(rng.integers(0, max_prefix + 1))
    k2 = int(rng.integers(0, max_prefix + 1))
    h1, _ = rollout(model, _uniform_policy(model), k1 + l, rng)
    p2, _ = rollout(model, _uniform_policy(model), k2, rng)
    suffix = h1[k1:]
    h2 = p2 + suffix
    if h1 == h2:
        return None
    try:
        b2 = filter_from(model, filter_from(model, model.init_dist, p2), suffix)
    except ZeroProbabilityObservation:
        return None
    b1 = filter_from(model, model.init_dist, h1)
    return h1, h2, b1, b2


def lemma1_gap(model: PomdpModel, l: int, n_samples: int, rng: np.random.Generator, max_prefix: int = 6) -> float:
    """Largest TV distance between beliefs of sampled same-superstate histories.

    Returns 0.0 when no distinct pair was found.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    gap = 0.0
    for _ in range(n_samples):
        drawn = sample_same_superstate_pair(model, l, rng, max_prefix)
        if drawn is None:
            continue
        gap = max(gap, tv_distance(drawn[2], drawn[3]))
    return gap


__all__ = [
    "ContractionEstimate",
    "StabilityReport",
    "dobrushin",
    "estimate_rho",
    "lemma1_gap",
    "stability_check",
    "transition_dobrushin",
    "tv_distance",
]
