"""Closed-form error bounds and two constructive inequality checkers.

All evaluators are pure functions of a validated :class:`BoundInputs`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BoundRangeError, DimensionMismatch, NotSimplex

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class BoundInputs:
    """Constants shared by the bound evaluators.

    Parameters
    ----------
    r_bar : float
        Reward magnitude bound.
    gamma : float
        Discount in [0, 1).
    rho, rho_prime : float
        Filter contraction and superstate-chain mixing moduli in (0, 1].
    l, l_prime : int
        Superstate window and TD warm-up length.
    tau : int
        TD iterations per policy.
    R : float
        Radius of the parameter ball.
    xi_fa : float
        Function-approximation floor.
    """

    r_bar: float = 1.0
    gamma: float = 0.9
    rho: float = 0.5
    rho_prime: float = 0.5
    l: int = 1
    l_prime: int = 0
    tau: int = 1
    R: float = 1.0
    xi_fa: float = 0.0
    n_actions: int = 2
    M: int = 1

    def __post_init__(self):
        checks = [
            (self.r_bar >= 0, "r_bar must be >= 0"),
            (0.0 <= self.gamma < 1.0, "gamma must lie in [0, 1)"),
            (0.0 < self.rho <= 1.0, "rho must lie in (0, 1]"),
            (0.0 < self.rho_prime <= 1.0, "rho_prime must lie in (0, 1]"),
            (int(self.l) == self.l and self.l >= 0, "l must be an integer >= 0"),
            (int(self.l_prime) == self.l_prime and self.l_prime >= 0, "l_prime must be an integer >= 0"),
            (int(self.tau) == self.tau and self.tau >= 1, "tau must be an integer >= 1"),
            (self.R > 0, "R must be > 0"),
            (self.xi_fa >= 0, "xi_fa must be >= 0"),
            (self.n_actions >= 1, "n_actions must be >= 1"),
            (self.M >= 1, "M must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise BoundRangeError(msg)
        for name in ("r_bar", "gamma", "rho", "rho_prime", "R", "xi_fa"):
            if not math.isfinite(getattr(self, name)):
                raise BoundRangeError(f"{name} must be finite")


# ---------------------------------------------------------------------------
# constructive checks


def _as_simplex(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be a vector")
    if np.any(v < 0) or abs(v.sum() - 1.0) > SIMPLEX_TOL:
        raise NotSimplex(f"{name} is not a probability vector")
    return v


def lemma2_rhs(a, b, c, d) -> float:
    """Upper bound on ``|sum a*b - sum c*d|`` for simplex ``a, c`` and nonnegative ``b, d``."""
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    a_arr, c_arr = np.asarray(a, dtype=float), np.asarray(c, dtype=float)
    if not (a_arr.shape == b.shape == c_arr.shape == d.shape) or b.ndim != 1:
        raise DimensionMismatch("a, b, c, d must be vectors of equal length")
    a = _as_simplex(a_arr, "a")
    c = _as_simplex(c_arr, "c")
    if np.any(b < 0) or np.any(d < 0):
        raise ValueError("b and d must be nonnegative")
    l1 = np.abs(a - c).sum()
    bd = np.abs(b - d).max() if b.size else 0.0
    top = max(np.abs(b).max(), np.abs(d).max()) if b.size else 0.0
    return float(l1 / 2 * top + bd - l1 / 4 * bd)


@dataclass(frozen=True)
class CouplingPlan:
    alpha: np.ndarray
    total: float


def greedy_coupling(v1, v2) -> CouplingPlan:
    """Move surplus mass of ``v1`` onto the deficit entries in index order.

    ``alpha[i, j]`` is the mass sent from surplus index ``i`` to deficit index
    ``j``; its total equals the TV distance between the two vectors.
    """
    v1 = _as_simplex(v1, "v1")
    v2 = _as_simplex(v2, "v2")
    if v1.shape != v2.shape:
        raise DimensionMismatch("v1 and v2 must have equal length")
    delta = v1 - v2
    surplus = np.where(delta > 0, delta, 0.0)
    deficit = np.where(delta < 0, -delta, 0.0)
    n = len(delta)
    alpha = np.zeros((n, n))
    j = 0
    for i in range(n):
        while surplus[i] > 0 and j < n:
            if deficit[j] <= 0:
                j += 1
                continue
            m = min(surplus[i], deficit[j])
            alpha[i, j] += m
            surplus[i] -= m
            deficit[j] -= m
            if deficit[j] <= 0:
                j += 1
    # whatever is left over is rounding dust in the last pairing
    return CouplingPlan(alpha, float(alpha.sum()))


# ---------------------------------------------------------------------------
# bound evaluators


def _forget(rho: float, l: int) -> float:
    return (1.0 - rho) ** l


def xi_smdp_pomdp(inp: BoundInputs) -> float:
    """Worst-case gap between optimal POMDP and superstate-MDP values."""
    g, r = inp.gamma, inp.r_bar
    q = _forget(inp.rho, inp.l)
    if q == 0.0:
        return 0.0
    return 2 * r * q / (1 - g) + 2 * r * g * q / ((1 - g) * ((1 - g) + g * q))


def corollary1_bound(r_bar: float, gamma: float, rho: float, N: int, n_obs: int, n_actions: int) -> float:
    """Gap bound expressed through the superstate count ``N``."""
    BoundInputs(r_bar=r_bar, gamma=gamma, rho=rho)
    if N < 1:
        raise BoundRangeError("N must be >= 1")
    if n_obs * n_actions < 2:
        raise BoundRangeError("need |Y||A| >= 2")
    if rho == 1.0:
        return 0.0
    kappa = math.log(1.0 / (1.0 - rho)) / math.log(n_obs * n_actions)
    nk = float(N) ** (-kappa)
    g = gamma
    return (2 * r_bar * nk / (1 - rho) / (1 - g)
            + 4 * r_bar * g * nk / (1 - rho) / ((1 - g) * (2 * (1 - g) + g * nk)))


def td_contraction_weight(gamma: float, tau: int) -> float:
    """``(1 - 2(1-gamma)/sqrt(tau))**tau``, the weight left on the initial error."""
    return (1.0 - 2.0 * (1.0 - gamma) / math.sqrt(tau)) ** tau


def _td_bracket(inp: BoundInputs) -> dict:
    r, R, g, tau = inp.r_bar, inp.R, inp.gamma, inp.tau
    q = _forget(inp.rho, inp.l)
    C2 = 2 * r + 12 * R
    cross = R * r + R * R * (1 + (1 - inp.rho) * g)
    sqt = math.sqrt(tau)
    if inp.rho_prime == 1.0:
        # the chain forgets in one step; the warm-up terms vanish
        log_term = 0.0
        warm = 0.0
    else:
        inv_log = math.log(1.0 / (1.0 - inp.rho_prime))
        log_term = C2 * (r + 2 * R) * math.log(tau) / (sqt * inv_log)
        warm = (1.0 / sqt) * cross  # (1-rho')**l' with l' = log(tau) / (2 log(1/(1-rho')))
    return {
        "noise": (r + 2 * R) ** 2 / (2 * sqt),
        "mixing": log_term,
        "warmup": warm,
        "bias_reward": 2 * R * r * q,
        "bias_cross": 2.0 / inp.rho_prime * q * cross,
    }


def xi_td_error(inp: BoundInputs, terms: bool = False):
    """Expected sup-norm TD error after ``tau`` iterations with step ``1/sqrt(tau)``.

    The distance from the initial iterate to the best in-ball parameter is
    taken at its worst case ``2R``.  With ``terms=True`` a dict of the
    individual summands is returned as well.
    """
    if inp.tau <= 4 * (1 - inp.gamma) ** 2:
        raise BoundRangeError("tau must exceed 4(1-gamma)^2")
    w = td_contraction_weight(inp.gamma, inp.tau)
    scale = (1.0 - w) / (1.0 - inp.gamma)
    bracket = _td_bracket(inp)
    total = inp.xi_fa + w * 2 * inp.R + scale * sum(bracket.values())
    if not terms:
        return total
    parts = {"xi_fa": inp.xi_fa, "initial": w * 2 * inp.R, "scale": scale}
    parts.update(bracket)
    return total, parts


def regret_bound_terms(inp: BoundInputs, per_iter_fa: Sequence[float], T: Optional[int] = None) -> dict:
    """Linear-in-T regret coefficients plus the unscaled ``T^{3/4} log T`` term.

    ``T`` defaults to ``M * tau``.
    """
    fa = np.asarray(list(per_iter_fa), dtype=float)
    if fa.size != inp.M:
        raise BoundRangeError(f"per_iter_fa has {fa.size} entries, expected M={inp.M}")
    if np.any(fa < 0):
        raise BoundRangeError("per_iter_fa entries must be >= 0")
    r, R, g, tau = inp.r_bar, inp.R, inp.gamma, inp.tau
    q = _forget(inp.rho, inp.l)
    w = td_contraction_weight(g, tau)
    cross = R * r + R * R * (1 + (1 - inp.rho) * g)
    xi_ha = (q * (1 - w) / (1 - g) * (4 * R * r + 4 / inp.rho_prime * cross)
             + 2 * r / (1 - g)
             + 2 * r * g / ((1 - g) * (2 * (1 - g) + q * g)))
    if T is None:
        T = inp.M * tau
    order = T ** 0.75 * math.log(T) if T > 1 else 0.0
    return {"xi_FA": float(2 * fa.mean()), "xi_HA": float(xi_ha), "order_term": float(order), "T": int(T)}


def ais_bounds(epsilon: float, delta: float, r_bar: float, gamma: float) -> dict:
    """Approximate-information-state value gap: the original and the sharpened bound."""
    if epsilon < 0 or delta < 0 or r_bar < 0:
        raise BoundRangeError("epsilon, delta and r_bar must be >= 0")
    if not (0.0 <= gamma < 1.0):
        raise BoundRangeError("gamma must lie in [0, 1)")
    g = gamma
    original = epsilon / (1 - g) + 2 * g * delta * r_bar / (1 - g) ** 2
    improved = epsilon / (1 - g + delta / 4) + g * delta * r_bar / ((1 - g) * (1 - g + delta / 2))
    return {"original": float(original), "improved": float(improved)}


def all_bounds(inp: BoundInputs, n_obs: Optional[int] = None, N: Optional[int] = None) -> list:
    """(name, value) rows for the CLI table."""
    rows = [("xi_smdp_pomdp", xi_smdp_pomdp(inp))]
    if n_obs is not None and N is not None:
        rows.append(("corollary1", corollary1_bound(inp.r_bar, inp.gamma, inp.rho, N, n_obs, inp.n_actions)))
    if inp.tau > 4 * (1 - inp.gamma) ** 2:
        total, parts = xi_td_error(inp, terms=True)
        rows.append(("xi_td_error", total))
        rows.extend((f"xi_td_error.{k}", v) for k, v in parts.items())
    reg = regret_bound_terms(inp, [inp.xi_fa / 2] * inp.M)
    rows.extend((f"regret.{k}", v) for k, v in reg.items())
    return rows
