"""TD learning and POLITEX on superstate features, sampled from the true POMDP.

The agent sees only its last ``l`` (action, observation) pairs; the simulator
advances the hidden state.  Feature rows are indexed by superstate through a
:class:`FeatureMap`, which either wraps an enumerated superstate MDP or grows
lazily as new superstates are visited (``kind="belief"``).
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from .pomdp import PomdpModel, filter_from, make_rng
from .superstates import SuperstateMdp, group, rep_belief, superstate_mixing


# ---------------------------------------------------------------------------
# features


class FeatureMap:
    """Feature vectors ``phi(B, a)`` with ``||phi||_2 <= 1``.

    Kinds
    -----
    one-hot
        ``d = N * A``; row ``i`` and action ``a`` map to basis vector ``i*A + a``.
    random-projection
        Gaussian vectors, seeded, scaled so the largest norm is exactly 1.
    belief
        ``e_a`` outer the representative belief of ``B`` (``d = A * S``).  No
        enumeration is needed: superstates are added on first visit.
    """

    def __init__(self, kind: str, dim: int, n_actions: int, l: int, states=None, values=None, model=None):
        self.kind = kind
        self.dim = int(dim)
        self.n_actions = n_actions
        self.l = l
        self.states = list(states or [])
        self.index_of = {B: i for i, B in enumerate(self.states)}
        self._values = values  # (N, A, d) for random-projection
        self._model = model
        self._beliefs = []
        self._succ = {}
        self.lazy = kind == "belief"
        if self.lazy:
            for B in self.states:
                self._beliefs.append(rep_belief(model, B, l))

    @property
    def n_rows(self) -> int:
        return len(self.states)

    def row(self, B) -> int:
        i = self.index_of.get(B)
        if i is None:
            if not self.lazy:
                raise KeyError(f"superstate {B} is not in the feature map")
            i = len(self.states)
            self.states.append(B)
            self.index_of[B] = i
            self._beliefs.append(rep_belief(self._model, B, self.l))
        return i

    def successor(self, i: int, a: int, y: int) -> int:
        key = (i, a, y)
        j = self._succ.get(key)
        if j is None:
            j = self.row(group(self.states[i] + ((a, y),), self.l))
            self._succ[key] = j
        return j

    def phi(self, i: int, a: int) -> np.ndarray:
        if self.kind == "one-hot":
            v = np.zeros(self.dim)
            v[i * self.n_actions + a] = 1.0
            return v
        if self.kind == "random-projection":
            return self._values[i, a]
        v = np.zeros(self.dim)
        S = self._model.n_states
        v[a * S:(a + 1) * S] = self._beliefs[i]
        return v

    def matrix(self) -> np.ndarray:
        """All features stacked as ``(n_rows, A, d)``."""
        if self.kind == "random-projection":
            return self._values
        out = np.zeros((self.n_rows, self.n_actions, self.dim))
        for i in range(self.n_rows):
            for a in range(self.n_actions):
                out[i, a] = self.phi(i, a)
        return out

    def q_table(self, theta: np.ndarray) -> np.ndarray:
        """``Q(B, a) = phi(B, a) . theta`` for every known row."""
        if self.kind == "one-hot":
            return np.asarray(theta[: self.n_rows * self.n_actions]).reshape(self.n_rows, self.n_actions)
        if self.kind == "random-projection":
            return self._values @ theta
        if not self._beliefs:
            return np.zeros((0, self.n_actions))
        S = self._model.n_states
        return np.stack(self._beliefs) @ theta.reshape(self.n_actions, S).T

    def q_row(self, theta: np.ndarray, i: int) -> np.ndarray:
        if self.kind == "one-hot":
            A = self.n_actions
            return np.asarray(theta[i * A:(i + 1) * A])
        if self.kind == "random-projection":
            return self._values[i] @ theta
        S = self._model.n_states
        return theta.reshape(self.n_actions, S) @ self._beliefs[i]


def make_features(smdp: Optional[SuperstateMdp], kind: str = "one-hot", dim: Optional[int] = None, seed: int = 0,
                  model: Optional[PomdpModel] = None, l: Optional[int] = None) -> FeatureMap:
    """Build a feature map over the superstates of ``smdp``.

    ``kind="belief"`` needs ``model`` and ``l`` instead and ``smdp`` may be None.
    """
    if kind == "one-hot":
        N, A = smdp.n_states, smdp.n_actions
        return FeatureMap("one-hot", N * A, A, smdp.l, states=smdp.states)
    if kind == "random-projection":
        if dim is None or dim < 1:
            raise ValueError("random-projection needs dim >= 1")
        N, A = smdp.n_states, smdp.n_actions
        vals = make_rng(seed).standard_normal((N, A, dim))
        top = np.linalg.norm(vals, axis=2).max()
        vals = vals / top
        return FeatureMap("random-projection", dim, A, smdp.l, states=smdp.states, values=vals)
    if kind == "belief":
        if model is None or l is None:
            raise ValueError("belief features need model and l")
        states = smdp.states if smdp is not None else [()]
        return FeatureMap("belief", model.n_actions * model.n_states, model.n_actions, l, states=states, model=model)
    raise ValueError(f"unknown feature kind {kind!r}")


def project_ball(theta: np.ndarray, R: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``R``."""
    if R <= 0:
        raise ValueError("R must be positive")
    theta = np.asarray(theta, dtype=float)
    n = float(np.linalg.norm(theta))
    return theta if n <= R else theta * (R / n)


# ---------------------------------------------------------------------------
# policies over feature rows


class TablePolicy:
    """Fixed ``(N, A)`` table aligned with the feature rows."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=float)
        self._cdf = [list(np.cumsum(row)) for row in self.table]

    def cdf(self, i: int):
        return self._cdf[i]

    def probs(self, i: int) -> np.ndarray:
        return self.table[i]


def softmax_rows(scores: np.ndarray, eta: float, explore_mix: float) -> np.ndarray:
    """Exponential weights per row, centred by the row max, mixed with uniform."""
    z = eta * np.asarray(scores, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=-1, keepdims=True)
    A = w.shape[-1]
    return (1.0 - explore_mix) * w + explore_mix / A


class SoftmaxPolicy:
    """``mu(a|B) ∝ exp(eta * phi(B,a) . theta_sum)``, mixed with uniform; rows built on demand."""

    def __init__(self, features: FeatureMap, theta_sum: np.ndarray, eta: float, explore_mix: float):
        self.features = features
        self.theta_sum = np.array(theta_sum, dtype=float)
        self.eta = eta
        self.explore_mix = explore_mix
        self._cdf = {}

    def probs(self, i: int) -> np.ndarray:
        return softmax_rows(self.features.q_row(self.theta_sum, i), self.eta, self.explore_mix)

    def cdf(self, i: int):
        c = self._cdf.get(i)
        if c is None:
            c = list(np.cumsum(self.probs(i)))
            self._cdf[i] = c
        return c

    def table(self, n_rows: Optional[int] = None) -> np.ndarray:
        n = self.features.n_rows if n_rows is None else n_rows
        if n == 0:
            return np.zeros((0, self.features.n_actions))
        q = self.features.q_table(self.theta_sum)[:n]
        return softmax_rows(q, self.eta, self.explore_mix)


def _draw(cdf, u: float) -> int:
    k = bisect_right(cdf, u * cdf[-1])
    if k >= len(cdf):
        k = len(cdf) - 1
        while k > 0 and cdf[k] == cdf[k - 1]:
            k -= 1
    return k


# ---------------------------------------------------------------------------
# TD learning


@dataclass
class LinearQ:
    theta: np.ndarray
    radius: float


@dataclass(frozen=True)
class TdConfig:
    tau: int
    l_prime: Optional[int] = None
    step_size: Optional[float] = None
    radius: Optional[float] = None
    seed: int = 0
    theta_init: str = "zero"  # or "random": uniform draw from the ball
    log_every: int = 1000

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.l_prime is not None and self.l_prime < 0:
            raise ValueError("l_prime must be >= 0")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.theta_init not in ("zero", "random"):
            raise ValueError("theta_init must be 'zero' or 'random'")

    @property
    def epsilon(self) -> float:
        return self.step_size if self.step_size is not None else 1.0 / math.sqrt(self.tau)


def default_radius(features: FeatureMap, r_bar: float, gamma: float) -> float:
    """Ball large enough to hold any Q-table bounded by ``r_bar / (1 - gamma)``."""
    if features.kind == "one-hot":
        scale = math.sqrt(features.dim)
    else:
        scale = math.sqrt(features.dim) * 10.0
    return max(scale * r_bar / (1.0 - gamma), 1.0)


def default_warmup(tau: int, rho_prime: float) -> int:
    """``ceil(log tau / (2 log(1/(1-rho'))))``, floored at 0 and capped at ``tau // 10``."""
    cap = tau // 10
    if rho_prime >= 1.0:
        return 0
    if rho_prime <= 0.0:
        return cap
    raw = math.log(tau) / (2.0 * math.log(1.0 / (1.0 - rho_prime)))
    return int(min(max(math.ceil(raw), 0), cap))


@dataclass
class TdDiagnostics:
    rows: list                 # (step, mean_reward_since_last_row, theta_norm, q_error or nan)
    warmup: int
    step_size: float
    radius: float
    total_reward: float
    steps: int
    state_visits: np.ndarray   # hidden-state occupation counts over the run
    max_step_norm: float       # largest ||theta_{t+1} - theta_t||


def recurrent_rows(smdp: SuperstateMdp, policy: np.ndarray) -> np.ndarray:
    """Boolean mask of superstates in closed communicating classes of the policy chain."""
    chain = smdp.policy_matrix(policy)
    chain.data[chain.data <= 0] = 0
    chain.eliminate_zeros()
    n_comp, labels = connected_components(chain, directed=True, connection="strong")
    closed = np.ones(n_comp, dtype=bool)
    rows, cols = chain.nonzero()
    leaving = labels[rows] != labels[cols]
    closed[np.unique(labels[rows[leaving]])] = False
    return closed[labels]


def td_train(model: PomdpModel, l: int, policy, features: FeatureMap, config: TdConfig,
             q_reference: Optional[np.ndarray] = None, error_mask: Optional[np.ndarray] = None,
             smdp: Optional[SuperstateMdp] = None, theta0: Optional[np.ndarray] = None):
    """Run the projected TD(0) recursion on one simulated trajectory.

    Parameters
    ----------
    policy
        ``(N, A)`` array over feature rows, or an object with ``cdf(i)``.
    q_reference, error_mask
        Optional exact Q-table (and row mask) used to log ``q_error``.
    smdp
        When given together with a tabular policy and ``config.l_prime=None``,
        the warm-up is derived from the superstate chain's mixing coefficient.
    theta0
        Explicit starting parameter (overrides ``config.theta_init``).

    Returns
    -------
    (LinearQ, TdDiagnostics)
    """
    if features.l != l:
        raise ValueError(f"features were built for l={features.l}, not {l}")
    pol = TablePolicy(policy) if isinstance(policy, np.ndarray) else policy
    rng = make_rng(config.seed)
    g = model.gamma
    eps = config.epsilon
    R = config.radius if config.radius is not None else default_radius(features, model.r_bar, g)
    tau = config.tau
    if config.l_prime is not None:
        warm = config.l_prime
    elif smdp is not None and isinstance(policy, np.ndarray):
        warm = default_warmup(tau, superstate_mixing(smdp, policy))
    else:
        warm = 0
    total = tau + warm

    d = features.dim
    if theta0 is not None:
        theta = project_ball(np.array(theta0, dtype=float), R)
    elif config.theta_init == "random":
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        theta = direction * R * rng.random() ** (1.0 / d)
    else:
        theta = np.zeros(d)

    # CDF tables for the simulator
    P_cdf = [[list(np.cumsum(model.transition[a, s])) for s in range(model.n_states)]
             for a in range(model.n_actions)]
    O_cdf = [list(np.cumsum(model.obs_kernel[s])) for s in range(model.n_states)]
    reward = model.reward.tolist()

    u0 = rng.random(2)
    U = rng.random((total, 3))
    s = _draw(list(np.cumsum(model.init_dist)), u0[0])
    i = features.row(())
    a = _draw(pol.cdf(i), u0[1])

    one_hot = features.kind == "one-hot"
    A = features.n_actions
    sq = float(theta @ theta)
    R2 = R * R
    rows = []
    run_reward = 0.0
    window_reward = 0.0
    window_n = 0
    max_step = 0.0
    visits = np.zeros(model.n_states, dtype=np.int64)
    log_every = max(1, config.log_every)

    def q_error():
        if q_reference is None:
            return float("nan")
        q = features.q_table(theta)[: len(q_reference)]
        diff = np.abs(q - q_reference)
        if error_mask is not None:
            diff = diff[error_mask]
        return float(diff.max()) if diff.size else 0.0

    for t in range(total):
        u = U[t]
        visits[s] += 1
        r = reward[s][a]
        s2 = _draw(P_cdf[a][s], u[0])
        y = _draw(O_cdf[s2], u[1])
        j = features.successor(i, a, y)
        a2 = _draw(pol.cdf(j), u[2])
        if t >= warm:
            if one_hot:
                k, k2 = i * A + a, j * A + a2
                old = theta[k]
                step = eps * (r + g * theta[k2] - old)
                theta[k] = old + step
                sq += theta[k] ** 2 - old * old
                moved = abs(step)
                if sq > R2:
                    before = theta.copy()
                    before[k] = old
                    theta *= R / math.sqrt(sq)
                    sq = float(theta @ theta)
                    moved = float(np.linalg.norm(theta - before))
            else:
                f = features.phi(i, a)
                f2 = features.phi(j, a2)
                delta = r + g * float(f2 @ theta) - float(f @ theta)
                new = theta + eps * delta * f
                n2 = float(new @ new)
                if n2 > R2:
                    new *= R / math.sqrt(n2)
                moved = float(np.linalg.norm(new - theta))
                theta = new
            if moved > max_step:
                max_step = moved
        run_reward += r
        window_reward += r
        window_n += 1
        if (t + 1) % log_every == 0 or t + 1 == total:
            rows.append((t + 1, window_reward / window_n, float(np.linalg.norm(theta)), q_error()))
            window_reward, window_n = 0.0, 0
        s, i, a = s2, j, a2

    diag = TdDiagnostics(rows, warm, eps, R, run_reward, total, visits, max_step)
    return LinearQ(theta, R), diag


# ---------------------------------------------------------------------------
# POLITEX


@dataclass(frozen=True)
class PolitexConfig:
    M: int
    td: TdConfig
    eta: Optional[float] = None
    explore_mix: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if not (0.0 <= self.explore_mix < 1.0):
            raise ValueError("explore_mix must lie in [0, 1)")

    def eta_for(self, n_actions: int) -> float:
        if self.eta is not None:
            return self.eta
        return math.sqrt(8.0 * math.log(n_actions) / self.M) if n_actions > 1 else 1.0


def exploration_ok(rho: float, l: int, explore_mix: float, n_actions: int) -> bool:
    """Sufficient-exploration check ``(1-rho)^l < delta * |A|`` with ``delta = mix / |A|``."""
    return (1.0 - rho) ** l < explore_mix


@dataclass
class PolitexResult:
    policies: list       # SoftmaxPolicy per iteration (mu_1 .. mu_M)
    thetas: list         # TD output per iteration
    diagnostics: list    # TdDiagnostics per iteration
    features: FeatureMap
    eta: float

    def policy_tables(self, n_rows: Optional[int] = None) -> list:
        return [p.table(n_rows) for p in self.policies]

    def episode_lengths(self) -> list:
        return [d.steps for d in self.diagnostics]


def _episode_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, i]).generate_state(1, np.uint64)[0])


def politex_train(model: PomdpModel, l: int, features: FeatureMap, config: PolitexConfig,
                  smdp: Optional[SuperstateMdp] = None, rho: Optional[float] = None,
                  callback=None) -> PolitexResult:
    """Exponential-weights policy iteration with a TD critic.

    ``mu_i`` is the softmax of ``eta`` times the running sum of the previous
    critics' Q estimates (zero for ``mu_1``), mixed with the uniform policy.
    Every iteration simulates a fresh trajectory from the initial
    distribution.  Episode ``i`` draws its randomness from a child seed of
    ``(config.seed, i)``.

    ``callback(i, policy, lin_q, diagnostics)`` is invoked after each episode.
    """
    A = model.n_actions
    eta = config.eta_for(A)
    if rho is not None and not exploration_ok(rho, l, config.explore_mix, A):
        raise ValueError(
            f"(1-rho)^l = {(1 - rho) ** l:.3g} is not below the exploration floor {config.explore_mix:.3g}"
        )
    theta_sum = np.zeros(features.dim)
    policies, thetas, diags = [], [], []
    for i in range(1, config.M + 1):
        policy = SoftmaxPolicy(features, theta_sum, eta, config.explore_mix)
        td_cfg = TdConfig(
            tau=config.td.tau,
            l_prime=config.td.l_prime,
            step_size=config.td.step_size,
            radius=config.td.radius,
            seed=_episode_seed(config.seed, i),
            theta_init=config.td.theta_init,
            log_every=config.td.log_every,
        )
        table = None
        if td_cfg.l_prime is None and smdp is not None and not features.lazy:
            table = policy.table()
        lin_q, diag = td_train(model, l, table if table is not None else policy, features, td_cfg,
                               smdp=smdp if table is not None else None)
        policies.append(policy)
        thetas.append(lin_q.theta.copy())
        diags.append(diag)
        theta_sum = theta_sum + lin_q.theta
        if callback is not None:
            callback(i, policy, lin_q, diag)
    return PolitexResult(policies, thetas, diags, features, eta)


@dataclass(frozen=True)
class RegretRecord:
    iteration: int
    v_star_oracle: float
    v_policy: float
    per_iter_gap: float
    cumulative: float

    CSV_HEADER = "i,v_star,v_policy,gap,cumulative"

    def as_csv_row(self) -> str:
        return f"{self.iteration},{self.v_star_oracle!r},{self.v_policy!r},{self.per_iter_gap!r},{self.cumulative!r}"


def empirical_regret(model: PomdpModel, smdp: SuperstateMdp, policies, episode_lengths, v_star: float) -> list:
    """Regret records against a precomputed POMDP optimum at the initial belief.

    ``policies`` are ``(N, A)`` tables on ``smdp``'s superstates and
    ``episode_lengths[i]`` is ``tau + l'`` of iteration ``i``; the cumulative
    regret weights each gap by its own episode length.
    """
    from .planning import policy_evaluation

    root = smdp.index_of[()]
    out = []
    cum = 0.0
    for i, (pol, n) in enumerate(zip(policies, episode_lengths), start=1):
        _, v = policy_evaluation(smdp, np.asarray(pol))
        vp = float(v[root])
        gap = v_star - vp
        cum += n * gap
        out.append(RegretRecord(i, float(v_star), vp, gap, cum))
    return out
