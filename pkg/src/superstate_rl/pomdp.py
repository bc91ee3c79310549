"""Tabular POMDP model, exact Bayes filtering and a seeded simulator.

Array conventions
-----------------
``transition[a, s, s2]``  probability of moving s -> s2 under action a
``obs_kernel[s, y]``      probability of emitting y from state s
``reward[s, a]``          immediate reward

A history is a tuple of ``(action, observation)`` pairs ``((a0, y1), (a1, y2), ...)``;
the empty tuple is the history at time 0.

Random numbers come from numpy's ``PCG64`` bit generator (``make_rng``).  Only
``Generator.random`` and ``Generator.dirichlet``/``integers`` are used, which are
bit-stable across platforms for a fixed seed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ZeroProbabilityObservation

ROW_TOL = 1e-9

History = tuple  # tuple[tuple[int, int], ...]


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one index; consumes exactly one uniform."""
    u = rng.random()
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    # guard against u*cdf[-1] landing on the last edge
    idx = min(idx, len(probs) - 1)
    while probs[idx] <= 0.0:
        idx -= 1
    return idx


@dataclass(frozen=True, eq=False)
class PomdpModel:
    """A finite POMDP.

    ``superstate_prior`` is the prior used when filtering a full-length
    superstate (a truncated history); ``None`` means ``init_dist``.
    """

    transition: np.ndarray
    obs_kernel: np.ndarray
    reward: np.ndarray
    init_dist: np.ndarray
    gamma: float
    labels: dict = field(default_factory=dict)
    superstate_prior: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("transition", "obs_kernel", "reward", "init_dist"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.superstate_prior is not None:
            object.__setattr__(self, "superstate_prior", np.asarray(self.superstate_prior, dtype=float))
        object.__setattr__(self, "gamma", float(self.gamma))
        A, S, S2 = self.transition.shape
        if S != S2:
            raise ValueError(f"transition must be [a][s][s'], got shape {self.transition.shape}")
        if self.obs_kernel.ndim != 2 or self.obs_kernel.shape[0] != S:
            raise ValueError(f"obs_kernel must be [s][y] with {S} rows, got {self.obs_kernel.shape}")
        if self.reward.shape != (S, A):
            raise ValueError(f"reward must have shape ({S}, {A}), got {self.reward.shape}")
        if self.init_dist.shape != (S,):
            raise ValueError(f"init_dist must have length {S}")
        if self.superstate_prior is not None and self.superstate_prior.shape != (S,):
            raise ValueError(f"superstate_prior must have length {S}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def n_obs(self) -> int:
        return self.obs_kernel.shape[1]

    @property
    def r_bar(self) -> float:
        return float(np.max(np.abs(self.reward))) if self.reward.size else 0.0

    @property
    def filter_prior(self) -> np.ndarray:
        return self.init_dist if self.superstate_prior is None else self.superstate_prior

    def replace(self, **changes) -> "PomdpModel":
        kw = dict(
            transition=self.transition,
            obs_kernel=self.obs_kernel,
            reward=self.reward,
            init_dist=self.init_dist,
            gamma=self.gamma,
            labels=self.labels,
            superstate_prior=self.superstate_prior,
        )
        kw.update(changes)
        return PomdpModel(**kw)

    def to_dict(self) -> dict:
        d = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_obs": self.n_obs,
            "gamma": self.gamma,
            "init_dist": self.init_dist.tolist(),
            "transition": self.transition.tolist(),
            "obs_kernel": self.obs_kernel.tolist(),
            "reward": self.reward.tolist(),
        }
        if self.superstate_prior is not None:
            d["superstate_prior"] = self.superstate_prior.tolist()
        if self.labels:
            d["labels"] = self.labels
        return d

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _row_problems(rows: np.ndarray, what: str) -> list[str]:
    out = []
    for idx in np.ndindex(rows.shape[:-1]):
        row = rows[idx]
        where = "".join(f"[{i}]" for i in idx)
        if np.any(row < 0):
            out.append(f"{what}{where} has a negative entry")
        total = row.sum()
        if abs(total - 1.0) > ROW_TOL:
            out.append(f"{what}{where} sums to {total:.12g}, not 1")
    return out


def validate(model: PomdpModel) -> list[str]:
    """List every violated model invariant (empty list when valid)."""
    problems = []
    problems += _row_problems(model.transition, "transition")
    problems += _row_problems(model.obs_kernel, "obs_kernel")
    problems += _row_problems(model.init_dist[None, :], "init_dist")
    if model.superstate_prior is not None:
        problems += _row_problems(model.superstate_prior[None, :], "superstate_prior")
    if not (0.0 <= model.gamma < 1.0):
        problems.append(f"gamma={model.gamma} outside [0, 1)")
    if not np.all(np.isfinite(model.reward)):
        problems.append("reward has non-finite entries")
    # collapse the per-row index suffix for init_dist: it is a single vector
    return [p.replace("init_dist[0]", "init_dist").replace("superstate_prior[0]", "superstate_prior") for p in problems]


def obs_likelihood(model: PomdpModel, belief: np.ndarray, a: int) -> np.ndarray:
    """sigma(pi, ., a): distribution of the next observation after action a."""
    return (belief @ model.transition[a]) @ model.obs_kernel


def expected_reward(model: PomdpModel, belief: np.ndarray, a: int) -> float:
    return float(belief @ model.reward[:, a])


def belief_update(model: PomdpModel, belief: np.ndarray, a: int, y: int) -> np.ndarray:
    """One step of the Bayes filter.

    Raises
    ------
    ZeroProbabilityObservation
        If ``y`` cannot be observed after taking ``a`` from ``belief``.
    """
    joint = (belief @ model.transition[a]) * model.obs_kernel[:, y]
    norm = joint.sum()
    if not norm > 0.0:
        raise ZeroProbabilityObservation(f"observation {y} has probability 0 after action {a}")
    return joint / norm


def filter_from(model: PomdpModel, prior: np.ndarray, history: Sequence) -> np.ndarray:
    belief = np.asarray(prior, dtype=float)
    for k, (a, y) in enumerate(history):
        try:
            belief = belief_update(model, belief, a, y)
        except ZeroProbabilityObservation as exc:
            raise ZeroProbabilityObservation(f"step {k}: {exc}", step=k) from None
    return belief


def belief_of_history(model: PomdpModel, history: Sequence) -> np.ndarray:
    """Belief pi(.|H) obtained by filtering ``history`` from ``init_dist``."""
    return filter_from(model, model.init_dist, history)


def check_history(model: PomdpModel, history: Sequence) -> None:
    for k, (a, y) in enumerate(history):
        if not (0 <= a < model.n_actions and 0 <= y < model.n_obs):
            raise IndexError(f"history step {k} = {(a, y)} out of range")


class TrajectoryStep(NamedTuple):
    hidden_state: int
    action: int
    reward: float
    observation: int


def step_simulator(model: PomdpModel, state: int, a: int, rng: np.random.Generator):
    """Advance the hidden chain one step.

    Returns ``(next_state, observation, reward)`` where the reward is
    ``r(state, a)``.  Consumes exactly two uniforms from ``rng``.
    """
    s2 = sample_index(model.transition[a, state], rng)
    y = sample_index(model.obs_kernel[s2], rng)
    return s2, y, float(model.reward[state, a])


def sample_initial_state(model: PomdpModel, rng: np.random.Generator) -> int:
    return sample_index(model.init_dist, rng)


def rollout(model: PomdpModel, actions_or_policy, length: int, rng: np.random.Generator):
    """Simulate ``length`` steps and return ``(history, steps)``.

    ``actions_or_policy`` is either a sequence of actions or a callable
    ``policy(history, rng) -> action``.
    """
    s = sample_initial_state(model, rng)
    history = []
    steps = []
    for t in range(length):
        if callable(actions_or_policy):
            a = actions_or_policy(tuple(history), rng)
        else:
            a = actions_or_policy[t]
        s2, y, r = step_simulator(model, s, a, rng)
        steps.append(TrajectoryStep(s, a, r, y))
        history.append((a, y))
        s = s2
    return tuple(history), steps
