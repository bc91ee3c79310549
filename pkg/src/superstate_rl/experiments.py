"""Seeded multi-run sweeps over (window length, observation noise, seed)."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import GridSpec, noisy_gridworld
from .learning import PolitexConfig, TdConfig, make_features, politex_train


def thread_cap(default: int = 1) -> int:
    """Worker count from ``SUPERSTATE_THREADS`` (at least 1)."""
    raw = os.environ.get("SUPERSTATE_THREADS")
    if raw is None or raw.strip() == "":
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"SUPERSTATE_THREADS must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class SweepConfig:
    ls: tuple = (1, 2, 3)
    noise: tuple = (0.3,)
    seeds: tuple = tuple(range(10))
    M: int = 30
    tau: int = 2000
    l_prime: int = 0
    eta: float = 5.0
    step_size: float = 0.1
    explore_mix: float = 0.05
    gamma: float = 0.9
    window: int = 10


@dataclass(frozen=True)
class CellResult:
    l: int
    noise: float
    seed: int
    episode_reward: tuple   # success rate per POLITEX iteration
    step_reward: tuple      # mean reward per step per iteration
    n_superstates: int

    def final_reward(self, window: int) -> float:
        return float(np.mean(self.episode_reward[-window:]))


def gridworld_success(visits: np.ndarray, spec: GridSpec) -> float:
    """Fraction of finished episodes that ended in the goal cell.

    With ``terminal="reset"`` each stay in a terminal cell ends exactly one
    episode, so hidden-state visit counts are enough.
    """
    W = spec.width
    goal = spec.goal[0] * W + spec.goal[1]
    holes = [h[0] * W + h[1] for h in spec.holes]
    done = visits[goal] + visits[holes].sum()
    return float(visits[goal] / done) if done else 0.0


def run_gridworld_cell(l: int, noise: float, seed: int, cfg: SweepConfig) -> CellResult:
    spec = GridSpec.from_map(noise_p=noise, terminal="reset")
    model = noisy_gridworld(spec, gamma=cfg.gamma)
    features = make_features(None, kind="belief", model=model, l=l)
    pcfg = PolitexConfig(
        M=cfg.M,
        td=TdConfig(tau=cfg.tau, l_prime=cfg.l_prime, step_size=cfg.step_size, log_every=cfg.tau),
        eta=cfg.eta,
        explore_mix=cfg.explore_mix,
        seed=seed,
    )
    res = politex_train(model, l, features, pcfg)
    episode = tuple(gridworld_success(d.state_visits, spec) for d in res.diagnostics)
    step = tuple(d.total_reward / d.steps for d in res.diagnostics)
    return CellResult(l, float(noise), int(seed), episode, step, features.n_rows)


def _cell(args):
    return run_gridworld_cell(*args)


def sweep_gridworld(cfg: SweepConfig, workers: int = None) -> list:
    """Run every (l, noise, seed) cell; results come back in grid order."""
    cells = [(l, p, s, cfg) for l in cfg.ls for p in cfg.noise for s in cfg.seeds]
    workers = thread_cap() if workers is None else workers
    if workers <= 1 or len(cells) == 1:
        return [_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell, cells))


def summarize(results: Sequence[CellResult], window: int) -> dict:
    """Mean final reward per (l, noise), averaged over seeds."""
    groups = {}
    for r in results:
        groups.setdefault((r.l, r.noise), []).append(r.final_reward(window))
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def moving_average(x: Sequence[float], window: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if window <= 1 or len(x) == 0:
        return x.copy()
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty(len(x))
    for i in range(len(x)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out
