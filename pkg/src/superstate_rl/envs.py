"""Built-in benchmark POMDPs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pomdp import PomdpModel


def customer_retail(gamma: float = 0.9) -> PomdpModel:
    """Four engagement levels, two site actions, four click observations.

    Rewards are not part of the published example; this model pays 1 in the
    Purchasing state and 0 elsewhere.
    """
    p_a0 = [
        [0.4, 0.4, 0.1, 0.1],
        [0.3, 0.3, 0.2, 0.2],
        [0.2, 0.3, 0.3, 0.2],
        [0.1, 0.2, 0.4, 0.3],
    ]
    p_a1 = [
        [0.4, 0.3, 0.2, 0.1],
        [0.2, 0.4, 0.2, 0.2],
        [0.1, 0.3, 0.4, 0.2],
        [0.1, 0.2, 0.3, 0.4],
    ]
    obs = [
        [0.8, 0.2, 0.0, 0.0],
        [0.3, 0.5, 0.2, 0.0],
        [0.1, 0.3, 0.4, 0.2],
        [0.0, 0.1, 0.3, 0.6],
    ]
    reward = np.zeros((4, 2))
    reward[3, :] = 1.0
    return PomdpModel(
        transition=np.array([p_a0, p_a1]),
        obs_kernel=np.array(obs),
        reward=reward,
        init_dist=np.full(4, 0.25),
        gamma=gamma,
        labels={
            "states": ["Uninterested", "Browsing", "Considering", "Purchasing"],
            "actions": ["generic_homepage", "recommend_trending"],
            "observations": ["no_clicks", "viewed_product", "added_to_cart", "purchased"],
        },
    )


def two_state_toy(gamma: float = 0.9) -> PomdpModel:
    """Two hidden states, two actions, two observations.

    Action 0 keeps the state with probability 0.8, action 1 flips it with
    probability 0.8.  Observations are correct with probability 0.85 and the
    reward is 1 when the action index matches the hidden state.
    """
    stay = np.array([[0.8, 0.2], [0.2, 0.8]])
    flip = np.array([[0.2, 0.8], [0.8, 0.2]])
    return PomdpModel(
        transition=np.array([stay, flip]),
        obs_kernel=np.array([[0.85, 0.15], [0.15, 0.85]]),
        reward=np.eye(2),
        init_dist=np.full(2, 0.5),
        gamma=gamma,
        labels={"states": ["s0", "s1"], "actions": ["a0", "a1"], "observations": ["y0", "y1"]},
    )


def tmaze(corridor_len: int = 4, reward_R: float = 1.0, gamma: float = 0.9, arm_cap: int = 10) -> PomdpModel:
    """Infinite-horizon T-maze with arms truncated at ``arm_cap`` cells.

    Corridor positions are ``0..corridor_len`` (the last one is the junction)
    and each is duplicated per hint ``d`` in {1, 2}.  The first observation,
    emitted at position 1, reveals ``d``; every other cell emits only its
    position.  Action 0 enters the first arm and action 1 the second arm at the
    junction; elsewhere both actions move forward.  Arm cells pay ``reward_R``
    when the arm matches the hint.  The arm end is absorbing.

    Truncated histories are filtered from a uniform prior over all states, so
    a superstate that has lost the hint splits its mass evenly between the
    two hint copies of the current cell.
    """
    if corridor_len < 1:
        raise ValueError("corridor_len must be >= 1")
    if arm_cap < 1:
        raise ValueError("arm_cap must be >= 1")
    L, cap = corridor_len, arm_cap

    names = []
    index = {}

    def add(name):
        index[name] = len(names)
        names.append(name)

    for d in (1, 2):
        for i in range(L + 1):
            add(f"s{i}^{d}")
    for arm in ("r", "q"):
        for d in (1, 2):
            for i in range(1, cap + 1):
                add(f"{arm}{i}^{d}")
    S = len(names)

    obs_names = ["hint1", "hint2", "pos0"] + [f"pos{i}" for i in range(2, L + 1)]
    obs_names += [f"left{i}" for i in range(1, cap + 1)] + [f"right{i}" for i in range(1, cap + 1)]
    oidx = {n: k for k, n in enumerate(obs_names)}

    P = np.zeros((2, S, S))
    phi = np.zeros((S, len(obs_names)))
    r = np.zeros((S, 2))
    for d in (1, 2):
        for i in range(L + 1):
            s = index[f"s{i}^{d}"]
            if i < L:
                P[:, s, index[f"s{i + 1}^{d}"]] = 1.0
            else:
                P[0, s, index[f"r1^{d}"]] = 1.0
                P[1, s, index[f"q1^{d}"]] = 1.0
            if i == 1:
                phi[s, oidx[f"hint{d}"]] = 1.0
            else:
                phi[s, oidx[f"pos{i}"]] = 1.0
        for arm, side, correct in (("r", "left", 1), ("q", "right", 2)):
            for i in range(1, cap + 1):
                s = index[f"{arm}{i}^{d}"]
                P[:, s, index[f"{arm}{min(i + 1, cap)}^{d}"]] = 1.0
                phi[s, oidx[f"{side}{i}"]] = 1.0
                if d == correct:
                    r[s, :] = reward_R

    init = np.zeros(S)
    init[index["s0^1"]] = 0.5
    init[index["s0^2"]] = 0.5
    return PomdpModel(
        transition=P,
        obs_kernel=phi,
        reward=r,
        init_dist=init,
        gamma=gamma,
        labels={"states": names, "actions": ["first_arm", "second_arm"], "observations": obs_names},
        superstate_prior=np.full(S, 1.0 / S),
    )


FROZEN_LAKE_4X4 = ("SFFF", "FHFH", "FFFH", "HFFG")

# FrozenLake action order: left, down, right, up
_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


@dataclass(frozen=True)
class GridSpec:
    width: int = 4
    height: int = 4
    holes: tuple = ((1, 1), (1, 3), (2, 3), (3, 0))
    goal: tuple = (3, 3)
    start: tuple = (0, 0)
    noise_p: float = 0.0
    slippery: bool = False
    terminal: str = "absorbing"  # or "reset": terminal cells send the agent back to start

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(tuple(h) for h in self.holes))
        object.__setattr__(self, "goal", tuple(self.goal))
        object.__setattr__(self, "start", tuple(self.start))
        cells = list(self.holes) + [self.goal, self.start]
        for rr, cc in cells:
            if not (0 <= rr < self.height and 0 <= cc < self.width):
                raise ValueError(f"cell {(rr, cc)} outside {self.height}x{self.width} grid")
        if self.goal in self.holes:
            raise ValueError("goal cannot be a hole")
        if self.start in self.holes:
            raise ValueError("start cannot be a hole")
        if not (0.0 <= self.noise_p <= 1.0):
            raise ValueError("noise_p must lie in [0, 1]")
        if self.slippery:
            raise ValueError("slippery dynamics are not supported")
        if self.terminal not in ("absorbing", "reset"):
            raise ValueError("terminal must be 'absorbing' or 'reset'")

    @classmethod
    def from_map(cls, rows=FROZEN_LAKE_4X4, **kw) -> "GridSpec":
        holes = [(i, j) for i, row in enumerate(rows) for j, ch in enumerate(row) if ch == "H"]
        goal = next((i, j) for i, row in enumerate(rows) for j, ch in enumerate(row) if ch == "G")
        start = next((i, j) for i, row in enumerate(rows) for j, ch in enumerate(row) if ch == "S")
        return cls(width=len(rows[0]), height=len(rows), holes=tuple(holes), goal=goal, start=start, **kw)


def noisy_gridworld(spec: GridSpec = GridSpec(), gamma: float = 0.9) -> PomdpModel:
    """Deterministic grid with an observation channel that lies with probability p.

    A lie is drawn uniformly from the ``n - 1`` wrong cells.  Entering the goal
    pays 1.
    """
    W, Hh = spec.width, spec.height
    n = W * Hh
    cell = lambda rc: rc[0] * W + rc[1]  # noqa: E731
    terminal = {cell(h) for h in spec.holes} | {cell(spec.goal)}
    goal = cell(spec.goal)
    start = cell(spec.start)

    P = np.zeros((4, n, n))
    r = np.zeros((n, 4))
    for s in range(n):
        row, col = divmod(s, W)
        for a, (dr, dc) in enumerate(_MOVES):
            if s in terminal:
                nxt = start if spec.terminal == "reset" else s
            else:
                nxt = min(max(row + dr, 0), Hh - 1) * W + min(max(col + dc, 0), W - 1)
                if nxt == goal:
                    r[s, a] = 1.0
            P[a, s, nxt] = 1.0

    p = spec.noise_p
    if n > 1:
        phi = np.full((n, n), p / (n - 1))
        np.fill_diagonal(phi, 1.0 - p)
    else:
        phi = np.ones((1, 1))
    init = np.zeros(n)
    init[start] = 1.0
    return PomdpModel(
        transition=P,
        obs_kernel=phi,
        reward=r,
        init_dist=init,
        gamma=gamma,
        labels={
            "states": [f"({s // W},{s % W})" for s in range(n)],
            "actions": ["left", "down", "right", "up"],
            "observations": [f"({s // W},{s % W})" for s in range(n)],
        },
        superstate_prior=np.full(n, 1.0 / n),
    )
