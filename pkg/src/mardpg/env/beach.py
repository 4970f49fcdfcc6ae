"""Two ice-cream sellers on a unit beach.

Customers sit on a uniform grid over ``[0, 1]`` and buy from the nearest
seller if that seller is within ``rho``. Competing sellers both drift to the
middle; cooperating sellers split the beach.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvStep, SteppedAfterTerminal, check_slice

_EPS = 1e-12


def customer_grid(n_customers: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_customers)


def served_customers(positions, rho: float, n_customers: int) -> int:
    """Number of grid customers within ``rho`` of their nearest seller."""
    grid = customer_grid(n_customers)
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    nearest = np.abs(grid[None, :] - pos).min(axis=0)
    return int(np.count_nonzero(nearest <= rho + _EPS))


@dataclass
class BeachState:
    positions: np.ndarray
    rho: float
    grid: np.ndarray
    turn: int = 0
    done: bool = False


class BeachEnv:
    """Sellers move once each, seller 0 first.

    Observation: ``[pos_0, pos_1, turn_is_0, turn_is_1]``. Each seller's action
    is a 2-simplex whose first component is the target position. The team
    reward (customers served) arrives after the second move.
    """

    action_dims = (2, 2)
    obs_dim = 4

    def __init__(self, rho: float = 0.25, n_customers: int = 101, random_start: bool = True):
        self.rho = float(rho)
        self.n_customers = int(n_customers)
        self.random_start = random_start
        self.state: BeachState | None = None

    def observe(self) -> np.ndarray:
        s = self.state
        turn = np.zeros(2)
        if not s.done:
            turn[s.turn] = 1.0
        return np.concatenate([s.positions, turn])

    def reset(self, rng: np.random.Generator):
        start = rng.uniform(0.0, 1.0, size=2) if self.random_start else np.full(2, 0.5)
        self.state = BeachState(start, self.rho, customer_grid(self.n_customers))
        return self.observe(), 0

    def step(self, padded_action) -> EnvStep:
        s = self.state
        if s is None or s.done:
            raise SteppedAfterTerminal()
        action = check_slice(padded_action, self.action_dims, s.turn)
        s.positions[s.turn] = float(np.clip(action[0], 0.0, 1.0))
        if s.turn == 0:
            s.turn = 1
            return EnvStep(self.observe(), 1, 0.0, False)
        s.done = True
        reward = float(served_customers(s.positions, s.rho, self.n_customers))
        return EnvStep(self.observe(), None, reward, True, {"positions": s.positions.copy()})


def beach_step(env: BeachEnv, padded_action) -> EnvStep:
    return env.step(padded_action)


@dataclass
class BeachOracle:
    best_positions: tuple
    best_reward: int
    hotelling_positions: tuple
    hotelling_reward: int


def beach_bruteforce(rho: float, n_customers: int, resolution: int) -> BeachOracle:
    """Exhaustive search over a ``resolution``-point position grid.

    The first maximiser in lexicographic order with ``p0 <= p1`` is reported.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    pts = np.linspace(0.0, 1.0, resolution)
    grid = customer_grid(n_customers)
    covers = np.abs(grid[None, :] - pts[:, None]) <= rho + _EPS
    counts = (covers[:, None, :] | covers[None, :, :]).sum(axis=-1)
    counts = np.where(np.triu(np.ones((resolution, resolution), dtype=bool)), counts, -1)
    flat = int(np.argmax(counts))
    i, j = divmod(flat, resolution)
    hot = served_customers([0.5, 0.5], rho, n_customers)
    return BeachOracle((float(pts[i]), float(pts[j])), int(counts[i, j]), (0.5, 0.5), hot)
