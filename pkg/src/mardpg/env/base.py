"""Environment contract shared by every simulator in the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Tuple

import numpy as np


@dataclass
class EnvStep:
    next_obs: np.ndarray
    next_agent: Optional[int]
    reward: float
    terminal: bool
    info: dict = field(default_factory=dict)


class SteppedAfterTerminal(RuntimeError):
    def __init__(self):
        super().__init__("stepped after terminal")


class Environment(Protocol):
    obs_dim: int
    action_dims: Sequence[int]

    def reset(self, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
        ...

    def step(self, padded_action: np.ndarray) -> EnvStep:
        ...


def env_reset(env, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    return env.reset(rng)


def env_step(env, padded_action) -> EnvStep:
    return env.step(padded_action)


def check_slice(padded_action: np.ndarray, action_dims: Sequence[int], agent: int) -> np.ndarray:
    """Return the active agent's slice, rejecting mass placed in other slices."""
    padded_action = np.asarray(padded_action, dtype=np.float64)
    total = int(sum(action_dims))
    if padded_action.shape != (total,):
        raise ValueError(f"padded action must have shape ({total},), got {padded_action.shape}")
    lo = int(sum(action_dims[:agent]))
    hi = lo + action_dims[agent]
    outside = np.concatenate([padded_action[:lo], padded_action[hi:]])
    if np.any(outside != 0.0):
        raise ValueError(f"action occupies a slice other than agent {agent}'s")
    return padded_action[lo:hi]
