"""Greedy (exploration-free) session rollouts for evaluation and logging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .agents import CommChannel, comm_step
from .baselines import L2rData


@dataclass
class SessionResult:
    gmv: np.ndarray          # per scenario
    clicks: int
    purchases: int
    reward: float
    length: int


def _pad(action: np.ndarray, agent: int, action_dims: Sequence[int]) -> np.ndarray:
    out = np.zeros(int(sum(action_dims)))
    lo = int(sum(action_dims[:agent]))
    out[lo:lo + action_dims[agent]] = action
    return out


class PageLogger:
    """Collects (obs, shown features, click-or-purchase labels) per scenario."""

    def __init__(self, n_scenarios: int = 2):
        self.obs: List[list] = [[] for _ in range(n_scenarios)]
        self.features: List[list] = [[] for _ in range(n_scenarios)]
        self.labels: List[list] = [[] for _ in range(n_scenarios)]

    def record(self, agent: int, obs, features, events) -> None:
        labels = events.clicks.astype(np.float64)
        self.obs[agent].append(obs)
        self.features[agent].append(features)
        self.labels[agent].append(labels)

    def data(self, agent: int) -> L2rData:
        if not self.obs[agent]:
            raise ValueError(f"no pages logged for scenario {agent}")
        return L2rData(np.array(self.obs[agent]), np.array(self.features[agent]), np.array(self.labels[agent]))


def run_session(env, policies: Sequence, rng: np.random.Generator, comm: Optional[CommChannel] = None,
                logger: Optional[PageLogger] = None) -> SessionResult:
    """Play one session; ``policies[i].act(message, obs)`` ranks for agent ``i``.

    The message channel runs whenever ``comm`` is given; otherwise policies see
    a zero message.
    """
    obs, agent = env.reset(rng)
    dims = env.action_dims
    n_scen = len(dims)
    message = np.zeros(comm.msg_dim) if comm is not None else None
    if comm is not None:
        comm.reset()
    gmv = np.zeros(n_scen)
    clicks = purchases = length = 0
    total = 0.0
    while True:
        action = policies[agent].act(message, obs)
        padded = _pad(action, agent, dims)
        step = env.step(padded)
        length += 1
        total += step.reward
        events = step.info.get("events")
        if events is not None:
            clicks += int(events.clicks.sum())
            if events.purchase is not None:
                purchases += 1
                gmv[agent] += events.price
            if logger is not None:
                logger.record(agent, obs, step.info["page_features"], events)
        if comm is not None:
            message = comm_step(comm, obs, padded)
        if step.terminal:
            break
        obs, agent = step.next_obs, step.next_agent
    return SessionResult(gmv, clicks, purchases, total, length)
