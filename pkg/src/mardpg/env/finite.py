"""Small deterministic MDPs with enumerable states and actions."""

from __future__ import annotations

from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .base import EnvStep, SteppedAfterTerminal, check_slice


class DeterministicMDP:
    """Finite deterministic MDP driven through padded continuous actions.

    The discrete action is the argmax of the active agent's slice.
    ``transitions[(s, a)]`` is the next state, or ``None`` for a terminal step.
    Episodes are truncated (not terminated) after ``max_steps``.
    """

    def __init__(self, observations: np.ndarray, agents: Sequence[int], action_dims: Sequence[int],
                 transitions: Dict[Tuple[int, int], Optional[int]], rewards: Dict[Tuple[int, int], float],
                 start: int = 0, max_steps: int = 10):
        self.observations = np.asarray(observations, dtype=np.float64)
        self.agents = list(agents)
        self.action_dims = tuple(action_dims)
        self.obs_dim = self.observations.shape[1]
        self.transitions = dict(transitions)
        self.rewards = dict(rewards)
        self.start = start
        self.max_steps = max_steps
        self.state: Optional[int] = None
        self.t = 0

    def reset(self, rng: np.random.Generator):
        self.state, self.t = self.start, 0
        return self.observations[self.state].copy(), self.agents[self.state]

    def step(self, padded_action) -> EnvStep:
        if self.state is None:
            raise SteppedAfterTerminal()
        s = self.state
        a = int(np.argmax(check_slice(padded_action, self.action_dims, self.agents[s])))
        r = float(self.rewards[(s, a)])
        nxt = self.transitions[(s, a)]
        self.t += 1
        if nxt is None:
            self.state = None
            return EnvStep(np.zeros(self.obs_dim), None, r, True, {"state": s, "action": a})
        self.state = nxt
        info = {"state": s, "action": a, "truncated": self.t >= self.max_steps}
        return EnvStep(self.observations[nxt].copy(), self.agents[nxt], r, False, info)


def single_state_mdp(reward: float = 1.0, max_steps: int = 5) -> DeterministicMDP:
    """One state, one action, constant reward, never terminal."""
    return DeterministicMDP(np.ones((1, 1)), [0], [1], {(0, 0): 0}, {(0, 0): reward}, max_steps=max_steps)
