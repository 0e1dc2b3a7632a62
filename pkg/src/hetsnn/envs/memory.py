"""T-maze style memory task: reproduce the first-step cue after N steps."""

from __future__ import annotations

import numpy as np

from .base import Discrete, Environment


class MemoryLengthEnv(Environment):
    """Observation at step ``t`` is ``(c_t, t / N)``; ``c_0`` is a random sign and
    ``c_t = 0`` afterwards. Only the last action is rewarded: +1 if it equals
    ``c_0``, -1 otherwise.
    """

    observation_dim = 2
    action_space = Discrete((-1, 1))

    def __init__(self, n: int):
        super().__init__()
        if n < 1:
            raise ValueError("memory length must be >= 1")
        self.n = int(n)
        self.max_steps = self.n
        self.context = 0

    def _reset(self, rng, context: int | None = None):
        if context is None:
            context = int(rng.choice([-1, 1]))
        if context not in (-1, 1):
            raise ValueError("context must be -1 or +1")
        self.context = context
        return np.array([float(context), 0.0])

    def _step(self, action):
        last = self._t == self.n - 1
        reward = (1.0 if action == self.context else -1.0) if last else 0.0
        # the observation after the final step is terminal and never acted on
        return np.array([0.0, (self._t + 1) / self.n]), reward, last


def memory_observations(n: int, contexts: np.ndarray) -> np.ndarray:
    """All observations of a batch of episodes, shape ``(n, B, 2)``."""
    contexts = np.asarray(contexts, dtype=np.float64)
    obs = np.zeros((n, contexts.size, 2))
    obs[0, :, 0] = contexts
    obs[:, :, 1] = (np.arange(n) / n)[:, None]
    return obs


def success_rate(mean_reward):
    """Fraction of correct final actions given a mean reward in [-1, 1]."""
    return (np.asarray(mean_reward) + 1.0) / 2.0
