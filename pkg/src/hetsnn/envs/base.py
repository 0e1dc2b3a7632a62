from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EpisodeFinished(RuntimeError):
    """Raised when ``step`` is called on an episode that has ended."""


@dataclass(frozen=True)
class Discrete:
    """``n`` discrete actions; ``values`` are what the environment receives."""

    values: tuple

    @property
    def n(self) -> int:
        return len(self.values)

    def decode(self, index: int):
        return self.values[int(index)]

    def contains(self, action) -> bool:
        return any(action == v for v in self.values)


@dataclass(frozen=True)
class Box:
    low: np.ndarray
    high: np.ndarray

    def decode(self, x):
        return np.clip(np.asarray(x, dtype=np.float64), self.low, self.high)

    def contains(self, action) -> bool:
        a = np.asarray(action)
        return a.shape == np.shape(self.low) and bool(np.all((a >= self.low) & (a <= self.high)))


class Environment(abc.ABC):
    """Episodic environment: ``reset(seed)`` then ``step(action)`` until done.

    ``step`` returns ``(observation, reward, done)``; an episode never exceeds
    ``max_steps`` steps and stepping after ``done`` raises ``EpisodeFinished``.
    """

    observation_dim: int
    action_space: Discrete | Box
    max_steps: int

    def __init__(self):
        self._done = True
        self._t = 0

    @abc.abstractmethod
    def _reset(self, rng: np.random.Generator, **options) -> np.ndarray: ...

    @abc.abstractmethod
    def _step(self, action) -> tuple[np.ndarray, float, bool]: ...

    def reset(self, seed: int | None = None, **options) -> np.ndarray:
        self._done = False
        self._t = 0
        return self._reset(np.random.default_rng(seed), **options)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise EpisodeFinished("episode is done; call reset()")
        if not self.action_space.contains(action):
            raise ValueError(f"action {action!r} outside the action space")
        obs, reward, done = self._step(action)
        self._t += 1
        if self._t >= self.max_steps:
            done = True
        self._done = done
        return obs, reward, done

    @property
    def steps_taken(self) -> int:
        return self._t


def argmax_action(values: Sequence[float]) -> int:
    """Index of the largest value; ties go to the lowest index."""
    return int(np.argmax(values))
