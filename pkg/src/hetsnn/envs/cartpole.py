"""Cart-pole balancing with the classic CartPole-v1 constants and Euler integration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Discrete, Environment


@dataclass(frozen=True)
class CartPolePhysics:
    gravity: float = 9.8
    mass_cart: float = 1.0
    mass_pole: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    dt: float = 0.02
    theta_limit: float = 12 * 2 * math.pi / 360
    x_limit: float = 2.4

    @property
    def total_mass(self) -> float:
        return self.mass_cart + self.mass_pole

    @property
    def pole_mass_length(self) -> float:
        return self.mass_pole * self.half_length


def cartpole_dynamics(state: np.ndarray, push_right, physics: CartPolePhysics = CartPolePhysics()) -> np.ndarray:
    """One Euler step for states of shape ``(..., 4)`` = (x, x_dot, theta, theta_dot)."""
    x, x_dot, theta, theta_dot = np.moveaxis(np.asarray(state, dtype=np.float64), -1, 0)
    force = np.where(np.asarray(push_right) == 1, physics.force_mag, -physics.force_mag)
    cos, sin = np.cos(theta), np.sin(theta)
    temp = (force + physics.pole_mass_length * theta_dot**2 * sin) / physics.total_mass
    theta_acc = (physics.gravity * sin - cos * temp) / (
        physics.half_length * (4.0 / 3.0 - physics.mass_pole * cos**2 / physics.total_mass)
    )
    x_acc = temp - physics.pole_mass_length * theta_acc * cos / physics.total_mass
    return np.stack(
        [
            x + physics.dt * x_dot,
            x_dot + physics.dt * x_acc,
            theta + physics.dt * theta_dot,
            theta_dot + physics.dt * theta_acc,
        ],
        axis=-1,
    )


def out_of_bounds(state: np.ndarray, physics: CartPolePhysics = CartPolePhysics()) -> np.ndarray:
    state = np.asarray(state)
    return (np.abs(state[..., 0]) > physics.x_limit) | (np.abs(state[..., 2]) > physics.theta_limit)


class CartPoleEnv(Environment):
    """Actions 0/1 push left/right. Reward is 1 for every step after which the
    pole is still within 12 degrees and the cart within the track, so the
    return counts surviving steps.
    """

    observation_dim = 4
    action_space = Discrete((0, 1))

    def __init__(self, max_steps: int = 500, physics: CartPolePhysics = CartPolePhysics()):
        super().__init__()
        self.max_steps = int(max_steps)
        self.physics = physics
        self.state = np.zeros(4)

    def _reset(self, rng, state=None):
        self.state = rng.uniform(-0.05, 0.05, size=4) if state is None else np.array(state, dtype=np.float64)
        return self.state.copy()

    def _step(self, action):
        self.state = cartpole_dynamics(self.state, action, self.physics)
        failed = bool(out_of_bounds(self.state, self.physics))
        return self.state.copy(), 0.0 if failed else 1.0, failed
