"""Fitness evaluation of genomes on the supported tasks.

Each task turns a block of genomes into fitness values with one vectorized
simulation (population members along a batch axis). Episode randomness comes
from :func:`hetsnn.es.episode_seed`, so a member's fitness depends only on
its genome, the generation and its index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs.base import argmax_action
from .envs.cartpole import CartPoleEnv, CartPolePhysics, cartpole_dynamics, out_of_bounds
from .envs.classify import DEFAULT_STEPS, accuracy, classify_logits, neg_cross_entropy
from .envs.idx import ImageDataset
from .envs.memory import MemoryLengthEnv, memory_observations
from .es import episode_seed, evaluate_chunked
from .bptt import softmax
from .neuron import NetworkSpec, Trajectory, forward, genome_unpack, network_step, readout


EVAL_GENERATION = 2**31 - 1


def trainable_count(hidden: int, input_dim: int, output_dim: int, n_props: int, train_weights: bool) -> int:
    """Genome length of an ``input -> hidden -> output`` network."""
    count = n_props * (hidden + output_dim)
    if train_weights:
        count += hidden * (input_dim + output_dim)
    return count


def solve_hidden_width(
    target: int,
    input_dim: int,
    output_dim: int,
    n_trainable_props: int = 4,
    train_weights: bool = False,
) -> int:
    """Hidden width whose trainable count is closest to ``target``.

    Each hidden neuron adds ``n_trainable_props`` properties plus, when weights
    train, ``input_dim + output_dim`` connections.
    """
    per_neuron = n_trainable_props + (input_dim + output_dim if train_weights else 0)
    if per_neuron == 0:
        raise ValueError("no trainable properties: empty genome")
    h = round((target - n_trainable_props * output_dim) / per_neuron)
    return max(1, int(h))


class SnnPolicy:
    """Stateful deterministic policy: argmax over readout potentials."""

    def __init__(self, net: NetworkSpec, action_space):
        self.net = net
        self.action_space = action_space
        self.reset()

    def reset(self) -> None:
        self.states = self.net.initial_state()

    def __call__(self, obs):
        self.states, _, _ = network_step(self.net, self.states, obs)
        return self.action_space.decode(argmax_action(readout(self.net, self.states)))


def policy_factory(template: NetworkSpec, action_space):
    def make(genome):
        return SnnPolicy(genome_unpack(template, genome), action_space)

    return make


def _population_net(template: NetworkSpec, genomes: np.ndarray, extra_axes: int = 1) -> NetworkSpec:
    # (b, P) -> parameters with shape (b, 1, ..., n) so episodes broadcast
    g = genomes.reshape(genomes.shape[:1] + (1,) * extra_axes + genomes.shape[1:])
    return genome_unpack(template, g)


@dataclass
class SphereTask:
    dim: int = 32

    def initial_genome(self, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).uniform(-1.0, 1.0, self.dim)

    def batch_fitness(self, genomes, members, generation, base_seed):
        return -np.sum(np.asarray(genomes) ** 2, axis=-1)

    def center_fitness(self, genome, base_seed, episodes=1):
        return float(-np.sum(np.asarray(genome) ** 2))


@dataclass
class MemoryTask:
    """Memory-length task; fitness is the mean final reward in [-1, 1].

    With ``balanced`` episodes the cue alternates -1, +1 across a member's
    episodes instead of being drawn at random.
    """

    template: NetworkSpec
    length: int
    episodes: int = 2
    balanced: bool = True

    def initial_genome(self, seed: int) -> np.ndarray:
        from .neuron import genome_pack

        return genome_pack(self.template)

    def contexts(self, members, generation, base_seed, episodes=None):
        episodes = self.episodes if episodes is None else episodes
        if self.balanced:
            row = np.where(np.arange(episodes) % 2 == 0, -1.0, 1.0)
            return np.tile(row, (len(members), 1))
        out = np.empty((len(members), episodes))
        for a, m in enumerate(members):
            for e in range(episodes):
                rng = np.random.default_rng(episode_seed(base_seed, generation, int(m), e))
                out[a, e] = rng.choice([-1.0, 1.0])
        return out

    def rewards(self, genomes, contexts) -> np.ndarray:
        net = _population_net(self.template, np.asarray(genomes))
        b, e = contexts.shape
        obs = memory_observations(self.length, contexts.reshape(-1)).reshape(self.length, b, e, 2)
        out, _ = forward(net, obs, record=False)
        actions = np.where(np.argmax(out[-1], axis=-1) == 1, 1.0, -1.0)
        return np.where(actions == contexts, 1.0, -1.0)

    def batch_fitness(self, genomes, members, generation, base_seed):
        return self.rewards(genomes, self.contexts(members, generation, base_seed)).mean(axis=-1)

    def center_fitness(self, genome, base_seed, episodes=2):
        ctx = np.where(np.arange(episodes) % 2 == 0, -1.0, 1.0)[None]
        return float(self.rewards(np.asarray(genome)[None], ctx).mean())

    def make_env(self):
        return MemoryLengthEnv(self.length)


@dataclass
class CartPoleTask:
    template: NetworkSpec
    max_steps: int = 500
    episodes: int = 1
    physics: CartPolePhysics = field(default_factory=CartPolePhysics)

    def initial_genome(self, seed: int) -> np.ndarray:
        from .neuron import genome_pack

        return genome_pack(self.template)

    def returns(self, genomes, seeds: np.ndarray) -> np.ndarray:
        """Episode returns, ``seeds`` of shape ``(b, episodes)``."""
        net = _population_net(self.template, np.asarray(genomes))
        b, e = seeds.shape
        state = np.stack([
            np.random.default_rng(int(s)).uniform(-0.05, 0.05, size=4) for s in seeds.reshape(-1)
        ]).reshape(b, e, 4)
        states = net.initial_state((b, e))
        alive = np.ones((b, e), dtype=bool)
        total = np.zeros((b, e))
        for _ in range(self.max_steps):
            states, _, _ = network_step(net, states, state)
            action = np.argmax(readout(net, states), axis=-1)
            state = cartpole_dynamics(state, action, self.physics)
            failed = out_of_bounds(state, self.physics)
            total += alive & ~failed
            alive &= ~failed
            if not alive.any():
                break
        return total

    def sample_batch(self, net: NetworkSpec, seeds, rng: np.random.Generator):
        """Side-by-side stochastic rollouts of one (unbatched) network.

        Actions are drawn from a softmax over readout potentials. Returns the
        trajectory ``(T, B, ...)``, actions and alive masks ``(T, B)`` and the
        episode returns. Finished episodes keep their last state frozen.
        """
        seeds = np.asarray(seeds).reshape(-1)
        state = np.stack([np.random.default_rng(int(s)).uniform(-0.05, 0.05, size=4) for s in seeds])
        b = len(seeds)
        states = net.initial_state((b,))
        traj = Trajectory.empty(net.n_layers)
        alive = np.ones(b, dtype=bool)
        total = np.zeros(b)
        actions, alive_log = [], []
        for _ in range(self.max_steps):
            states, currents, us = network_step(net, states, state)
            traj.record(state, states, currents, us)
            cdf = np.cumsum(softmax(readout(net, states)), axis=-1)
            a = np.minimum((cdf < rng.random(b)[:, None]).sum(axis=-1), cdf.shape[-1] - 1)
            actions.append(a)
            alive_log.append(alive.copy())
            nxt = cartpole_dynamics(state, a, self.physics)
            failed = out_of_bounds(nxt, self.physics)
            total += alive & ~failed
            state = np.where(alive[:, None], nxt, state)
            alive = alive & ~failed
            if not alive.any():
                break
        return traj, np.array(actions), np.array(alive_log), total

    def seeds(self, members, generation, base_seed, episodes=None):
        episodes = self.episodes if episodes is None else episodes
        return np.array([[episode_seed(base_seed, generation, int(m), k) for k in range(episodes)]
                         for m in members], dtype=np.int64)

    def batch_fitness(self, genomes, members, generation, base_seed):
        return self.returns(genomes, self.seeds(members, generation, base_seed)).mean(axis=-1)

    def center_fitness(self, genome, base_seed, episodes=10):
        # evaluation episodes use a generation index no training run reaches
        seeds = self.seeds([0], EVAL_GENERATION, base_seed, episodes)
        return float(self.returns(np.asarray(genome)[None], seeds).mean())

    def make_env(self):
        return CartPoleEnv(self.max_steps, self.physics)


@dataclass
class ClassifyTask:
    """Image classification; fitness is accuracy (or negative cross-entropy)."""

    template: NetworkSpec
    train: ImageDataset
    test: ImageDataset | None = None
    steps: int = DEFAULT_STEPS
    fitness: str = "accuracy"
    batch_size: int = 0  # 0: whole training set every generation

    def initial_genome(self, seed: int) -> np.ndarray:
        from .neuron import genome_pack

        return genome_pack(self.template)

    def _batch(self, generation, base_seed):
        n = len(self.train)
        if not self.batch_size or self.batch_size >= n:
            return self.train.flat(), self.train.labels
        rng = np.random.default_rng([base_seed, generation, 7])
        idx = rng.choice(n, self.batch_size, replace=False)
        return self.train.flat()[idx], self.train.labels[idx]

    def score(self, logits, labels):
        if self.fitness == "accuracy":
            return accuracy(logits, labels)
        if self.fitness == "cross_entropy":
            return neg_cross_entropy(logits, labels)
        raise ValueError(f"unknown classification fitness {self.fitness!r}")

    def batch_fitness(self, genomes, members, generation, base_seed):
        x, y = self._batch(generation, base_seed)
        net = _population_net(self.template, np.asarray(genomes))
        return self.score(classify_logits(net, x, self.steps), y)

    def accuracy(self, genome, dataset: ImageDataset) -> float:
        net = genome_unpack(self.template, genome)
        return float(accuracy(classify_logits(net, dataset.flat(), self.steps), dataset.labels))

    def center_fitness(self, genome, base_seed, episodes=1):
        return self.accuracy(genome, self.train)


def population_fitness(task, genomes, generation, base_seed, chunk_size=64, threads=1):
    """Fitness of every row of ``genomes`` (deterministic for any ``threads``)."""
    return evaluate_chunked(
        genomes,
        lambda g, members: task.batch_fitness(g, members, generation, base_seed),
        chunk_size=chunk_size,
        threads=threads,
    )
