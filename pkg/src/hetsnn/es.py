"""Gradient-free optimization: the plain ES estimator and PGPE.

Randomness is counter based. The noise of generation ``g`` comes from a
generator seeded with ``(seed, g)``, and every episode seed is derived from
``(base_seed, generation, member, episode)``. Evaluations are therefore
independent of the order or thread they run on.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SIGMA_MIN = 1e-4
SIGMA_MAX = 1.0

VANILLA_ES = "vanilla_es"
PGPE = "pgpe"
SGD = "sgd"
ADAM = "adam"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class EsConfig:
    population: int = 256
    sigma0: float = 0.1
    lr_center: float = 0.15
    lr_sigma: float = 0.1
    generations: int = 1000
    seed: int = 0
    algorithm: str = PGPE
    rank_fitness: bool = False
    maximize: bool = True
    center_optimizer: str = SGD

    def __post_init__(self):
        if self.algorithm not in (VANILLA_ES, PGPE):
            raise ValueError(f"unknown ES algorithm {self.algorithm!r}")
        if self.center_optimizer not in (SGD, ADAM):
            raise ValueError(f"unknown center optimizer {self.center_optimizer!r}")
        if self.population <= 0 or self.generations <= 0:
            raise ValueError("population and generations must be positive")
        if self.algorithm == PGPE and self.population % 2:
            raise ValueError("symmetric sampling needs an even population")
        for name in ("sigma0", "lr_center", "lr_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class EsState:
    center: np.ndarray
    sigma: np.ndarray
    generation: int = 0
    seed: int = 0
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None

    @classmethod
    def initial(cls, center: np.ndarray, config: EsConfig) -> "EsState":
        center = np.array(center, dtype=np.float64)
        return cls(
            center=center,
            sigma=np.clip(np.full_like(center, config.sigma0), SIGMA_MIN, SIGMA_MAX),
            generation=0,
            seed=config.seed,
        )

    def noise_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.generation])


def episode_seed(base_seed: int, generation: int, member: int, episode: int) -> int:
    """Stable 63-bit seed for one episode of one population member."""
    words = np.random.SeedSequence([base_seed, generation, member, episode]).generate_state(2, np.uint32)
    return int((int(words[0]) << 31) ^ int(words[1]))


def centered_ranks(x: np.ndarray) -> np.ndarray:
    """Map values to ``[-0.5, 0.5]`` by rank; tied values share their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return np.zeros_like(x)
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    mean_rank = (starts + ends - 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks / (x.size - 1) - 0.5


# --- plain ES ---------------------------------------------------------------------


def es_gradient(center, sigma: float, fitnesses: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    """Monte-Carlo gradient ``mean_j eps_j (L_j - mean L) / sigma``.

    Each entry of ``fitnesses`` is ``(eps_j, L(center + sigma * eps_j))``.
    """
    if len(fitnesses) == 0:
        raise ValueError("no fitness samples")
    eps = np.array([np.asarray(e, dtype=np.float64) for e, _ in fitnesses])
    values = np.array([f for _, f in fitnesses], dtype=np.float64)
    eps = eps.reshape(len(values), -1)
    if eps.shape[1] != np.size(center):
        raise ValueError("perturbation dimension does not match center")
    # an exact baseline when all values agree, so the estimate is exactly zero
    baseline = values[0] if np.all(values == values[0]) else values.mean()
    centered = values - baseline
    return (eps.T @ centered / (len(values) * sigma)).reshape(np.shape(center))


def es_update(state: EsState, gradient: np.ndarray, lr: float, ascent: bool = False) -> EsState:
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != state.center.shape:
        raise ValueError("gradient and center lengths differ")
    step = lr * gradient
    center = state.center + step if ascent else state.center - step
    return dataclasses.replace(state, center=center, generation=state.generation + 1)


# --- PGPE -------------------------------------------------------------------------


@dataclass
class GenerationStats:
    generation: int
    fitness_mean: float
    fitness_max: float
    fitness_min: float
    sigma_mean: float
    n_excluded: int = 0
    center_fitness: float = math.nan
    fitness_std: float = 0.0


FitnessFn = Callable[[np.ndarray, int], np.ndarray]


def sample_population(state: EsState, config: EsConfig) -> tuple[np.ndarray, np.ndarray]:
    """Perturbations ``eps`` (standard normal) and candidate genomes.

    PGPE uses ``population/2`` mirrored pairs ordered ``+eps_0, -eps_0, +eps_1, ...``.
    """
    rng = state.noise_rng()
    dim = state.center.size
    if config.algorithm == PGPE:
        half = rng.standard_normal((config.population // 2, dim))
        eps = np.empty((config.population, dim))
        eps[0::2] = half
        eps[1::2] = -half
    else:
        eps = rng.standard_normal((config.population, dim))
    return eps, state.center + state.sigma * eps


def pgpe_gradients(
    eps: np.ndarray, fitness: np.ndarray, sigma: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Center and sigma gradients (ascent) from mirrored pairs.

    The center gradient is the antithetic ES estimate ``eps (r+ - r-) / (2 sigma)``;
    the sigma gradient is ``(mean(r+, r-) - baseline) (eps**2 - 1) sigma``. Pairs with
    a non-finite member are dropped.
    """
    plus, minus = fitness[0::2], fitness[1::2]
    half = eps[0::2]
    ok = np.isfinite(plus) & np.isfinite(minus)
    if not ok.any():
        raise RuntimeError("every population member returned a non-finite fitness")
    plus, minus, half = plus[ok], minus[ok], half[ok]
    m = len(plus)
    avg = 0.5 * (plus + minus)
    baseline = avg.mean()
    grad_center = (half.T @ (0.5 * (plus - minus))) / (m * sigma)
    grad_sigma = (((half**2 - 1.0).T @ (avg - baseline)) / m) * sigma
    return grad_center, grad_sigma


def _adam_ascent(state: EsState, grad: np.ndarray, lr: float):
    m = np.zeros_like(grad) if state.adam_m is None else state.adam_m
    v = np.zeros_like(grad) if state.adam_v is None else state.adam_v
    t = state.generation + 1
    m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * grad * grad
    step = lr * (m / (1 - ADAM_BETA1**t)) / (np.sqrt(v / (1 - ADAM_BETA2**t)) + ADAM_EPS)
    return state.center + step, m, v


def pgpe_step(
    state: EsState,
    fitness_fn: FitnessFn,
    config: EsConfig,
) -> tuple[EsState, GenerationStats]:
    """One generation: sample, evaluate, update center and sigma.

    ``fitness_fn(genomes, generation)`` returns one value per row. Values are
    maximized unless ``config.maximize`` is false.
    """
    eps, genomes = sample_population(state, config)
    raw = np.asarray(fitness_fn(genomes, state.generation), dtype=np.float64)
    if raw.shape != (config.population,):
        raise ValueError(f"fitness function returned shape {raw.shape}")
    finite = np.isfinite(raw)
    n_bad = int((~finite).sum())
    if n_bad == raw.size:
        raise RuntimeError(f"generation {state.generation}: all fitness values are non-finite")
    if n_bad:
        log.warning("generation %d: excluding %d non-finite fitness values", state.generation, n_bad)
    score = raw if config.maximize else -raw
    if config.rank_fitness:
        shaped = np.full_like(score, np.nan)
        shaped[finite] = centered_ranks(score[finite])
        score = shaped

    if config.algorithm == PGPE:
        g_center, g_sigma = pgpe_gradients(eps, score, state.sigma)
        sigma = np.clip(state.sigma + config.lr_sigma * g_sigma, SIGMA_MIN, SIGMA_MAX)
    else:
        keep = np.isfinite(score)
        g_center = es_gradient(state.center, 1.0, list(zip(eps[keep] / state.sigma, score[keep])))
        sigma = state.sigma
    if config.center_optimizer == ADAM:
        center, m, v = _adam_ascent(state, g_center, config.lr_center)
    else:
        center, m, v = state.center + config.lr_center * g_center, state.adam_m, state.adam_v
    good = raw[finite]
    stats = GenerationStats(
        generation=state.generation,
        fitness_mean=float(good.mean()),
        fitness_max=float(good.max()),
        fitness_min=float(good.min()),
        fitness_std=float(good.std()),
        sigma_mean=float(state.sigma.mean()),
        n_excluded=n_bad,
    )
    new_state = dataclasses.replace(
        state, center=center, sigma=sigma, generation=state.generation + 1, adam_m=m, adam_v=v
    )
    return new_state, stats


def optimize(
    center0: np.ndarray,
    fitness_fn: FitnessFn,
    config: EsConfig,
    callback: Callable[[EsState, GenerationStats], None] | None = None,
    state: EsState | None = None,
) -> tuple[EsState, list[GenerationStats]]:
    """Run ``config.generations`` generations (resuming from ``state`` if given)."""
    state = state if state is not None else EsState.initial(center0, config)
    history = []
    while state.generation < config.generations:
        state, stats = pgpe_step(state, fitness_fn, config)
        history.append(stats)
        if callback is not None:
            callback(state, stats)
    return state, history


# --- population evaluation --------------------------------------------------------


def run_episode(policy: Callable, env, seed: int) -> float:
    """Total reward of one episode of ``policy(observation) -> action``."""
    obs = env.reset(seed)
    if hasattr(policy, "reset"):
        policy.reset()
    total, done = 0.0, False
    while not done:
        obs, reward, done = env.step(policy(obs))
        total += reward
    return total


def evaluate_population(
    genomes: np.ndarray,
    env,
    make_policy: Callable[[np.ndarray], Callable],
    episodes_per_genome: int = 1,
    base_seed: int = 0,
    generation: int = 0,
    threads: int = 1,
) -> np.ndarray:
    """Mean episode reward of each genome.

    ``make_policy(genome)`` builds a stateful policy; each member gets its own
    copy of ``env``. Results do not depend on ``threads``.
    """
    genomes = np.atleast_2d(np.asarray(genomes, dtype=np.float64))

    def member(j: int) -> float:
        policy = make_policy(genomes[j])
        local_env = copy.deepcopy(env)
        total = 0.0
        for e in range(episodes_per_genome):
            try:
                total += run_episode(policy, local_env, episode_seed(base_seed, generation, j, e))
            except Exception as exc:
                raise RuntimeError(f"population member {j}: {exc}") from exc
        return total / episodes_per_genome

    if threads <= 1:
        return np.array([member(j) for j in range(len(genomes))])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(member, range(len(genomes)))))


def evaluate_chunked(
    genomes: np.ndarray,
    batch_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    chunk_size: int = 64,
    threads: int = 1,
) -> np.ndarray:
    """Evaluate ``batch_fn(genome_rows, member_indices)`` over fixed-size chunks.

    The chunk partition depends only on ``chunk_size``, so thread count never
    changes what each vectorized call computes.
    """
    genomes = np.atleast_2d(genomes)
    starts = list(range(0, len(genomes), chunk_size))
    idx = np.arange(len(genomes))

    def run(s: int) -> np.ndarray:
        return np.asarray(batch_fn(genomes[s:s + chunk_size], idx[s:s + chunk_size]), dtype=np.float64)

    if threads <= 1:
        parts = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    return np.concatenate(parts) if parts else np.zeros(0)


# --- checkpoints --------------------------------------------------------------------
#
# Layout (all little-endian):
#   8 bytes   magic b"HSNNESCK"
#   uint32    format version (1)
#   uint32    flags (bit 0: Adam moments present)
#   uint64    genome dimension D
#   uint64    generation
#   int64     seed
#   D float64 center
#   D float64 sigma
#   D float64 Adam first moment, D float64 second moment (only with flag bit 0)

CHECKPOINT_MAGIC = b"HSNNESCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIQQq")


def save_checkpoint(state: EsState, path) -> None:
    import os
    import tempfile

    has_adam = state.adam_m is not None
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, int(has_adam), state.center.size,
                          state.generation, state.seed)
    arrays = [state.center, state.sigma] + ([state.adam_m, state.adam_v] if has_adam else [])
    payload = header + b"".join(np.asarray(a, dtype="<f8").tobytes() for a in arrays)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> EsState:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ValueError("checkpoint truncated")
    magic, version, flags, dim, generation, seed = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not an ES checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    n_arrays = 4 if flags & 1 else 2
    if body.size != n_arrays * dim:
        raise ValueError("checkpoint truncated")
    parts = [body[i * dim:(i + 1) * dim].astype(np.float64) for i in range(n_arrays)]
    m, v = (parts[2], parts[3]) if n_arrays == 4 else (None, None)
    return EsState(center=parts[0], sigma=parts[1], generation=int(generation), seed=int(seed),
                   adam_m=m, adam_v=v)
