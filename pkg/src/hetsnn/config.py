"""Experiment configuration: INI files with one section per concern.

Every key has a default, so a config file only lists what differs. Named
profiles are INI overlays applied before the user file.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

from .bptt import DETACHED, FULL
from .es import PGPE, VANILLA_ES
from .neuron import MEMBRANE_POTENTIAL, PROPERTIES, SPIKE_COUNT
from .surrogate import KINDS

TASKS = ("memory", "cartpole", "classify", "sphere")
OPTIMIZERS = ("es_pgpe", "bptt_reinforce", "bptt_supervised")
CENTER_OPTIMIZERS = ("sgd", "adam")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSection:
    task: str = "sphere"
    optimizer: str = "es_pgpe"
    seed: int = 0
    seeds: tuple = (0, 1, 2)
    out: str = "runs"
    threads: int = 1
    chunk_size: int = 64


@dataclass
class NetworkSection:
    hidden: int = 0  # 0: solve from param_budget
    param_budget: int = 256
    trainable_mask: tuple = (True, True, True, True)
    train_weights: bool = False
    readout_mode: str = MEMBRANE_POTENTIAL
    input_gain: float = 1.0
    net_seed: int = -1  # -1: use the experiment seed


@dataclass
class NeuronSection:
    delta_t: float = 5.0
    tau_m: float = 20.0
    v_th: float = 0.5
    v_rest: float = 0.0
    r_mem: float = 1.0


@dataclass
class EsSection:
    population: int = 256
    sigma0: float = 0.1
    lr_center: float = 0.15
    lr_sigma: float = 0.1
    generations: int = 1000
    algorithm: str = PGPE
    rank_fitness: bool = False
    center_optimizer: str = "sgd"
    episodes_per_genome: int = 1


@dataclass
class BpttSection:
    lr: float = 3e-2
    surrogate: str = "rectangular"
    alpha: float = 2.0
    grad_mode: str = FULL
    batch_episodes: int = 8
    episode_budget: int = 3840
    updates: int = 200
    batch_size: int = 64


@dataclass
class EnvSection:
    memory_length: int = 10
    max_steps: int = 500
    sphere_dim: int = 32
    mnist_dir: str = ""
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_subset: int = 2000
    test_subset: int = 1000
    steps: int = 4
    fitness: str = "accuracy"
    eval_batch: int = 0
    eval_episodes: int = 10


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    neuron: NeuronSection = field(default_factory=NeuronSection)
    es: EsSection = field(default_factory=EsSection)
    bptt: BpttSection = field(default_factory=BpttSection)
    env: EnvSection = field(default_factory=EnvSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_ini(self) -> str:
        lines = []
        for sec in dataclasses.fields(self):
            lines.append(f"[{sec.name}]")
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                lines.append(f"{f.name} = {_format(f.name, getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **sections) -> "ExperimentConfig":
        """``cfg.replace(es={"generations": 5})`` returns an updated copy."""
        out = dataclasses.replace(self)
        for name, changes in sections.items():
            setattr(out, name, dataclasses.replace(getattr(out, name), **changes))
        return out

    @property
    def trains_neurons(self) -> bool:
        return any(self.network.trainable_mask)


def _format(name: str, value) -> str:
    if name == "trainable_mask":
        names = [p for p, on in zip(PROPERTIES, value) if on]
        return ",".join(names) if names else "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_mask(text: str) -> tuple[bool, bool, bool, bool]:
    """Mask from property names (``tau_m,r_mem``), bits (``1001``) or ``none``/``all``."""
    text = text.strip().lower()
    if text in ("", "none"):
        return (False, False, False, False)
    if text == "all":
        return (True, True, True, True)
    if len(text) == 4 and set(text) <= {"0", "1"}:
        return tuple(c == "1" for c in text)
    names = [t.strip() for t in text.split(",") if t.strip()]
    aliases = {"r": "r_mem", "tau": "tau_m", "vth": "v_th", "vrest": "v_rest"}
    names = [aliases.get(n, n) for n in names]
    bad = [n for n in names if n not in PROPERTIES]
    if bad:
        raise ConfigError(f"unknown neuron property {bad[0]!r} (expected one of {', '.join(PROPERTIES)})")
    return tuple(p in names for p in PROPERTIES)


def _coerce(section: str, key: str, default, text: str):
    where = f"[{section}] {key}"
    try:
        if key == "trainable_mask":
            return parse_mask(text)
        if isinstance(default, bool):
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(t) for t in text.split(",") if t.strip())
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def apply_ini(cfg: ExperimentConfig, text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = dataclasses.replace(cfg)
    known = {f.name for f in dataclasses.fields(cfg)}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{source}: unknown section [{section}]")
        obj = getattr(cfg, section)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        changes = {}
        for key, value in parser.items(section):
            if key not in fields:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            changes[key] = _coerce(section, key, getattr(obj, key), value)
        setattr(cfg, section, dataclasses.replace(obj, **changes))
    return cfg


# Profiles. ES settings not listed keep the published defaults (population 256,
# sigma0 0.1, lr_center 0.15, lr_sigma 0.1, 1000 generations).
PROFILES: dict[str, str] = {
    "sphere": """
[experiment]
task = sphere
[es]
generations = 300
""",
    "memory": """
[experiment]
task = memory
[network]
param_budget = 256
input_gain = 3.0
[es]
generations = 300
sigma0 = 0.3
rank_fitness = true
center_optimizer = adam
lr_center = 0.03
episodes_per_genome = 2
[env]
memory_length = 10
""",
    "memory-weight": """
[experiment]
task = memory
[network]
param_budget = 256
trainable_mask = none
train_weights = true
input_gain = 3.0
[es]
generations = 300
sigma0 = 0.3
rank_fitness = true
center_optimizer = adam
lr_center = 0.03
episodes_per_genome = 2
[env]
memory_length = 10
""",
    "cartpole": """
[experiment]
task = cartpole
[network]
param_budget = 256
input_gain = 5.0
[es]
population = 128
generations = 30
rank_fitness = true
[env]
max_steps = 1000
""",
    "cartpole-bp": """
[experiment]
task = cartpole
optimizer = bptt_reinforce
[network]
param_budget = 256
trainable_mask = none
train_weights = true
input_gain = 5.0
[bptt]
lr = 0.1
episode_budget = 3840
[env]
max_steps = 1000
""",
    "mnist": """
[experiment]
task = classify
chunk_size = 8
[network]
param_budget = 4096
input_gain = 8.0
[es]
generations = 50
rank_fitness = true
[env]
train_subset = 2000
test_subset = 1000
fitness = cross_entropy
eval_batch = 200
""",
    "mnist-long": """
[experiment]
task = classify
chunk_size = 8
[network]
param_budget = 4096
input_gain = 8.0
[es]
generations = 1000
rank_fitness = true
[env]
train_subset = 0
eval_batch = 2000
fitness = cross_entropy
""",
}


def load_config(path: str | None = None, profile: str | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if profile:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r} (choose from {', '.join(sorted(PROFILES))})")
        cfg = apply_ini(cfg, PROFILES[profile], f"<profile {profile}>")
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = apply_ini(cfg, text, path)
    return cfg


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(cfg: ExperimentConfig, check_files: bool = True) -> ExperimentConfig:
    """Raise :class:`ConfigError` describing the first problem found."""
    ex, net, nr, es, bp, env = cfg.experiment, cfg.network, cfg.neuron, cfg.es, cfg.bptt, cfg.env
    _require(ex.task in TASKS, f"[experiment] task must be one of {', '.join(TASKS)}, got {ex.task!r}")
    _require(ex.optimizer in OPTIMIZERS,
             f"[experiment] optimizer must be one of {', '.join(OPTIMIZERS)}, got {ex.optimizer!r}")
    _require(ex.threads >= 1, "[experiment] threads must be >= 1")
    _require(ex.chunk_size >= 1, "[experiment] chunk_size must be >= 1")
    _require(len(ex.seeds) >= 1, "[experiment] seeds must list at least one seed")
    if ex.task == "sphere":
        _require(ex.optimizer == "es_pgpe", "the sphere task runs with es_pgpe only")
        _require(env.sphere_dim >= 1, "[env] sphere_dim must be >= 1")
    else:
        _require(cfg.trains_neurons or net.train_weights,
                 "nothing to train: trainable_mask is empty and train_weights is false")
        _require(net.hidden >= 0 and net.param_budget >= 1, "[network] hidden/param_budget must be positive")
        _require(net.readout_mode in (MEMBRANE_POTENTIAL, SPIKE_COUNT),
                 f"[network] unknown readout_mode {net.readout_mode!r}")
        _require(net.input_gain > 0, "[network] input_gain must be positive")
    _require(nr.delta_t > 0 and nr.tau_m > nr.delta_t,
             "[neuron] need delta_t > 0 and tau_m > delta_t (decay factor below 1)")
    _require(nr.r_mem > 0, "[neuron] r_mem must be positive")
    if ex.optimizer == "es_pgpe":
        _require(es.population >= 2 and es.generations >= 1, "[es] population >= 2 and generations >= 1")
        _require(es.algorithm in (PGPE, VANILLA_ES), f"[es] unknown algorithm {es.algorithm!r}")
        _require(es.algorithm != PGPE or es.population % 2 == 0, "[es] PGPE needs an even population")
        _require(es.sigma0 > 0 and es.lr_center > 0 and es.lr_sigma > 0, "[es] rates must be positive")
        _require(es.center_optimizer in CENTER_OPTIMIZERS,
                 f"[es] center_optimizer must be one of {', '.join(CENTER_OPTIMIZERS)}")
        _require(es.episodes_per_genome >= 1, "[es] episodes_per_genome must be >= 1")
    else:
        _require(bp.lr > 0, "[bptt] lr must be positive")
        _require(bp.surrogate in KINDS, f"[bptt] surrogate must be one of {', '.join(KINDS)}")
        _require(bp.grad_mode in (FULL, DETACHED), f"[bptt] grad_mode must be {FULL} or {DETACHED}")
        _require(bp.batch_episodes >= 1 and bp.episode_budget >= 1 and bp.updates >= 1,
                 "[bptt] batch_episodes, episode_budget and updates must be >= 1")
    if ex.optimizer == "bptt_reinforce":
        _require(ex.task in ("cartpole", "memory"), "bptt_reinforce needs an episodic task (cartpole, memory)")
    if ex.optimizer == "bptt_supervised":
        _require(ex.task in ("classify", "memory"), "bptt_supervised needs a labelled task (classify, memory)")
    if ex.task == "memory":
        _require(env.memory_length >= 1, "[env] memory_length must be >= 1")
    if ex.task == "cartpole":
        _require(env.max_steps >= 1, "[env] max_steps must be >= 1")
    if ex.task == "classify":
        _require(env.steps >= 1, "[env] steps must be >= 1")
        _require(env.fitness in ("accuracy", "cross_entropy"), "[env] fitness must be accuracy or cross_entropy")
        if check_files:
            for path in dataset_paths(cfg):
                _require(os.path.isfile(path), f"dataset file not found: {path}")
    return cfg


_MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def _find(directory: str, names) -> str:
    for name in names:
        for suffix in ("", ".gz"):
            path = os.path.join(directory, name + suffix)
            if os.path.isfile(path):
                return path
    return os.path.join(directory, names[0])


def dataset_paths(cfg: ExperimentConfig) -> list[str]:
    """Train images/labels, then test images/labels when configured.

    Explicit paths win; otherwise files are looked up in ``mnist_dir`` (or the
    ``HETSNN_MNIST_DIR`` environment variable) under their usual names.
    """
    env = cfg.env
    directory = env.mnist_dir or os.environ.get("HETSNN_MNIST_DIR", "")
    out = []
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        path = getattr(env, key)
        if not path and directory:
            path = _find(directory, _MNIST_FILES[key])
        if path:
            out.append(path)
    if len(out) not in (2, 4):
        raise ConfigError("classification needs train_images and train_labels (or mnist_dir)")
    return out


def as_dict_flat(cfg: ExperimentConfig) -> dict[str, Any]:
    return {f"{s}.{k}": v for s, sec in cfg.to_dict().items() for k, v in sec.items()}
