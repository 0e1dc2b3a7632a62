"""Training runs and multi-run experiments driven by an :class:`ExperimentConfig`.

A run directory holds:

``curves.csv``     one row per generation (ES) or update (BPTT), no wall-clock data
``timing.csv``     elapsed seconds per row of ``curves.csv``
``genome.csv``     per-neuron properties of the final genome (tau_m in ms)
``genome.txt``     the final flat genome, one float per line
``checkpoint.bin`` ES state (center, sigma, optimizer moments)
``config.ini``     the full resolved configuration
``metadata.json``  config hash, seed, wall time and final metrics
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bptt import Adam, backward, reinforce_batch_gradient, reinforce_update, sample_episode, softmax
from .config import ExperimentConfig, dataset_paths, validate
from .envs.idx import load_dataset
from .envs.memory import memory_observations, success_rate
from .es import EsConfig, EsState, episode_seed, load_checkpoint, optimize, save_checkpoint
from .neuron import (
    PROPERTIES,
    build_network,
    forward,
    genome_length,
    genome_pack,
    genome_unpack,
    neuron_table,
)
from .surrogate import SurrogateSpec
from .tasks import (
    CartPoleTask,
    ClassifyTask,
    MemoryTask,
    SphereTask,
    population_fitness,
    solve_hidden_width,
)

log = logging.getLogger(__name__)

CURVES_SCHEMA_VERSION = 1
ES_COLUMNS = ("generation", "episodes", "fitness_mean", "fitness_std", "fitness_max", "fitness_min",
              "sigma_mean", "n_excluded", "center_fitness")
BP_COLUMNS = ("update", "episodes", "fitness_mean", "fitness_std", "fitness_max", "fitness_min",
              "grad_norm")
GENOME_COLUMNS = ("layer", "neuron", "tau_m_ms", "v_th", "v_rest", "r_mem")
CHECKPOINT_EVERY = 10

TASK_DIMS = {"memory": (2, 2), "cartpole": (4, 2)}


# --- atomic file output --------------------------------------------------------------


def atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) if isinstance(row, dict) else _fmt(x) for c, x in
                    (zip(columns, columns) if isinstance(row, dict) else zip(columns, row))])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    atomic_write(path, csv_text(columns, rows))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- building tasks ------------------------------------------------------------------


@dataclass
class Setup:
    task: object
    template: object | None  # NetworkSpec, None for the sphere
    hidden: int = 0


def _mnist(cfg: ExperimentConfig):
    paths = dataset_paths(cfg)
    train = load_dataset(paths[0], paths[1], "train")
    test = load_dataset(paths[2], paths[3], "test") if len(paths) == 4 else None
    env = cfg.env
    if test is None:
        # hold out the tail of a shuffled training file
        n = len(train)
        order = np.random.default_rng(12345).permutation(n)
        n_test = min(env.test_subset or n // 5, n // 2)
        test = train.subset(order[:n_test])
        train = train.subset(order[n_test:])
    if env.train_subset and env.train_subset < len(train):
        train = train.balanced_subset(env.train_subset // 10, seed=0)
    if env.test_subset and env.test_subset < len(test):
        test = test.balanced_subset(env.test_subset // 10, seed=1)
    return train, test


def build_setup(cfg: ExperimentConfig, seed: int | None = None, data=None) -> Setup:
    """Task object and template network for ``cfg`` (weights drawn from the seed)."""
    seed = cfg.experiment.seed if seed is None else seed
    task_name = cfg.experiment.task
    if task_name == "sphere":
        return Setup(SphereTask(cfg.env.sphere_dim), None)
    net_cfg, env = cfg.network, cfg.env
    if task_name == "classify":
        train, test = data if data is not None else _mnist(cfg)
        dims = (train.flat().shape[1], 10)
    else:
        dims = TASK_DIMS[task_name]
    n_props = sum(net_cfg.trainable_mask)
    hidden = net_cfg.hidden or solve_hidden_width(net_cfg.param_budget, dims[0], dims[1], n_props,
                                                  net_cfg.train_weights)
    nr = cfg.neuron
    template = build_network(
        (dims[0], hidden, dims[1]),
        seed=net_cfg.net_seed if net_cfg.net_seed >= 0 else seed,
        trainable_mask=net_cfg.trainable_mask,
        train_weights=net_cfg.train_weights,
        readout_mode=net_cfg.readout_mode,
        input_gain=net_cfg.input_gain,
        delta_t=nr.delta_t * 1e-3,  # config times are in ms
        tau_m=nr.tau_m * 1e-3,
        v_th=nr.v_th,
        v_rest=nr.v_rest,
        r_mem=nr.r_mem,
    )
    if task_name == "memory":
        task = MemoryTask(template, env.memory_length, episodes=cfg.es.episodes_per_genome)
    elif task_name == "cartpole":
        task = CartPoleTask(template, env.max_steps, episodes=cfg.es.episodes_per_genome)
    else:
        task = ClassifyTask(template, train, test, steps=env.steps, fitness=env.fitness,
                            batch_size=env.eval_batch)
    return Setup(task, template, hidden)


# --- results -------------------------------------------------------------------------


@dataclass
class RunResult:
    curves: list[dict]
    columns: tuple
    genome: np.ndarray
    final: dict
    timing: list[float] = field(default_factory=list)
    state: EsState | None = None


def es_config(cfg: ExperimentConfig, seed: int) -> EsConfig:
    es = cfg.es
    return EsConfig(
        population=es.population, sigma0=es.sigma0, lr_center=es.lr_center, lr_sigma=es.lr_sigma,
        generations=es.generations, seed=seed, algorithm=es.algorithm, rank_fitness=es.rank_fitness,
        maximize=True, center_optimizer=es.center_optimizer,
    )


def _final_metrics(cfg: ExperimentConfig, setup: Setup, genome: np.ndarray, last: dict, seed: int) -> dict:
    task = setup.task
    final = {
        "final_reward": last["fitness_mean"],
        "final_reward_std": last["fitness_std"],
        "center_reward": task.center_fitness(genome, seed, cfg.env.eval_episodes)
        if isinstance(task, CartPoleTask) else task.center_fitness(genome, seed),
    }
    if isinstance(task, MemoryTask):
        final["final_success"] = float(success_rate(final["final_reward"]))
        final["center_success"] = float(success_rate(final["center_reward"]))
    if isinstance(task, ClassifyTask):
        final["train_accuracy"] = task.accuracy(genome, task.train)
        if task.test is not None:
            final["test_accuracy"] = task.accuracy(genome, task.test)
    return final


def train_es(cfg: ExperimentConfig, setup: Setup, seed: int, out_dir: str | None = None,
             resume: bool = False) -> RunResult:
    conf = es_config(cfg, seed)
    task = setup.task
    ex = cfg.experiment
    rows: list[dict] = []
    timing: list[float] = []
    state = None
    ckpt = os.path.join(out_dir, "checkpoint.bin") if out_dir else None
    if resume and ckpt and os.path.exists(ckpt):
        state = load_checkpoint(ckpt)
        prev = read_csv(os.path.join(out_dir, "curves.csv"))[: state.generation]
        rows = [{k: _parse_number(v) for k, v in r.items()} for r in prev]
        timing = [math.nan] * len(rows)
        log.info("resuming from generation %d", state.generation)
    center0 = task.initial_genome(seed) if setup.template is None else genome_pack(setup.template)
    t0 = time.perf_counter()

    def fitness_fn(genomes, generation):
        return population_fitness(task, genomes, generation, seed, ex.chunk_size, ex.threads)

    def callback(st: EsState, stats):
        row = dataclasses.asdict(stats)
        row["episodes"] = (stats.generation + 1) * conf.population * cfg.es.episodes_per_genome
        row["center_fitness"] = (task.center_fitness(st.center, seed, cfg.env.eval_episodes)
                                 if isinstance(task, CartPoleTask) else task.center_fitness(st.center, seed))
        rows.append(row)
        timing.append(time.perf_counter() - t0)
        if ckpt and (st.generation % CHECKPOINT_EVERY == 0 or st.generation == conf.generations):
            save_checkpoint(st, ckpt)
            write_csv(os.path.join(out_dir, "curves.csv"), ES_COLUMNS, rows)

    try:
        state, _ = optimize(center0, fitness_fn, conf, callback, state)
    except Exception:
        if out_dir and rows:
            write_csv(os.path.join(out_dir, "curves.csv"), ES_COLUMNS, rows)
        raise
    final = _final_metrics(cfg, setup, state.center, rows[-1], seed)
    return RunResult(rows, ES_COLUMNS, state.center, final, timing, state)


def _parse_number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _surrogate(cfg: ExperimentConfig) -> SurrogateSpec:
    return SurrogateSpec(cfg.bptt.surrogate, cfg.bptt.alpha)


def train_reinforce(cfg: ExperimentConfig, setup: Setup, seed: int) -> RunResult:
    """REINFORCE with a softmax policy over readout potentials, Adam ascent."""
    bp = cfg.bptt
    template = setup.template
    env = setup.task.make_env()
    surrogate = _surrogate(cfg)
    opt = Adam(lr=bp.lr)
    genome = genome_pack(template)
    rng = np.random.default_rng([seed, 1])
    rows, timing, returns_log = [], [], []
    episodes = 0
    t0 = time.perf_counter()
    update = 0
    while episodes < bp.episode_budget:
        net = genome_unpack(template, genome)
        n = min(bp.batch_episodes, bp.episode_budget - episodes)
        seeds = [episode_seed(seed, update, j, 0) for j in range(n)]
        if hasattr(setup.task, "sample_batch"):
            traj, actions, alive, rets = setup.task.sample_batch(net, seeds, rng)
            grad = reinforce_batch_gradient(net, traj, actions, alive, rets, surrogate, bp.grad_mode)
        else:
            batch = [sample_episode(net, env, s, rng) for s in seeds]
            rets = np.array([ep.ret for ep in batch])
            grad = reinforce_update(net, batch, surrogate, bp.grad_mode)
        finite = np.isfinite(grad).all()
        if finite:
            genome = opt.step(genome, grad, ascent=True)
        else:
            log.warning("update %d: non-finite gradient skipped", update)
        returns_log.extend(rets.tolist())
        episodes += n
        rows.append({
            "update": update, "episodes": episodes, "fitness_mean": float(rets.mean()),
            "fitness_std": float(rets.std()), "fitness_max": float(rets.max()),
            "fitness_min": float(rets.min()),
            "grad_norm": float(np.linalg.norm(grad)) if finite else math.inf,
        })
        timing.append(time.perf_counter() - t0)
        update += 1
    # final reward: mean over the last population-sized block of training episodes
    tail = np.array(returns_log[-min(len(returns_log), cfg.es.population):])
    last = {"fitness_mean": float(tail.mean()), "fitness_std": float(tail.std())}
    final = _final_metrics(cfg, setup, genome, last, seed)
    return RunResult(rows, BP_COLUMNS, genome, final, timing)


def _supervised_batch(cfg, setup: Setup, update: int, seed: int):
    task = setup.task
    bp = cfg.bptt
    if isinstance(task, MemoryTask):
        contexts = np.where(np.arange(bp.batch_size) % 2 == 0, -1.0, 1.0)
        xs = memory_observations(task.length, contexts)
        return xs, (contexts > 0).astype(int)
    rng = np.random.default_rng([seed, update, 3])
    n = len(task.train)
    idx = rng.choice(n, min(bp.batch_size, n), replace=False)
    x = task.train.flat()[idx]
    return np.broadcast_to(x, (task.steps,) + x.shape), task.train.labels[idx]


def train_supervised(cfg: ExperimentConfig, setup: Setup, seed: int) -> RunResult:
    """Cross-entropy on the final-step readout, BPTT with Adam."""
    bp = cfg.bptt
    template = setup.template
    surrogate = _surrogate(cfg)
    opt = Adam(lr=bp.lr)
    genome = genome_pack(template)
    rows, timing = [], []
    t0 = time.perf_counter()
    for update in range(bp.updates):
        net = genome_unpack(template, genome)
        xs, labels = _supervised_batch(cfg, setup, update, seed)
        out, traj = forward(net, xs)
        probs = softmax(out[-1])
        n = len(labels)
        loss_each = -np.log(probs[np.arange(n), labels] + 1e-300)
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        grads = np.zeros_like(out)
        grads[-1] = dlogits / n
        grad = backward(net, traj, grads, surrogate, bp.grad_mode)
        finite = np.isfinite(grad).all()
        if finite:
            genome = opt.step(genome, grad, ascent=False)
        correct = (np.argmax(out[-1], axis=-1) == labels).astype(float)
        rows.append({
            "update": update, "episodes": (update + 1) * n, "fitness_mean": float(correct.mean()),
            "fitness_std": float(correct.std()), "fitness_max": float(-loss_each.min()),
            "fitness_min": float(-loss_each.max()),
            "grad_norm": float(np.linalg.norm(grad)) if finite else math.inf,
        })
        timing.append(time.perf_counter() - t0)
    last = {"fitness_mean": rows[-1]["fitness_mean"], "fitness_std": rows[-1]["fitness_std"]}
    final = _final_metrics(cfg, setup, genome, last, seed)
    return RunResult(rows, BP_COLUMNS, genome, final, timing)


# --- run directories --------------------------------------------------------------------


def genome_rows(setup: Setup, genome: np.ndarray) -> tuple[tuple, list]:
    if setup.template is None:
        return ("index", "value"), [(i, float(g)) for i, g in enumerate(genome)]
    net = genome_unpack(setup.template, genome)
    return GENOME_COLUMNS, [tuple(r[c] for c in GENOME_COLUMNS) for r in neuron_table(net)]


def run_train(cfg: ExperimentConfig, out_dir: str, seed: int | None = None, resume: bool = False,
              setup: Setup | None = None) -> RunResult:
    """Validate, train and write a self-describing run directory."""
    seed = cfg.experiment.seed if seed is None else seed
    cfg = cfg.replace(experiment={"seed": seed})
    validate(cfg)
    os.makedirs(out_dir, exist_ok=True)
    setup = setup or build_setup(cfg, seed)
    atomic_write(os.path.join(out_dir, "config.ini"), cfg.to_ini())
    started = time.time()
    t0 = time.perf_counter()
    opt = cfg.experiment.optimizer
    if opt == "es_pgpe":
        result = train_es(cfg, setup, seed, out_dir, resume)
    elif opt == "bptt_reinforce":
        result = train_reinforce(cfg, setup, seed)
    else:
        result = train_supervised(cfg, setup, seed)
    wall = time.perf_counter() - t0
    idx_name = result.columns[0]
    write_csv(os.path.join(out_dir, "curves.csv"), result.columns, result.curves)
    write_csv(os.path.join(out_dir, "timing.csv"), (idx_name, "elapsed_s"),
              [(r[idx_name], t) for r, t in zip(result.curves, result.timing)])
    cols, grows = genome_rows(setup, result.genome)
    write_csv(os.path.join(out_dir, "genome.csv"), cols, grows)
    atomic_write(os.path.join(out_dir, "genome.txt"), "".join(f"{float(g)!r}\n" for g in result.genome))
    if result.state is not None:
        save_checkpoint(result.state, os.path.join(out_dir, "checkpoint.bin"))
    meta = {
        "schema_version": CURVES_SCHEMA_VERSION,
        "package_version": __version__,
        "config_hash": cfg.hash(),
        "seed": seed,
        "task": cfg.experiment.task,
        "optimizer": opt,
        "hidden": setup.hidden,
        "genome_length": int(result.genome.size),
        "started_unix": started,
        "wall_time_s": wall,
        "curves_columns": list(result.columns),
        "final": result.final,
        "distribution_fit_method": "mle",
        "config": cfg.to_dict(),
    }
    atomic_write(os.path.join(out_dir, "metadata.json"), json.dumps(meta, indent=2, default=_json_default) + "\n")
    return result


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# --- ablation ------------------------------------------------------------------------------


ALL_MASKS = tuple(m for m in itertools.product((False, True), repeat=4) if any(m))
ABLATION_COLUMNS = PROPERTIES + ("hidden", "n_params", "mean", "std", "n_seeds")


def mask_label(mask) -> str:
    return "".join("1" if m else "0" for m in mask)


def run_ablate(cfg: ExperimentConfig, out_dir: str, masks=None, seeds=None) -> list[dict]:
    """One ES run per mask and seed at a fixed trainable-parameter budget."""
    masks = [tuple(bool(b) for b in m) for m in (masks if masks is not None else ALL_MASKS)]
    if len(set(masks)) != len(masks):
        raise ValueError("ablation masks must be distinct")
    for m in masks:
        if not any(m):
            raise ValueError("the all-false mask trains nothing (empty genome)")
    seeds = tuple(seeds if seeds is not None else cfg.experiment.seeds)
    data = _mnist(cfg) if cfg.experiment.task == "classify" else None
    rows = []
    for mask in masks:
        mcfg = cfg.replace(network={"trainable_mask": mask, "train_weights": False, "hidden": 0})
        finals, hidden, n_params = [], 0, 0
        for seed in seeds:
            setup = build_setup(mcfg, seed, data)
            hidden, n_params = setup.hidden, genome_length(setup.template)
            res = run_train(mcfg, os.path.join(out_dir, mask_label(mask), f"seed{seed}"), seed, setup=setup)
            finals.append(res.final["final_reward"])
        row = dict(zip(PROPERTIES, (int(b) for b in mask)))
        row.update(hidden=hidden, n_params=n_params, mean=float(np.mean(finals)),
                   std=float(np.std(finals)), n_seeds=len(seeds))
        rows.append(row)
        write_csv(os.path.join(out_dir, "ablation.csv"), ABLATION_COLUMNS, rows)
    return rows


# --- BP vs ES comparison ------------------------------------------------------------------------

COMPARE_HORIZONS = (100, 200, 500, 1000)
COMPARE_METHODS = ("es_neuron", "es_weight", "bp_neuron", "bp_weight")
COMPARE_COLUMNS = ("method", "max_steps", "seed", "episodes", "reward")
SUMMARY_COLUMNS = ("method", "max_steps", "seed", "final_reward", "center_reward", "episodes")


def method_config(cfg: ExperimentConfig, method: str, max_steps: int, lr: float | None = None) -> ExperimentConfig:
    neuron = method.endswith("neuron")
    network = {"trainable_mask": (True,) * 4 if neuron else (False,) * 4,
               "train_weights": not neuron, "hidden": 0}
    changes = {"network": network, "env": {"max_steps": max_steps}}
    if method.startswith("es"):
        changes["experiment"] = {"optimizer": "es_pgpe", "task": "cartpole"}
    else:
        changes["experiment"] = {"optimizer": "bptt_reinforce", "task": "cartpole"}
        # equal budget: one ES generation's worth of episodes per ES generation
        changes["bptt"] = {"episode_budget": cfg.es.population * cfg.es.generations * cfg.es.episodes_per_genome}
        if lr is not None:
            changes["bptt"]["lr"] = lr
    return cfg.replace(**changes)


def run_compare(cfg: ExperimentConfig, out_dir: str, horizons=COMPARE_HORIZONS, methods=COMPARE_METHODS,
                seeds=None, bp_lr: float | None = None) -> tuple[list[dict], list[dict]]:
    """All (horizon x method x seed) runs; returns curve rows and summary rows."""
    seeds = tuple(seeds if seeds is not None else cfg.experiment.seeds)
    curve_rows, summary = [], []
    for max_steps in horizons:
        for method in methods:
            mcfg = method_config(cfg, method, max_steps, bp_lr)
            for seed in seeds:
                res = run_train(mcfg, os.path.join(out_dir, f"{method}_h{max_steps}", f"seed{seed}"), seed)
                for r in res.curves:
                    curve_rows.append({"method": method, "max_steps": max_steps, "seed": seed,
                                       "episodes": r["episodes"], "reward": r["fitness_mean"]})
                summary.append({"method": method, "max_steps": max_steps, "seed": seed,
                                "final_reward": res.final["final_reward"],
                                "center_reward": res.final["center_reward"],
                                "episodes": res.curves[-1]["episodes"]})
            write_csv(os.path.join(out_dir, "compare.csv"), COMPARE_COLUMNS, curve_rows)
            write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, summary)
    return curve_rows, summary
