"""Command-line entry point: ``hetsnn <subcommand> ...``.

Exit status is 0 on success, 2 on invalid configuration or input, 1 when a
check (``gradcheck``) fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .analysis.firing import firing_stats
from .analysis.fitting import fit_gamma, fit_lognormal, sample_skewness
from .analysis.reference import ABLATION_TASKS, ablation_values
from .analysis.shapley import shapley_exact
from .config import PROFILES, ConfigError, apply_ini, load_config, parse_mask, validate
from .envs.classify import DEFAULT_STEPS
from .neuron import PROPERTIES, LayerState, _advance, layer_current

OUT_ENV = "HETSNN_OUT"

log = logging.getLogger("hetsnn")


class InputError(ValueError):
    pass


# --- helpers -----------------------------------------------------------------------------


def _config(args):
    cfg = load_config(args.config, args.profile)
    if args.set:
        lines = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"--set expects section.key=value, got {item!r}")
            lines.setdefault(section, []).append(f"{name} = {value}")
        text = "\n".join(f"[{s}]\n" + "\n".join(v) for s, v in lines.items())
        cfg = apply_ini(cfg, text, "--set")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if changes:
        cfg = cfg.replace(experiment=changes)
    return cfg


def _out_dir(args, cfg=None, default="runs") -> str:
    if getattr(args, "out", None):
        return args.out
    if os.environ.get(OUT_ENV):
        return os.environ[OUT_ENV]
    return cfg.experiment.out if cfg is not None else default


def _float(text: str, path: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise InputError(f"{path}:{line}: column {column!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise InputError(f"{path}:{line}: column {column!r}: non-finite value")
    return value


def read_table(path: str) -> tuple[list[str], list[tuple[int, dict]]]:
    """CSV rows with their 1-based line numbers."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            rows.append((reader.line_num, dict(zip(header, (c.strip() for c in row)))))
    return header, rows


def read_samples(path: str, column: str | None = None, layer: int | None = None) -> np.ndarray:
    """Positive samples from a genome dump (``tau_m_ms`` column) or a one-column file."""
    try:
        with open(path) as fh:
            first = fh.readline()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        float(first.split(",")[0])
        headerless = True
    except ValueError:
        headerless = False
    if headerless:
        values = []
        with open(path) as fh:
            for i, line in enumerate(fh, 1):
                if line.strip():
                    values.append(_float(line.split(",")[0].strip(), path, i, "0"))
        return np.array(values)
    header, rows = read_table(path)
    col = column or ("tau_m_ms" if "tau_m_ms" in header else header[0])
    if col not in header:
        raise InputError(f"{path}: no column {col!r} (have {', '.join(header)})")
    values = []
    for line, row in rows:
        if layer is not None and "layer" in row and int(row["layer"]) != layer:
            continue
        values.append(_float(row[col], path, line, col))
    return np.array(values)


def _emit(text: str, path: str | None) -> None:
    if path:
        from .runner import atomic_write

        atomic_write(path, text)
    else:
        sys.stdout.write(text)


# --- subcommands -----------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .runner import run_train

    cfg = validate(_config(args))
    out = _out_dir(args, cfg)
    result = run_train(cfg, out, resume=args.resume)
    print(json.dumps({"out": out, **result.final}, default=float))
    return 0


def cmd_ablate(args) -> int:
    from .runner import ALL_MASKS, run_ablate

    cfg = validate(_config(args))
    masks = [parse_mask(m) for m in args.masks.split(";")] if args.masks else list(ALL_MASKS)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = _out_dir(args, cfg)
    try:
        rows = run_ablate(cfg, out, masks, seeds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"wrote {len(rows)} rows to {os.path.join(out, 'ablation.csv')}")
    return 0


def cmd_compare(args) -> int:
    from .runner import COMPARE_HORIZONS, COMPARE_METHODS, run_compare

    cfg = _config(args)
    if cfg.experiment.task != "cartpole":
        raise ConfigError("compare runs on the cartpole task (use --profile cartpole)")
    validate(cfg)
    horizons = tuple(int(h) for h in args.horizons.split(",")) if args.horizons else COMPARE_HORIZONS
    methods = tuple(args.methods.split(",")) if args.methods else COMPARE_METHODS
    bad = [m for m in methods if m not in COMPARE_METHODS]
    if bad:
        raise ConfigError(f"unknown method {bad[0]!r} (choose from {', '.join(COMPARE_METHODS)})")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = _out_dir(args, cfg)
    _, summary = run_compare(cfg, out, horizons, methods, seeds, args.bp_lr)
    print(f"wrote {len(summary)} runs to {os.path.join(out, 'summary.csv')}")
    return 0


def cmd_fitdist(args) -> int:
    samples = read_samples(args.input, args.column, args.layer)
    if samples.size < 2:
        raise InputError(f"{args.input}: need at least two samples")
    bad = np.flatnonzero(samples <= 0)
    if bad.size:
        raise InputError(f"{args.input}: sample {bad[0]} is not positive ({samples[bad[0]]})")
    from .runner import csv_text

    try:
        fits = (fit_gamma(samples), fit_lognormal(samples))
    except ValueError as exc:
        raise InputError(f"{args.input}: {exc}") from None
    rows = []
    for fit in fits:
        rows.append({"family": fit.family, "shape": fit.shape, "scale": fit.scale, "loc": 0.0,
                     "log_likelihood": fit.log_likelihood, "n": fit.n, "converged": fit.converged,
                     "degenerate": fit.degenerate, "method": fit.method,
                     "skewness": sample_skewness(samples)})
    _emit(csv_text(tuple(rows[0]), rows), args.output)
    return 0


def read_coalitions(path: str) -> tuple[dict, dict]:
    header, rows = read_table(path)
    missing = [c for c in PROPERTIES + ("mean",) if c not in header]
    if missing:
        raise InputError(f"{path}: missing column {missing[0]!r}")
    means, stds = {}, {}
    for line, row in rows:
        bits = []
        for p in PROPERTIES:
            if row[p] not in ("0", "1"):
                raise InputError(f"{path}:{line}: column {p!r} must be 0 or 1, got {row[p]!r}")
            bits.append(row[p] == "1")
        key = tuple(bits)
        if key in means:
            raise InputError(f"{path}:{line}: duplicate coalition")
        means[key] = _float(row["mean"], path, line, "mean")
        if "std" in row and row["std"]:
            stds[key] = _float(row["std"], path, line, "std")
    return means, stds


def cmd_shapley(args) -> int:
    if args.reference:
        means, stds = ablation_values(args.reference, args.empty_value)
    elif args.input:
        means, stds = read_coalitions(args.input)
        empty = (False,) * 4
        if empty not in means:
            means[empty] = args.empty_value
    else:
        raise InputError("give a coalition CSV or --reference TASK")
    try:
        report = shapley_exact(means, PROPERTIES, stds)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None
    from .runner import csv_text

    norm = report.normalized()
    rows = [{"property": p, "value": report.values[p], "normalized": norm[p]} for p in PROPERTIES]
    text = csv_text(("property", "value", "normalized"), rows)
    _emit(text, args.output)
    print(f"efficiency residual {report.efficiency_residual:.3e}", file=sys.stderr)
    return 0


def firing_from_run(run_dir: str, n_neurons: int = 32, seed: int = 0, split: str = "test"):
    """Hidden-layer spike frequency per class for a classification run directory."""
    from .neuron import genome_unpack
    from .runner import build_setup

    cfg = load_config(os.path.join(run_dir, "config.ini"))
    if cfg.experiment.task != "classify":
        raise InputError(f"{run_dir}: stats needs a classification run (task is {cfg.experiment.task})")
    genome_path = os.path.join(run_dir, "genome.txt")
    try:
        genome = np.loadtxt(genome_path, ndmin=1)
    except OSError as exc:
        raise InputError(f"cannot read {genome_path}: {exc.strerror}") from None
    setup = build_setup(cfg)
    net = genome_unpack(setup.template, genome)
    data = setup.task.test if split == "test" and setup.task.test is not None else setup.task.train
    x = data.flat()
    steps = cfg.env.steps or DEFAULT_STEPS
    p = net.neuron_params[0]
    current = layer_current(net.weights[0], net.input_gain * x)
    state = LayerState.at_rest(p, (len(x),))
    spikes = []
    for _ in range(steps):
        _, v, s = _advance(state.v, current, p.decay, p.v_th, p.v_rest, p.r_mem, True)
        state = LayerState(v, s)
        spikes.append(s)
    spikes = np.stack(spikes)  # (T, N, n)
    groups = {int(c): [spikes[:, data.labels == c]] for c in np.unique(data.labels)}
    rng = np.random.default_rng(seed)
    n = spikes.shape[-1]
    sample = np.sort(rng.choice(n, min(n_neurons, n), replace=False))
    return firing_stats(groups, sample) + (sample,)


def cmd_stats(args) -> int:
    from .runner import csv_text

    labels, matrix, sample = firing_from_run(args.run_dir, args.neurons, args.seed, args.split)
    cols = ("neuron",) + tuple(f"class_{c}" for c in labels)
    rows = [(int(n),) + tuple(float(v) for v in row) for n, row in zip(sample, matrix)]
    _emit(csv_text(cols, rows), args.output)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    results = run_gradcheck(args.cases, args.seed)
    worst = max(results, key=lambda r: r.rel_error)
    violations = sum(r.contraction_violations for r in results)
    ok = worst.rel_error <= args.tol and violations == 0
    print(f"cases={len(results)} max_rel_error={worst.rel_error:.3e} "
          f"(case {worst.index}, {worst.mode}/{worst.surrogate}) detached_violations={violations} "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# --- parser ------------------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--profile", choices=sorted(PROFILES), help="built-in experiment profile")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else [experiment] out)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetsnn", description="Heterogeneous spiking network experiments")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training job")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from checkpoint.bin in the output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train every trainability mask")
    _common(p)
    p.add_argument("--masks", help="semicolon-separated masks, e.g. '1000;0110;tau_m,r_mem'")
    p.add_argument("--seeds", help="comma-separated seeds (default: [experiment] seeds)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", help="BP vs ES on cartpole across horizons")
    _common(p)
    p.add_argument("--horizons", help="comma-separated max_steps values (default 100,200,500,1000)")
    p.add_argument("--methods", help="subset of es_neuron,es_weight,bp_neuron,bp_weight")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--bp-lr", type=float, help="BPTT learning rate override")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fitdist", help="gamma and lognormal fits of tau_m samples")
    p.add_argument("input", help="genome.csv from a run, or a file with one sample per line")
    p.add_argument("--column", help="column holding the samples (default tau_m_ms)")
    p.add_argument("--layer", type=int, help="only neurons of this layer")
    p.add_argument("-o", "--output", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_fitdist)

    p = sub.add_parser("shapley", help="Shapley values of the four neuron properties")
    p.add_argument("input", nargs="?", help="CSV with tau_m,v_th,v_rest,r_mem,mean[,std] per coalition")
    p.add_argument("--reference", choices=ABLATION_TASKS, help="use the published ablation table")
    p.add_argument("--empty-value", type=float, default=0.0, help="value of the empty coalition")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_shapley)

    p = sub.add_parser("stats", help="per-class firing rates of a classification run")
    p.add_argument("run_dir")
    p.add_argument("--neurons", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="compare backward against the explicit-sum oracle")
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
