"""Randomized comparison of the reverse sweep against the explicit-sum oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bptt import DETACHED, MODES, backward, path_sum_oracle, stability_report
from .neuron import (
    MEMBRANE_POTENTIAL,
    SPIKE_COUNT,
    NetworkSpec,
    NeuronParams,
    forward,
    init_weights,
    tau_to_raw,
)
from .surrogate import KINDS, SurrogateSpec

MAX_NEURONS = 8
MAX_STEPS = 20


@dataclass
class GradCase:
    net: NetworkSpec
    inputs: np.ndarray
    loss_grads: list
    surrogate: SurrogateSpec
    mode: str


@dataclass
class GradCheckResult:
    index: int
    mode: str
    surrogate: str
    rel_error: float
    contraction_violations: int


def random_case(rng: np.random.Generator, mode: str, kind: str) -> GradCase:
    """A small random network with heterogeneous neurons and a random loss."""
    n_layers = int(rng.integers(1, 3))
    sizes = [int(rng.integers(1, 4))]
    budget = MAX_NEURONS
    for i in range(n_layers):
        n = int(rng.integers(1, max(2, budget - (n_layers - i - 1)) + 1))
        n = min(n, budget - (n_layers - i - 1))
        sizes.append(n)
        budget -= n
    params = []
    for n in sizes[1:]:
        params.append(NeuronParams(
            tau_raw=tau_to_raw(rng.uniform(6.0, 100.0, n)),
            v_th=rng.uniform(0.2, 1.0, n),
            v_rest=rng.uniform(-0.3, 0.3, n),
            r_mem=rng.uniform(0.5, 2.0, n),
        ))
    mask = tuple(bool(b) for b in rng.integers(0, 2, 4))
    train_weights = bool(rng.integers(0, 2)) or not any(mask)
    net = NetworkSpec(
        layer_sizes=tuple(sizes),
        weights=init_weights(sizes, int(rng.integers(1 << 30))),
        neuron_params=tuple(params),
        trainable_mask=mask,
        train_weights=train_weights,
        readout_mode=MEMBRANE_POTENTIAL if rng.random() < 0.7 else SPIKE_COUNT,
        input_gain=float(rng.uniform(1.0, 4.0)),
    )
    steps = int(rng.integers(1, MAX_STEPS + 1))
    inputs = rng.uniform(-1.0, 1.5, (steps, sizes[0]))
    loss_grads = [rng.standard_normal((steps, n)) if rng.random() < 0.7 or i == n_layers - 1 else None
                  for i, n in enumerate(sizes[1:])]
    surrogate = SurrogateSpec(kind, float(rng.choice([0.5, 1.0, 2.0, 4.0])))
    return GradCase(net, inputs, loss_grads, surrogate, mode)


def check_case(case: GradCase) -> tuple[float, int]:
    """Relative error of backward vs oracle, and detached-mode bound violations."""
    _, traj = forward(case.net, case.inputs)
    fast = backward(case.net, traj, case.loss_grads, case.surrogate, case.mode)
    ref = path_sum_oracle(case.net, traj, case.loss_grads, case.surrogate, case.mode)
    scale = max(float(np.max(np.abs(ref), initial=0.0)), 1e-12)
    rel = float(np.max(np.abs(fast - ref), initial=0.0)) / scale
    violations = 0
    if case.mode == DETACHED:
        jac = np.abs(stability_report(case.net, traj, case.surrogate, case.mode).jacobian)
        bound = np.concatenate([1.0 - p.decay for p in case.net.neuron_params])
        violations = int((jac > bound[None, :] * (1 + 1e-12)).sum())
    return rel, violations


def run_gradcheck(n_cases: int = 200, seed: int = 0) -> list[GradCheckResult]:
    """Cycle through every (mode, surrogate) pair over ``n_cases`` random cases."""
    rng = np.random.default_rng(seed)
    combos = [(m, k) for m in MODES for k in KINDS]
    out = []
    for i in range(n_cases):
        mode, kind = combos[i % len(combos)]
        rel, bad = check_case(random_case(rng, mode, kind))
        out.append(GradCheckResult(i, mode, kind, rel, bad))
    return out
