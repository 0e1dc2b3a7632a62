"""Discretized leaky integrate-and-fire neurons and feedforward networks.

Units
-----
Potentials are in volts and ``delta_t`` in seconds. Membrane resistance is
stored relative to ``R_REF`` (50 MOhm), and synaptic weights are expressed in
units of the reference current ``1 V / R_REF`` (20 nA). With these units
``r_mem * sum(w * s)`` is directly a potential in volts.

Every array carrying per-neuron data may have leading batch axes, so that a
whole population of genomes can be simulated at once. A parameter array of
shape ``(n,)`` broadcasts against a state of shape ``(B, n)``.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

R_REF = 5e7
DEFAULT_DELTA_T = 5e-3
DEFAULT_TAU_M = 20e-3
DEFAULT_V_TH = 0.5
DEFAULT_V_REST = 0.0
DEFAULT_R_MEM = 1.0

PROPERTIES = ("tau_m", "v_th", "v_rest", "r_mem")
# Genome field for each property; tau_m is searched through its logit.
_FIELDS = ("tau_raw", "v_th", "v_rest", "r_mem")

MEMBRANE_POTENTIAL = "membrane_potential"
SPIKE_COUNT = "spike_count"


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tau_to_raw(tau_m, delta_t=DEFAULT_DELTA_T):
    """Inverse of the reparameterization: ``sigmoid(raw) == delta_t / tau_m``."""
    k = delta_t / np.asarray(tau_m, dtype=np.float64)
    if np.any((k <= 0) | (k >= 1)):
        raise ValueError("tau_m must exceed delta_t")
    return np.log(k / (1.0 - k))


@dataclass(frozen=True)
class NeuronParams:
    """Per-neuron properties of one layer.

    ``tau_raw`` is the unconstrained search variable; the Euler decay factor is
    ``k = sigmoid(tau_raw) = delta_t / tau_m``. The reset potential equals
    ``v_rest``.
    """

    tau_raw: np.ndarray
    v_th: np.ndarray
    v_rest: np.ndarray
    r_mem: np.ndarray
    delta_t: float = DEFAULT_DELTA_T

    @classmethod
    def defaults(
        cls,
        n: int,
        delta_t: float = DEFAULT_DELTA_T,
        tau_m: float = DEFAULT_TAU_M,
        v_th: float = DEFAULT_V_TH,
        v_rest: float = DEFAULT_V_REST,
        r_mem: float = DEFAULT_R_MEM,
    ) -> "NeuronParams":
        return cls(
            tau_raw=np.full(n, float(tau_to_raw(tau_m, delta_t))),
            v_th=np.full(n, float(v_th)),
            v_rest=np.full(n, float(v_rest)),
            r_mem=np.full(n, float(r_mem)),
            delta_t=float(delta_t),
        )

    @property
    def size(self) -> int:
        return int(np.shape(self.tau_raw)[-1])

    @functools.cached_property
    def decay(self) -> np.ndarray:
        return sigmoid(self.tau_raw)

    @property
    def tau_m(self) -> np.ndarray:
        return self.delta_t / self.decay

    @property
    def resistance_ohm(self) -> np.ndarray:
        return np.asarray(self.r_mem) * R_REF

    def get(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def replace(self, **changes) -> "NeuronParams":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        for name in _FIELDS:
            _check_finite(np.asarray(getattr(self, name)), name)
        if not math.isfinite(self.delta_t) or self.delta_t <= 0:
            raise ValueError(f"delta_t must be positive and finite, got {self.delta_t}")


@dataclass
class LayerState:
    """Post-reset potentials ``v`` and spikes ``s`` of one layer after a step."""

    v: np.ndarray
    s: np.ndarray

    @classmethod
    def at_rest(cls, params: NeuronParams, batch_shape: tuple = ()) -> "LayerState":
        shape = np.broadcast_shapes(batch_shape + (params.size,), np.shape(params.v_rest))
        v = np.broadcast_to(np.asarray(params.v_rest, dtype=np.float64), shape).copy()
        return cls(v=v, s=np.zeros(shape))


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = np.argwhere(bad)[0]
        neuron = int(idx[-1]) if idx.size else 0
        raise ValueError(f"non-finite {what} at neuron {neuron}")


def _advance(v_prev, current, k, v_th, v_rest, r_mem, spiking=True):
    u = v_prev + k * (r_mem * current - v_prev + v_rest)
    if not spiking:
        return u, u, np.zeros_like(u)
    s = (u >= v_th).astype(np.float64)
    v = u * (1.0 - s) + v_rest * s
    return u, v, s


def lif_step(
    state: LayerState,
    input_current: np.ndarray,
    params: NeuronParams,
    spiking: bool = True,
) -> tuple[LayerState, np.ndarray]:
    """Advance one Euler step and return the new state and the pre-reset potential ``u``.

    ``input_current`` is the already weighted spike sum reaching each neuron.
    A non-spiking layer behaves as if its threshold were infinite.
    """
    input_current = np.asarray(input_current, dtype=np.float64)
    if input_current.shape[-1] != params.size:
        raise ValueError(
            f"input has {input_current.shape[-1]} entries, layer has {params.size} neurons"
        )
    _check_finite(input_current, "input current")
    params.validate()
    u, v, s = _advance(
        state.v, input_current, params.decay, params.v_th, params.v_rest, params.r_mem, spiking
    )
    return LayerState(v=v, s=s), u


@dataclass(frozen=True)
class NetworkSpec:
    """A feedforward spiking network.

    ``layer_sizes[0]`` is the input dimension; each following entry is a layer
    of LIF neurons fed by ``weights[i]`` of shape ``(layer_sizes[i+1],
    layer_sizes[i])`` (or with a leading population axis when weights are part
    of a batched genome).
    """

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    neuron_params: tuple[NeuronParams, ...]
    trainable_mask: tuple[bool, bool, bool, bool] = (True, True, True, True)
    train_weights: bool = False
    readout_mode: str = MEMBRANE_POTENTIAL
    input_gain: float = 1.0

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "neuron_params", tuple(self.neuron_params))
        object.__setattr__(self, "trainable_mask", tuple(bool(m) for m in self.trainable_mask))
        if len(sizes) < 2 or any(n <= 0 for n in sizes):
            raise ValueError(f"layer sizes must be >= 2 positive integers, got {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.neuron_params) != len(sizes) - 1:
            raise ValueError("need one weight matrix and one parameter table per layer")
        for i, (w, p) in enumerate(zip(self.weights, self.neuron_params)):
            if w.shape[-2:] != (sizes[i + 1], sizes[i]):
                raise ValueError(
                    f"weights[{i}] has shape {w.shape}, expected (..., {sizes[i + 1]}, {sizes[i]})"
                )
            if p.size != sizes[i + 1]:
                raise ValueError(f"neuron_params[{i}] has {p.size} neurons, expected {sizes[i + 1]}")
        if len(self.trainable_mask) != 4:
            raise ValueError("trainable_mask needs 4 entries (tau_m, v_th, v_rest, r_mem)")
        if self.readout_mode not in (MEMBRANE_POTENTIAL, SPIKE_COUNT):
            raise ValueError(f"unknown readout mode {self.readout_mode!r}")

    @property
    def n_layers(self) -> int:
        return len(self.neuron_params)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def spiking(self, layer: int) -> bool:
        return not (layer == self.n_layers - 1 and self.readout_mode == MEMBRANE_POTENTIAL)

    def batch_shape(self) -> tuple:
        """Leading population axes carried by parameters or weights, if any."""
        shape: tuple = ()
        for p in self.neuron_params:
            shape = np.broadcast_shapes(shape, np.shape(p.tau_raw)[:-1], np.shape(p.v_th)[:-1],
                                        np.shape(p.v_rest)[:-1], np.shape(p.r_mem)[:-1])
        for w in self.weights:
            shape = np.broadcast_shapes(shape, w.shape[:-2])
        return shape

    def replace(self, **changes) -> "NetworkSpec":
        return dataclasses.replace(self, **changes)

    def initial_state(self, batch_shape: tuple = ()) -> list[LayerState]:
        return [LayerState.at_rest(p, batch_shape) for p in self.neuron_params]


def init_weights(layer_sizes: Sequence[int], seed: int) -> tuple[np.ndarray, ...]:
    """LeCun normal initialization: zero mean, variance ``1 / fan_in``."""
    if any(int(n) <= 0 for n in layer_sizes):
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    return tuple(
        rng.standard_normal((int(n_out), int(n_in))) / math.sqrt(int(n_in))
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:])
    )


def build_network(
    layer_sizes: Sequence[int],
    seed: int = 0,
    trainable_mask: Sequence[bool] = (True, True, True, True),
    train_weights: bool = False,
    readout_mode: str = MEMBRANE_POTENTIAL,
    input_gain: float = 1.0,
    **defaults,
) -> NetworkSpec:
    """Homogeneous network with LeCun-initialized weights and default neurons.

    Extra keyword arguments override the neuron defaults (``tau_m``, ``v_th``,
    ``v_rest``, ``r_mem``, ``delta_t``).
    """
    sizes = tuple(int(n) for n in layer_sizes)
    return NetworkSpec(
        layer_sizes=sizes,
        weights=init_weights(sizes, seed),
        neuron_params=tuple(NeuronParams.defaults(n, **defaults) for n in sizes[1:]),
        trainable_mask=tuple(trainable_mask),
        train_weights=train_weights,
        readout_mode=readout_mode,
        input_gain=input_gain,
    )


def layer_current(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    if weights.ndim == 2:
        return x @ weights.T
    return np.matmul(x[..., None, :], np.swapaxes(weights, -1, -2))[..., 0, :]


def network_step(net: NetworkSpec, states: list[LayerState], x: np.ndarray):
    """One simulation step of every layer; returns (new states, currents, u per layer)."""
    pre = net.input_gain * np.asarray(x, dtype=np.float64)
    new_states, currents, us = [], [], []
    for i, (w, p, st) in enumerate(zip(net.weights, net.neuron_params, states)):
        current = layer_current(w, pre)
        u, v, s = _advance(st.v, current, p.decay, p.v_th, p.v_rest, p.r_mem, net.spiking(i))
        new_states.append(LayerState(v=v, s=s))
        currents.append(current)
        us.append(u)
        pre = s
    return new_states, currents, us


def readout(net: NetworkSpec, states: list[LayerState]) -> np.ndarray:
    last = states[-1]
    return last.v if net.readout_mode == MEMBRANE_POTENTIAL else last.s


@dataclass
class Trajectory:
    """Per-step record of a simulation, indexed ``[layer][step]``.

    ``inputs`` holds the external input (before the input gain); ``currents``
    the weighted sums that reached each layer.
    """

    inputs: list = field(default_factory=list)
    u: list = field(default_factory=list)
    v: list = field(default_factory=list)
    s: list = field(default_factory=list)
    currents: list = field(default_factory=list)

    @classmethod
    def empty(cls, n_layers: int) -> "Trajectory":
        return cls(inputs=[], u=[[] for _ in range(n_layers)], v=[[] for _ in range(n_layers)],
                   s=[[] for _ in range(n_layers)], currents=[[] for _ in range(n_layers)])

    def record(self, x, states, currents, us) -> None:
        self.inputs.append(np.asarray(x, dtype=np.float64))
        for i, st in enumerate(states):
            self.u[i].append(us[i])
            self.v[i].append(st.v)
            self.s[i].append(st.s)
            self.currents[i].append(currents[i])

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def n_layers(self) -> int:
        return len(self.u)

    def stacked(self, name: str, layer: int) -> np.ndarray:
        """Array of shape ``(T, ..., n)`` for one recorded field of one layer."""
        return np.stack(getattr(self, name)[layer])


def forward(
    net: NetworkSpec, input_sequence: np.ndarray, record: bool = True
) -> tuple[np.ndarray, Trajectory | None]:
    """Run the network open-loop over ``input_sequence`` of shape ``(T, ..., d)``.

    Returns the readout sequence (membrane potentials, or spikes of the final
    layer in spike-count mode) and the full trajectory, or ``None`` when
    ``record`` is false.
    """
    xs = np.asarray(input_sequence, dtype=np.float64)
    if xs.ndim < 2:
        raise ValueError("input sequence must have shape (T, ..., d)")
    if xs.shape[-1] != net.input_dim:
        raise ValueError(f"input width {xs.shape[-1]} does not match network input {net.input_dim}")
    _check_finite(xs, "input")
    for p in net.neuron_params:
        p.validate()
    batch = np.broadcast_shapes(xs.shape[1:-1], net.batch_shape())
    states = net.initial_state(batch)
    traj = Trajectory.empty(net.n_layers) if record else None
    outputs = []
    for x in xs:
        states, currents, us = network_step(net, states, x)
        if record:
            traj.record(x, states, currents, us)
        outputs.append(readout(net, states))
    if not outputs:
        return np.zeros((0,) + batch + (net.output_dim,)), traj
    return np.stack(outputs), traj


# --- genome -----------------------------------------------------------------


def genome_length(net: NetworkSpec) -> int:
    per_neuron = sum(net.trainable_mask)
    n = per_neuron * sum(net.layer_sizes[1:])
    if net.train_weights:
        n += sum(a * b for a, b in zip(net.layer_sizes[:-1], net.layer_sizes[1:]))
    return n


def genome_layout(net: NetworkSpec) -> list[tuple[str, int, str, int]]:
    """Blocks of the flat genome as ``(kind, layer, name, size)``.

    Neuron properties come first, layer by layer, in the order tau_raw, v_th,
    v_rest, r_mem (masked ones skipped); weight matrices follow, row-major.
    """
    blocks = []
    for i, n in enumerate(net.layer_sizes[1:]):
        for name, on in zip(_FIELDS, net.trainable_mask):
            if on:
                blocks.append(("neuron", i, name, n))
    if net.train_weights:
        for i, (a, b) in enumerate(zip(net.layer_sizes[:-1], net.layer_sizes[1:])):
            blocks.append(("weight", i, "w", a * b))
    return blocks


def genome_pack(net: NetworkSpec) -> np.ndarray:
    """Flatten the trainable values of an unbatched network."""
    parts = []
    for kind, i, name, size in genome_layout(net):
        src = net.neuron_params[i].get(name) if kind == "neuron" else net.weights[i]
        arr = np.asarray(src, dtype=np.float64)
        if arr.ndim != (1 if kind == "neuron" else 2):
            raise ValueError("genome_pack expects an unbatched network")
        parts.append(arr.reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0)


def genome_unpack(net: NetworkSpec, genome: np.ndarray) -> NetworkSpec:
    """Write a genome (shape ``(P,)`` or ``(..., P)`` for a population) into ``net``.

    Untrainable properties keep their values from ``net``.
    """
    genome = np.asarray(genome, dtype=np.float64)
    expected = genome_length(net)
    if genome.ndim == 0 or genome.shape[-1] != expected:
        raise ValueError(f"genome length {genome.shape[-1] if genome.ndim else 0} != {expected}")
    batch = genome.shape[:-1]
    params = [dict() for _ in net.neuron_params]
    weights = list(net.weights)
    offset = 0
    for kind, i, name, size in genome_layout(net):
        chunk = genome[..., offset:offset + size]
        offset += size
        if kind == "neuron":
            params[i][name] = chunk.copy()
        else:
            a, b = net.layer_sizes[i + 1], net.layer_sizes[i]
            weights[i] = chunk.reshape(batch + (a, b)).copy()
    new_params = tuple(p.replace(**changes) for p, changes in zip(net.neuron_params, params))
    return net.replace(neuron_params=new_params, weights=tuple(weights))


def neuron_table(net: NetworkSpec) -> list[dict]:
    """Rows describing every neuron of an unbatched network (tau_m in ms)."""
    rows = []
    for i, p in enumerate(net.neuron_params):
        tau_ms = np.broadcast_to(p.tau_m * 1e3, (p.size,))
        for j in range(p.size):
            rows.append({
                "layer": i,
                "neuron": j,
                "tau_m_ms": float(tau_ms[j]),
                "v_th": float(np.broadcast_to(p.v_th, (p.size,))[j]),
                "v_rest": float(np.broadcast_to(p.v_rest, (p.size,))[j]),
                "r_mem": float(np.broadcast_to(p.r_mem, (p.size,))[j]),
            })
    return rows
