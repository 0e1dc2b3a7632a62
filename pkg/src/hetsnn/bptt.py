"""Backpropagation through time for LIF networks with surrogate spike gradients.

Two reset treatments are supported. ``full`` differentiates through the reset
``v = u (1 - s) + v_rest s`` including the surrogate path via ``s``; its
temporal Jacobian is ``[1 - s + (v_rest - u) g'(u - v_th)] (1 - k)``.
``detached`` treats ``s`` as a constant inside the reset, giving the
contracting Jacobian ``(1 - s)(1 - k)``. In both modes the spikes passed to the
next layer keep their surrogate gradient.

Gradients are returned in genome layout (see :func:`hetsnn.neuron.genome_layout`),
summed over any batch axes of the trajectory. Per-step loss gradients are
taken as given, so a ``1/N`` loss average must already be folded into them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .neuron import (
    NetworkSpec,
    Trajectory,
    genome_layout,
    genome_length,
    network_step,
    readout,
)
from .surrogate import SurrogateSpec

FULL = "full"
DETACHED = "detached"
MODES = (FULL, DETACHED)

ORACLE_MAX_NEURONS = 32
ORACLE_MAX_STEPS = 64


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown gradient mode {mode!r}; expected one of {MODES}")


def step_jacobian(u, s, params, surrogate: SurrogateSpec, mode: str = FULL, spiking: bool = True):
    """``dv(t) / dv(t - dt)`` per neuron for one recorded step."""
    _check_mode(mode)
    u = np.asarray(u, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    retain = 1.0 - params.decay
    if not spiking:
        return np.broadcast_to(retain, u.shape).copy()
    if mode == DETACHED:
        return (1.0 - s) * retain
    gp = surrogate.derivative(u - params.v_th, params.v_th)
    return (1.0 - s + (params.v_rest - u) * gp) * retain


@dataclass
class _Layer:
    u: np.ndarray
    v: np.ndarray
    s: np.ndarray
    current: np.ndarray
    pre: np.ndarray
    v_prev: np.ndarray


def _layers(net: NetworkSpec, traj: Trajectory) -> list[_Layer]:
    if traj.n_layers != net.n_layers:
        raise ValueError(f"trajectory has {traj.n_layers} layers, network has {net.n_layers}")
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    if net.batch_shape():
        raise ValueError("gradients need an unbatched network (population axes found)")
    inputs = np.stack(traj.inputs)
    if inputs.shape[-1] != net.input_dim:
        raise ValueError("trajectory input width does not match the network")
    out = []
    pre = net.input_gain * inputs
    for i, p in enumerate(net.neuron_params):
        u = traj.stacked("u", i)
        if u.shape[-1] != p.size or u.shape[0] != len(traj):
            raise ValueError(f"trajectory layer {i} does not match the network")
        v = traj.stacked("v", i)
        s = traj.stacked("s", i)
        v0 = np.broadcast_to(p.v_rest, v.shape[1:])
        v_prev = np.concatenate([v0[None], v[:-1]], axis=0)
        out.append(_Layer(u=u, v=v, s=s, current=traj.stacked("currents", i), pre=pre, v_prev=v_prev))
        pre = s
    return out


def _loss_grads_per_layer(net: NetworkSpec, traj: Trajectory, loss_grads) -> list:
    if isinstance(loss_grads, (list, tuple)):
        if len(loss_grads) != net.n_layers:
            raise ValueError("need one loss-gradient entry (or None) per layer")
        per_layer = list(loss_grads)
    else:
        per_layer = [None] * (net.n_layers - 1) + [loss_grads]
    for i, g in enumerate(per_layer):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        expected = (len(traj),) + np.shape(traj.v[i][0])
        if g.shape != expected:
            raise ValueError(f"loss gradients for layer {i} have shape {g.shape}, expected {expected}")
        per_layer[i] = g
    return per_layer


def _sum_to_neurons(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def backward(
    net: NetworkSpec,
    trajectory: Trajectory,
    loss_grads,
    surrogate: SurrogateSpec = SurrogateSpec(),
    mode: str = FULL,
) -> np.ndarray:
    """Single reverse sweep returning ``dL/dgenome``.

    ``loss_grads`` is ``dl_n/dv(n)`` for the readout layer, shape ``(T, ...,
    n_out)``, or a list with one such array (or ``None``) per layer.
    """
    _check_mode(mode)
    layers = _layers(net, trajectory)
    ext = _loss_grads_per_layer(net, trajectory, loss_grads)
    T = len(trajectory)
    grads: dict[tuple[str, int, str], np.ndarray] = {}
    lam_s = None  # adjoint of this layer's spikes, supplied by the layer above
    for i in reversed(range(net.n_layers)):
        p = net.neuron_params[i]
        L = layers[i]
        k = p.decay
        shape = L.u.shape
        ext_v = ext[i] if ext[i] is not None else np.zeros(shape)
        ls = lam_s if lam_s is not None else np.zeros(shape)
        if net.spiking(i):
            gp = surrogate.derivative(L.u - p.v_th, p.v_th)
            if mode == FULL:
                a = (1.0 - L.s) + (p.v_rest - L.u) * gp
            else:
                a = 1.0 - L.s
        else:
            gp = np.zeros(shape)
            a = np.ones(shape)
        b = ls * gp
        lam_u = np.empty(shape)
        lam_v = np.empty(shape)
        carry = np.zeros(shape[1:])
        retain = 1.0 - k
        for t in range(T - 1, -1, -1):
            lam_v[t] = ext_v[t] + carry
            lam_u[t] = a[t] * lam_v[t] + b[t]
            carry = lam_u[t] * retain
        if net.spiking(i):
            through_spike = (lam_v * (p.v_rest - L.u) if mode == FULL else 0.0) + ls
            g_vth = -through_spike * gp
        else:
            g_vth = np.zeros(shape)
        g_k = lam_u * (p.r_mem * L.current - L.v_prev + p.v_rest)
        g_vrest = lam_v * L.s + lam_u * k
        g_r = lam_u * k * L.current
        lam_current = lam_u * k * p.r_mem
        grads[("neuron", i, "tau_raw")] = _sum_to_neurons(g_k) * k * (1.0 - k)
        grads[("neuron", i, "v_th")] = _sum_to_neurons(g_vth)
        # initial potential sits at v_rest
        grads[("neuron", i, "v_rest")] = _sum_to_neurons(g_vrest) + _sum_to_neurons(carry[None])
        grads[("neuron", i, "r_mem")] = _sum_to_neurons(g_r)
        w = net.weights[i]
        lc = lam_current.reshape(T, -1, w.shape[0])
        pre = L.pre.reshape(T, -1, w.shape[1])
        grads[("weight", i, "w")] = np.einsum("tbo,tbi->oi", lc, pre).reshape(-1)
        lam_s = lam_current @ w
    return np.concatenate(
        [grads[(kind, i, name)] for kind, i, name, _ in genome_layout(net)]
        or [np.zeros(0)]
    )


def _direction_seeds(net: NetworkSpec):
    """One-hot tangents of every genome entry, per layer and field."""
    P = genome_length(net)
    seeds = [
        {name: np.zeros((P, p.size)) for name in ("tau_raw", "v_th", "v_rest", "r_mem")}
        for p in net.neuron_params
    ]
    wseeds = [np.zeros((P,) + w.shape) for w in net.weights]
    offset = 0
    for kind, i, name, size in genome_layout(net):
        idx = np.arange(size)
        if kind == "neuron":
            seeds[i][name][offset + idx, idx] = 1.0
        else:
            flat = wseeds[i].reshape(P, -1)
            flat[offset + idx, idx] = 1.0
        offset += size
    return P, seeds, wseeds


def path_sum_oracle(
    net: NetworkSpec,
    trajectory: Trajectory,
    loss_grads,
    surrogate: SurrogateSpec = SurrogateSpec(),
    mode: str = FULL,
) -> np.ndarray:
    """Reference gradient from the explicit double sum over Jacobian products.

    For every layer and every genome direction the sensitivity of ``v(n)`` is
    ``sum_k (prod_{i=k+1..n} J(i)) dv(k)/dtheta|local``, with each product
    formed explicitly. Cost is quadratic in the sequence length, so the
    instance size is capped.
    """
    _check_mode(mode)
    n_neurons = sum(net.layer_sizes[1:])
    if n_neurons > ORACLE_MAX_NEURONS or len(trajectory) > ORACLE_MAX_STEPS:
        raise ValueError(
            f"oracle limited to {ORACLE_MAX_NEURONS} neurons and {ORACLE_MAX_STEPS} steps, "
            f"got {n_neurons} neurons and {len(trajectory)} steps"
        )
    layers = _layers(net, trajectory)
    ext = _loss_grads_per_layer(net, trajectory, loss_grads)
    T = len(trajectory)
    P, seeds, wseeds = _direction_seeds(net)
    grad = np.zeros(P)
    d_pre = None  # tangent of the presynaptic signal, shape (T, P, ..., n_in)
    for i, p in enumerate(net.neuron_params):
        L = layers[i]
        w = net.weights[i]
        k = p.decay
        sd = seeds[i]
        batch_ndim = L.u.ndim - 2

        def per_dir(x):
            # (P, n) -> (P, 1.., n) so it broadcasts against batch axes
            return x.reshape((P,) + (1,) * batch_ndim + (x.shape[-1],))

        dtau, dvth, dvrest, dr = (per_dir(sd[f]) for f in ("tau_raw", "v_th", "v_rest", "r_mem"))
        dk = dtau * k * (1.0 - k)
        spiking = net.spiking(i)
        if spiking:
            gp = surrogate.derivative(L.u - p.v_th, p.v_th)
        else:
            gp = np.zeros(L.u.shape)
        J = step_jacobian(L.u, L.s, p, surrogate, mode, spiking)

        local = np.empty((T, P) + L.u.shape[1:])
        du_local = np.empty_like(local)
        for t in range(T):
            d_current = _dcurrent(wseeds[i], w, L.pre[t], d_pre, t)
            du = dk * (p.r_mem * L.current[t] - L.v_prev[t] + p.v_rest) + k * (
                dr * L.current[t] + p.r_mem * d_current + dvrest
            )
            if t == 0:
                du = du + (1.0 - k) * dvrest
            du_local[t] = du
            if not spiking:
                local[t] = du
            elif mode == FULL:
                a = 1.0 - L.s[t] + (p.v_rest - L.u[t]) * gp[t]
                local[t] = a * du - (p.v_rest - L.u[t]) * gp[t] * dvth + L.s[t] * dvrest
            else:
                local[t] = (1.0 - L.s[t]) * du + L.s[t] * dvrest

        dv = np.zeros_like(local)
        for n in range(T):
            acc = np.zeros(local.shape[1:])
            for kk in range(n + 1):
                prod = np.prod(J[kk + 1:n + 1], axis=0)
                acc = acc + prod * local[kk]
            dv[n] = acc
        if ext[i] is not None:
            for n in range(T):
                grad += (ext[i][n] * dv[n]).reshape(P, -1).sum(axis=1)
        if spiking:
            du_total = du_local.copy()
            du_total[1:] += (1.0 - k) * dv[:-1]
            d_pre = gp[:, None] * (du_total - dvth)
        else:
            d_pre = None
    return grad


# name used by the published interface
eq5_oracle = path_sum_oracle


def _dcurrent(wseed, w, pre_t, d_pre, t):
    out = np.einsum("poi,...i->p...o", wseed, pre_t)
    if d_pre is not None:
        out = out + d_pre[t] @ w.T
    return out


@dataclass
class StabilityReport:
    """Per-step temporal Jacobian diagnostics of one unbatched trajectory.

    Neuron indices run over all layers in order.
    """

    jacobian: np.ndarray  # (T, n_total), signed
    running_product: np.ndarray  # (T, n_total), |prod_{i<=t} J(i)|
    u: np.ndarray  # (T, n_total)
    u_histogram: tuple[np.ndarray, np.ndarray]
    flagged_steps: np.ndarray  # steps with some |J| > 1

    @property
    def max_running_product(self) -> float:
        return float(self.running_product.max()) if self.running_product.size else 0.0

    @property
    def max_magnitude(self) -> float:
        return float(np.abs(self.jacobian).max()) if self.jacobian.size else 0.0

    def rows(self):
        T, n = self.jacobian.shape
        for t in range(T):
            for j in range(n):
                yield t, j, float(self.jacobian[t, j]), float(self.running_product[t, j]), float(self.u[t, j])

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "neuron", "jacobian", "running_product", "u"])
            for row in self.rows():
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3]), repr(row[4])])


def stability_report(
    net: NetworkSpec,
    trajectory: Trajectory,
    surrogate: SurrogateSpec = SurrogateSpec(),
    mode: str = FULL,
    bins: int = 50,
) -> StabilityReport:
    _check_mode(mode)
    layers = _layers(net, trajectory)
    if layers[0].u.ndim != 2:
        raise ValueError("stability_report expects an unbatched trajectory")
    jac = np.concatenate(
        [step_jacobian(L.u, L.s, p, surrogate, mode, net.spiking(i))
         for i, (L, p) in enumerate(zip(layers, net.neuron_params))],
        axis=1,
    )
    us = np.concatenate([L.u for L in layers], axis=1)
    running = np.cumprod(np.abs(jac), axis=0)
    flagged = np.flatnonzero((np.abs(jac) > 1.0).any(axis=1))
    return StabilityReport(
        jacobian=jac,
        running_product=running,
        u=us,
        u_histogram=np.histogram(us, bins=bins),
        flagged_steps=flagged,
    )


# --- policy gradient ------------------------------------------------------------


def softmax(x, axis=-1):
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class Episode:
    trajectory: Trajectory
    actions: np.ndarray  # (T,) action index taken after each step
    ret: float


def score_loss_grads(net: NetworkSpec, episode: Episode, weight: float) -> np.ndarray:
    """``weight * d log pi(a_t) / d v_out(t)`` for a softmax over readout potentials."""
    v_out = episode.trajectory.stacked("v", net.n_layers - 1)
    probs = softmax(v_out)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(episode.actions)), np.asarray(episode.actions, dtype=int)] = 1.0
    return weight * (onehot - probs)


def reinforce_update(
    net: NetworkSpec,
    episodes: Sequence[Episode],
    surrogate: SurrogateSpec = SurrogateSpec(),
    mode: str = FULL,
    baseline: float | None = None,
) -> np.ndarray:
    """Score-function gradient (ascent direction) of the mean return.

    ``mean_e (R_e - b) grad log pi(a_e)``, with ``b`` the batch mean return
    unless a baseline is given.
    """
    if not episodes:
        raise ValueError("empty episode batch")
    returns = np.array([ep.ret for ep in episodes], dtype=np.float64)
    b = returns.mean() if baseline is None else float(baseline)
    total = np.zeros(genome_length(net))
    for ep, r in zip(episodes, returns):
        w = (r - b) / len(episodes)
        if w == 0.0:
            continue
        total += backward(net, ep.trajectory, score_loss_grads(net, ep, w), surrogate, mode)
    return total


def sample_episode(net: NetworkSpec, env, seed: int, rng: np.random.Generator) -> Episode:
    """Roll out a stochastic softmax policy on a discrete-action environment."""
    obs = env.reset(seed)
    states = net.initial_state()
    traj = Trajectory.empty(net.n_layers)
    actions, total, done = [], 0.0, False
    while not done:
        states, currents, us = network_step(net, states, obs)
        traj.record(obs, states, currents, us)
        probs = softmax(readout(net, states))
        a = min(int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")), len(probs) - 1)
        actions.append(a)
        obs, reward, done = env.step(env.action_space.decode(a))
        total += reward
    return Episode(trajectory=traj, actions=np.array(actions), ret=total)


def masked_score_loss_grads(v_out: np.ndarray, actions: np.ndarray, weights: np.ndarray,
                            alive: np.ndarray) -> np.ndarray:
    """Batched score-function loss gradients for episodes run side by side.

    ``v_out`` is ``(T, B, n_actions)``, ``actions`` and ``alive`` are ``(T, B)``
    and ``weights`` is ``(B,)``. Steps after an episode ended get zero gradient.
    """
    probs = softmax(v_out)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, np.asarray(actions, dtype=int)[..., None], 1.0, axis=-1)
    return (onehot - probs) * (np.asarray(weights)[None, :, None] * np.asarray(alive)[..., None])


def reinforce_batch_gradient(
    net: NetworkSpec,
    trajectory: Trajectory,
    actions: np.ndarray,
    alive: np.ndarray,
    returns: np.ndarray,
    surrogate: SurrogateSpec = SurrogateSpec(),
    mode: str = FULL,
    baseline: float | None = None,
) -> np.ndarray:
    """Same estimator as :func:`reinforce_update` for a batched trajectory ``(T, B, ...)``."""
    returns = np.asarray(returns, dtype=np.float64)
    if returns.size == 0:
        raise ValueError("empty episode batch")
    b = returns.mean() if baseline is None else float(baseline)
    weights = (returns - b) / returns.size
    v_out = trajectory.stacked("v", net.n_layers - 1)
    return backward(net, trajectory, masked_score_loss_grads(v_out, actions, weights, alive), surrogate, mode)


@dataclass
class Adam:
    """Adam for gradient ascent or descent on a flat parameter vector."""

    lr: float = 3e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray, ascent: bool = True) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        g = grad if ascent else -grad
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
