"""Static-image classification with a spiking network.

An image is injected as a constant input current for a fixed number of steps
(4 by default); the logits are the readout membrane potentials after the last
step. Ties in ``argmax`` go to the lowest class index.
"""

from __future__ import annotations

import numpy as np

from ..neuron import LayerState, NetworkSpec, _advance, layer_current, readout

DEFAULT_STEPS = 4


def classify_logits(net: NetworkSpec, images: np.ndarray, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Logits for a batch of flattened images in ``[0, 1]``.

    ``images`` has shape ``(N, d)``; with a population network (parameters of
    shape ``(B, 1, n)``) the result has shape ``(B, N, classes)``.
    """
    if steps < 1:
        raise ValueError("need at least one simulation step")
    x = np.asarray(images, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"image has {x.shape[-1]} pixels, network expects {net.input_dim}")
    # the input is constant, so the first layer's current is too
    first = layer_current(net.weights[0], net.input_gain * x)
    batch = np.broadcast_shapes(x.shape[:-1], net.batch_shape())
    states = net.initial_state(batch)
    for _ in range(steps):
        pre = None
        new_states = []
        for i, (w, p, st) in enumerate(zip(net.weights, net.neuron_params, states)):
            current = first if i == 0 else layer_current(w, pre)
            _, v, s = _advance(st.v, current, p.decay, p.v_th, p.v_rest, p.r_mem, net.spiking(i))
            new_states.append(LayerState(v=v, s=s))
            pre = s
        states = new_states
    return readout(net, states)


def classify_episode(net: NetworkSpec, image: np.ndarray, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Logits for a single image (any shape with ``d`` pixels in ``[0, 1]``)."""
    flat = np.asarray(image, dtype=np.float64).reshape(-1)
    return classify_logits(net, flat[None, :], steps)[0]


def predict(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=-1)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return (predict(logits) == np.asarray(labels)).mean(axis=-1)


def neg_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    idx = np.broadcast_to(np.asarray(labels, dtype=int)[:, None], logp.shape[:-1] + (1,))
    return np.take_along_axis(logp, idx, axis=-1)[..., 0].mean(axis=-1)
