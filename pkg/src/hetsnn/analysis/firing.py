from __future__ import annotations

import csv
from typing import Mapping, Sequence

import numpy as np

from ..neuron import Trajectory


def _spike_array(item, layer: int) -> np.ndarray:
    if isinstance(item, Trajectory):
        return item.stacked("s", layer)
    return np.asarray(item, dtype=np.float64)


def firing_stats(
    groups: Mapping[int, Sequence],
    neuron_sample: Sequence[int] | None = None,
    layer: int = 0,
) -> tuple[list[int], np.ndarray]:
    """Mean spike frequency (spikes per simulation step) per neuron and class.

    Each group holds trajectories or spike arrays of shape ``(T, ..., n)``;
    every index along the middle axes counts as one example. Returns the
    sorted class labels and a ``(len(neuron_sample), n_classes)`` matrix.
    """
    labels = sorted(groups)
    columns = []
    for label in labels:
        items = groups[label]
        if len(items) == 0:
            raise ValueError(f"class {label} has no recordings")
        rates = []
        for item in items:
            s = _spike_array(item, layer)
            per_example = s.mean(axis=0).reshape(-1, s.shape[-1])
            rates.append(per_example)
        rates = np.concatenate(rates, axis=0)
        columns.append(rates.mean(axis=0))
    matrix = np.stack(columns, axis=1)
    if neuron_sample is not None:
        matrix = matrix[np.asarray(neuron_sample, dtype=int)]
    return labels, matrix


def write_firing_csv(path, labels, matrix, neuron_sample=None) -> None:
    neurons = list(neuron_sample) if neuron_sample is not None else list(range(len(matrix)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["neuron"] + [f"class_{c}" for c in labels])
        for n, row in zip(neurons, matrix):
            w.writerow([n] + [repr(float(v)) for v in row])
