"""Surrogate derivatives for the Heaviside spike function.

Each family is defined by a smooth (or piecewise smooth) primitive ``g`` whose
derivative stands in for the Dirac delta during backpropagation. Arguments are
``x = u - v_th``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RECTANGULAR = "rectangular"
ARCTAN = "arctan"
LOG_NONZERO_SIGN = "log_nonzero_sign"
KINDS = (RECTANGULAR, ARCTAN, LOG_NONZERO_SIGN)


def nonzero_sign(x):
    """Sign with ``nonzero_sign(0) == +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class SurrogateSpec:
    """A surrogate family and its steepness ``alpha``.

    The rectangular family takes its width from each neuron's own threshold
    and ignores ``alpha``.
    """

    kind: str = RECTANGULAR
    alpha: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown surrogate {self.kind!r}; expected one of {KINDS}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def primitive(self, x, v_th=0.5):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == RECTANGULAR:
            w = np.asarray(v_th, dtype=np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                left = (w + x) ** 2 / (2 * w**2)
                right = 1.0 - (w - x) ** 2 / (2 * w**2)
            out = np.where(x <= -w, 0.0, np.where(x <= 0, left, np.where(x < w, right, 1.0)))
            return np.where(w > 0, out, (x >= 0).astype(np.float64))
        if self.kind == ARCTAN:
            return np.arctan(0.5 * np.pi * self.alpha * x) / np.pi + 0.5
        return nonzero_sign(x) * np.log(np.abs(self.alpha * x) + 1.0)

    def derivative(self, x, v_th=0.5):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == RECTANGULAR:
            w = np.asarray(v_th, dtype=np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.maximum(0.0, w - np.abs(x)) / w**2
            return np.where(w > 0, out, 0.0)
        if self.kind == ARCTAN:
            return 0.5 * self.alpha / (1.0 + (0.5 * np.pi * self.alpha * x) ** 2)
        return self.alpha / (np.abs(self.alpha * x) + 1.0)
