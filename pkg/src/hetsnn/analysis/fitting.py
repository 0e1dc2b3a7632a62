"""Maximum-likelihood fits of gamma and lognormal distributions with location 0."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GAMMA = "gamma"
LOGNORMAL = "lognormal"

_SHIFT_TO = 6.0
# Bernoulli-number coefficients of the asymptotic series
_DIGAMMA_SERIES = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
_TRIGAMMA_SERIES = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)


def digamma(x):
    """psi(x) for x > 0: recurrence up to x >= 6, then the asymptotic expansion."""
    x = np.array(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("digamma implemented for positive arguments only")
    acc = np.zeros_like(x)
    while np.any(small := x < _SHIFT_TO):
        acc -= np.where(small, 1.0 / x, 0.0)
        x = np.where(small, x + 1.0, x)
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for c in reversed(_DIGAMMA_SERIES):
        series = (series + c) * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return out if out.ndim else float(out)


def trigamma(x):
    """psi'(x) for x > 0, same scheme as :func:`digamma`."""
    x = np.array(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("trigamma implemented for positive arguments only")
    acc = np.zeros_like(x)
    while np.any(small := x < _SHIFT_TO):
        acc += np.where(small, 1.0 / (x * x), 0.0)
        x = np.where(small, x + 1.0, x)
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for c in reversed(_TRIGAMMA_SERIES):
        series = (series + c) * inv2
    out = acc + 1.0 / x + 0.5 * inv2 + series / x
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FitResult:
    family: str
    shape: float
    scale: float
    log_likelihood: float
    n: int
    converged: bool = True
    degenerate: bool = False
    iterations: int = 0
    method: str = "mle"


def _positive_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    bad = np.flatnonzero(x <= 0)
    if bad.size:
        raise ValueError(f"sample {bad[0]} is not positive ({x[bad[0]]})")
    return x


def lognormal_loglik(x: np.ndarray, shape: float, scale: float) -> float:
    z = (np.log(x) - math.log(scale)) / shape
    return float(np.sum(-np.log(x) - math.log(shape) - 0.5 * math.log(2 * math.pi) - 0.5 * z * z))


def gamma_loglik(x: np.ndarray, shape: float, scale: float) -> float:
    return float(np.sum((shape - 1) * np.log(x) - x / scale) - x.size * (shape * math.log(scale) + math.lgamma(shape)))


def fit_lognormal(samples) -> FitResult:
    """Closed form: shape is the population std of log-samples, scale ``exp(mean log)``."""
    x = _positive_samples(samples)
    logs = np.log(x)
    mu = logs.mean()
    sd = float(np.sqrt(np.mean((logs - mu) ** 2)))
    scale = float(math.exp(mu))
    if sd == 0.0:
        return FitResult(LOGNORMAL, 0.0, scale, math.nan, x.size, degenerate=True)
    return FitResult(LOGNORMAL, sd, scale, lognormal_loglik(x, sd, scale), x.size)


def gamma_moments(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=np.float64)
    mean, var = x.mean(), x.var()
    return mean * mean / var, var / mean


def fit_gamma(samples, max_iter: int = 100, tol: float = 1e-12) -> FitResult:
    """Newton iteration on ``log k - psi(k) = log(mean) - mean(log x)``.

    Starts from the method-of-moments shape. If Newton does not converge in
    ``max_iter`` steps the moments estimate is returned with ``converged=False``.
    """
    x = _positive_samples(samples)
    mean = x.mean()
    target = math.log(mean) - float(np.mean(np.log(x)))
    if not target > 0 or x.var() == 0.0:
        raise ValueError("degenerate sample: all values equal")
    k0, theta0 = gamma_moments(x)
    k = k0
    for it in range(1, max_iter + 1):
        f = math.log(k) - digamma(k) - target
        fprime = 1.0 / k - trigamma(k)
        k_new = k - f / fprime
        if not k_new > 0:
            k_new = 0.5 * k
        if abs(k_new - k) <= tol * k:
            k = k_new
            return FitResult(GAMMA, k, mean / k, gamma_loglik(x, k, mean / k), x.size, iterations=it)
        k = k_new
    return FitResult(GAMMA, k0, theta0, gamma_loglik(x, k0, theta0), x.size,
                     converged=False, iterations=max_iter, method="moments")


def sample_skewness(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    d = x - x.mean()
    m2 = np.mean(d * d)
    return float(np.mean(d**3) / m2**1.5) if m2 > 0 else 0.0
