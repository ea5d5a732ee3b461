"""Natural-log domain helpers for probabilities far below float range."""

import math

import numpy as np
from scipy.special import logsumexp


def log_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log of the convolution of exp(a) and exp(b)."""
    if a.size < b.size:
        a, b = b, a
    out = np.full((b.size, a.size + b.size - 1), -np.inf)
    for shift, value in enumerate(b):
        if value > -np.inf:
            out[shift, shift:shift + a.size] = a + value
    with np.errstate(divide="ignore"):
        return logsumexp(out, axis=0)


def log1m_exp(log_p):
    """log(1 - exp(log_p)) for log_p <= 0."""
    log_p = np.minimum(np.asarray(log_p, dtype=float), 0.0)
    with np.errstate(divide="ignore"):
        return np.where(log_p > -math.log(2.0), np.log(-np.expm1(log_p)), np.log1p(-np.exp(log_p)))


def log_neg_log1m_exp(log_p):
    """log(-log(1 - exp(log_p))); +inf at log_p = 0."""
    log_p = np.minimum(np.asarray(log_p, dtype=float), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.log(-np.log1p(-np.exp(np.maximum(log_p, -30.0))))
    return np.where(log_p < -30.0, log_p + np.log1p(np.exp(log_p) / 2.0), direct)


def sample_log_weights(log_weights: np.ndarray, generator: np.random.Generator) -> int:
    """Index drawn with probability proportional to exp(log_weights)."""
    weights = np.exp(log_weights - np.max(log_weights))
    cumulative = np.cumsum(weights)
    return int(np.searchsorted(cumulative, generator.random() * cumulative[-1], side="right"))
