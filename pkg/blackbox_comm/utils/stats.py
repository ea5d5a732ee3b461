"""Confidence intervals for Monte Carlo estimates."""

from typing import Tuple

import numpy as np
from scipy import stats

from blackbox_comm.core.config import settings


def clopper_pearson(successes: int, trials: int, level: float = None) -> Tuple[float, float]:
    """Exact binomial confidence interval for a proportion."""
    level = settings.CI_LEVEL if level is None else level
    if trials <= 0:
        return 0.0, 1.0
    alpha = 1.0 - level
    low = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
    high = 1.0 if successes == trials else float(stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return low, high


def mean_interval(samples: np.ndarray, level: float = None) -> Tuple[float, float, float]:
    """Normal-approximation interval for a sample mean: (mean, low, high)."""
    level = settings.CI_LEVEL if level is None else level
    samples = np.asarray(samples, dtype=float)
    mean = float(samples.mean()) if samples.size else 0.0
    if samples.size < 2:
        return mean, mean, mean
    half = float(stats.norm.ppf(0.5 + level / 2) * samples.std(ddof=1) / np.sqrt(samples.size))
    return mean, mean - half, mean + half


def half_width(low: float, high: float, estimate: float) -> float:
    return max(estimate - low, high - estimate)
