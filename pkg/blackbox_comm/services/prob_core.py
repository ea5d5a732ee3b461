"""Finite-alphabet probability machinery.

Types, typical sets, divergences and distortion accounting. All information
quantities are in bits. Public functions take the domain types from
``blackbox_comm.models.schemas``; the ``*_array`` helpers work on raw index
arrays and are what the simulators call in their inner loops.
"""

import logging
import math

import numpy as np
from scipy.special import rel_entr

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import InvalidArgumentError
from blackbox_comm.models.schemas import (
    Alphabet,
    Distribution,
    DistortionSpec,
    JointDistribution,
    SeededRng,
    Sequence,
)

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


# Array-level helpers
def type_counts(values: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(values, minlength=size)


def l1_distance(counts: np.ndarray, n: int, p: np.ndarray) -> float:
    return float(np.abs(counts / n - p).sum())


def typical_array(values: np.ndarray, p: np.ndarray, eps: float) -> bool:
    """L1 typicality of an index array; the inequality is inclusive."""
    return l1_distance(type_counts(values, p.size), values.size, p) <= eps + settings.TYPICALITY_SLACK


def distortion_array(x: np.ndarray, y: np.ndarray, d: np.ndarray) -> float:
    return float(d[x, y].sum())


def distortion_budget(n: int, D: float) -> float:
    """Largest total n-letter distortion that still counts as within D (inclusive)."""
    return n * D * (1.0 + 1e-12) + 1e-9


def grid_budget(n: int, D: float, scale: int) -> int:
    """``distortion_budget`` on an integer grid of the given scale."""
    return int(math.floor(distortion_budget(n, D) * scale))


def draw_iid(p: np.ndarray, n: int, generator: np.random.Generator) -> np.ndarray:
    """n i.i.d. letters from p by inverse-CDF lookup."""
    cumulative = np.cumsum(p)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, generator.random(n), side="right").astype(np.int64)


def kl_array(p: np.ndarray, q: np.ndarray) -> float:
    """D(p||q) in bits, +inf when p is not absolutely continuous w.r.t. q."""
    if np.any((p > 0) & (q <= 0)):
        return math.inf
    return float(rel_entr(p, q).sum() / LN2)


def mutual_information_array(joint: np.ndarray) -> float:
    rows = joint.sum(axis=1)
    cols = joint.sum(axis=0)
    return max(0.0, kl_array(joint.ravel(), np.outer(rows, cols).ravel()))


def entropy_array(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _check_same(a: Alphabet, b: Alphabet, what: str) -> None:
    if a != b:
        raise InvalidArgumentError(f"{what}: alphabets do not match")


# Operations
def entropy(p: Distribution) -> float:
    """Shannon entropy H(p) in bits."""
    return entropy_array(p.array)


def binary_entropy(x: float) -> float:
    """h2(x) in bits, with h2(0) = h2(1) = 0."""
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def empirical_type(s: Sequence) -> Distribution:
    """Per-symbol frequencies of ``s``."""
    if s.n < 1:
        raise InvalidArgumentError("empirical type of an empty sequence")
    counts = type_counts(s.values, s.alphabet.size)
    return Distribution.from_array(s.alphabet, counts / s.n)


def is_typical(s: Sequence, p: Distribution, eps: float) -> bool:
    """True iff sum_x |type(s)(x) - p(x)| <= eps."""
    if eps < 0:
        raise InvalidArgumentError(f"eps must be nonnegative, got {eps}")
    _check_same(s.alphabet, p.alphabet, "is_typical")
    return typical_array(s.values, p.array, eps)


def kl_divergence(p: Distribution, q: Distribution) -> float:
    _check_same(p.alphabet, q.alphabet, "kl_divergence")
    return kl_array(p.array, q.array)


def product_joint(p: Distribution, q: Distribution) -> JointDistribution:
    return JointDistribution.from_array(p.alphabet, q.alphabet, np.outer(p.array, q.array))


def mutual_information(j: JointDistribution) -> float:
    """I(Z;Y) = D(j || product of its marginals), in bits."""
    return mutual_information_array(j.array)


def joint_type(x: Sequence, y: Sequence) -> JointDistribution:
    """Empirical joint distribution of the letter pairs (x_i, y_i)."""
    if x.n != y.n:
        raise InvalidArgumentError(f"length mismatch: {x.n} != {y.n}")
    counts = np.zeros((x.alphabet.size, y.alphabet.size))
    np.add.at(counts, (x.values, y.values), 1.0)
    return JointDistribution.from_array(x.alphabet, y.alphabet, counts / x.n)


def n_letter_distortion(x: Sequence, y: Sequence, d: DistortionSpec) -> float:
    """d^n(x, y): the exact sum of per-letter distortions."""
    if x.n != y.n:
        raise InvalidArgumentError(f"length mismatch: {x.n} != {y.n}")
    _check_same(x.alphabet, d.input_alphabet, "n_letter_distortion input")
    _check_same(y.alphabet, d.output_alphabet, "n_letter_distortion output")
    return distortion_array(x.values, y.values, d.array)


def sample_iid(p: Distribution, n: int, rng: SeededRng) -> Sequence:
    """n independent draws from p, reproducible from ``rng``."""
    if n < 1:
        raise InvalidArgumentError(f"blocklength must be positive, got {n}")
    return Sequence(alphabet=p.alphabet, values=draw_iid(p.array, n, rng.generator()))
