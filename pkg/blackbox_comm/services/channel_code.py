"""Random channel codes with the distortion-based joint-typicality decoder.

A codeword is accepted for a received y^n when it is p_X-typical and its
n-letter distortion to y^n is at most nD. The decoder needs a unique accepted
codeword. ``e2_exact`` computes the probability that one independent
codeword is accepted, which also drives the ensemble decoder at blocklengths
where the codebook cannot be stored.
"""

import logging
import math
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr
from scipy.special import gammaln, logsumexp

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import InvalidArgumentError, ResourceLimitError
from blackbox_comm.core.parallel import run_trials
from blackbox_comm.models.reports import DecodeOutcome, ReliabilityCell, ReliabilityReport, SanovCheck
from blackbox_comm.models.schemas import (
    CodebookRealization,
    Distribution,
    DistortionSpec,
    SeededRng,
    Sequence,
    codebook_log2_size,
)
from blackbox_comm.services.channels import ChannelModel, CompoundSet
from blackbox_comm.services.prob_core import distortion_budget, draw_iid, grid_budget, type_counts, typical_array
from blackbox_comm.services.rd_solver import sanov_exponent
from blackbox_comm.services.source_code import (
    ensemble_codeword,
    materialize_codewords,
    random_index,
    resolve_realization,
)
from blackbox_comm.utils.logspace import log1m_exp, log_neg_log1m_exp
from blackbox_comm.utils.stats import clopper_pearson

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


class ChannelCodebook(BaseModel):
    """2^{floor(nR)} codewords i.i.d. p_X; encoder and decoder rebuild it from the same seed."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    p_X: Distribution
    rate_bits: float = Field(ge=0)
    n: int = Field(ge=1)
    seed: SeededRng
    realization: CodebookRealization

    _words: Optional[np.ndarray] = PrivateAttr(default=None)
    _typical: dict = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        if self.realization == CodebookRealization.EXPLICIT:
            self._words = materialize_codewords(self.p_X.array, self.log2_size, self.n, self.seed)

    @property
    def log2_size(self) -> int:
        return codebook_log2_size(self.rate_bits, self.n)

    @property
    def size(self) -> int:
        return 2 ** self.log2_size

    @property
    def words(self) -> np.ndarray:
        if self._words is None:
            raise InvalidArgumentError("an ensemble codebook has no stored codewords")
        return self._words

    def codeword_array(self, index: int) -> np.ndarray:
        if not 0 <= index < self.size:
            raise InvalidArgumentError(f"message {index} out of range for {self.size} codewords")
        if self._words is not None:
            return self._words[index].astype(np.int64)
        return ensemble_codeword(self.p_X.array, self.n, self.seed, index)

    def codeword(self, index: int) -> Sequence:
        return Sequence(alphabet=self.p_X.alphabet, values=self.codeword_array(index))

    def typical_mask(self, eps: float) -> np.ndarray:
        """Which stored codewords are p_X-typical; cached per eps."""
        if eps not in self._typical:
            counts = np.stack([(self.words == a).sum(axis=1) for a in range(self.p_X.size)], axis=1)
            distance = np.abs(counts / self.n - self.p_X.array[None, :]).sum(axis=1)
            self._typical[eps] = distance <= eps + settings.TYPICALITY_SLACK
        return self._typical[eps]


def build_channel_codebook(p_X: Distribution, R: float, n: int, seed: SeededRng,
                           realization: CodebookRealization = CodebookRealization.EXPLICIT) -> ChannelCodebook:
    if R < 0:
        raise InvalidArgumentError(f"rate must be nonnegative, got {R}")
    if n < 1:
        raise InvalidArgumentError(f"blocklength must be positive, got {n}")
    resolved = resolve_realization(realization, codebook_log2_size(R, n), n)
    return ChannelCodebook(p_X=p_X, rate_bits=R, n=n, seed=seed, realization=resolved)


def _threshold(D: float, eps: float, relaxed: bool) -> float:
    return D + eps if relaxed else D


def jointly_typical_array(x: np.ndarray, y: np.ndarray, p: np.ndarray, eps: float, dm: np.ndarray,
                          D: float) -> bool:
    return typical_array(x, p, eps) and float(dm[x, y].sum()) <= distortion_budget(x.size, D)


def is_jointly_typical(x: Sequence, y: Sequence, p_X: Distribution, eps: float, d: DistortionSpec, D: float,
                       relaxed: bool = False) -> bool:
    """x is p_X-typical within eps and d^n(x, y) <= nD, both inclusive.

    With ``relaxed`` the distortion threshold is D + eps instead of D.
    """
    if x.n != y.n:
        raise InvalidArgumentError(f"length mismatch: {x.n} != {y.n}")
    if eps < 0:
        raise InvalidArgumentError(f"eps must be nonnegative, got {eps}")
    if x.alphabet != p_X.alphabet or x.alphabet != d.input_alphabet or y.alphabet != d.output_alphabet:
        raise InvalidArgumentError("sequence alphabets do not match the source and distortion measure")
    return jointly_typical_array(x.values, y.values, p_X.array, eps, d.array, _threshold(D, eps, relaxed))


def jt_decode_array(y: np.ndarray, cb: ChannelCodebook, eps: float, dm: np.ndarray, D: float) -> Tuple[DecodeOutcome, bool]:
    """Exhaustive decode over a stored codebook; also reports whether any codeword matched at all."""
    budget = distortion_budget(cb.n, D)
    typical = cb.typical_mask(eps)
    chunk = max(1, (1 << 20) // cb.n)
    found: List[int] = []
    for start in range(0, cb.size, chunk):
        words = cb.words[start:start + chunk]
        accepted = typical[start:start + chunk] & (dm[words, y[None, :]].sum(axis=1) <= budget)
        found.extend((start + np.flatnonzero(accepted)).tolist())
        if len(found) > 1:
            break
    if len(found) == 1:
        return DecodeOutcome.message(found[0]), True
    return DecodeOutcome.error(len(found), capped=len(found) > 1), bool(found)


def jt_decode(y: Sequence, cb: ChannelCodebook, eps: float, d: DistortionSpec, D: float,
              relaxed: bool = False) -> DecodeOutcome:
    """Message(i) iff codeword i is the only one jointly typical with y."""
    if y.alphabet != d.output_alphabet or cb.p_X.alphabet != d.input_alphabet:
        raise InvalidArgumentError("received word or codebook does not match the distortion measure")
    if y.n != cb.n:
        raise InvalidArgumentError(f"received length {y.n} does not match blocklength {cb.n}")
    outcome, _ = jt_decode_array(y.values, cb, eps, d.array, _threshold(D, eps, relaxed))
    return outcome


# Exact probability that one i.i.d. codeword is accepted
def compositions(m: int, k: int) -> np.ndarray:
    """All nonnegative integer vectors of length k summing to m."""
    if k == 1:
        return np.array([[m]], dtype=np.int64)
    parts = []
    for first in range(m + 1):
        rest = compositions(m - first, k - 1)
        parts.append(np.hstack([np.full((rest.shape[0], 1), first, dtype=np.int64), rest]))
    return np.vstack(parts)


def _log_multinomial(counts: np.ndarray, log_p: np.ndarray) -> np.ndarray:
    m = counts.sum(axis=1)
    with np.errstate(invalid="ignore"):
        weighted = np.where(counts > 0, counts * log_p[None, :], 0.0)
    return gammaln(m + 1) - gammaln(counts + 1).sum(axis=1) + weighted.sum(axis=1)


def _group(counts: np.ndarray, dist: np.ndarray, log_p: np.ndarray):
    keys = np.hstack([counts, dist[:, None]])
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    peak = np.full(unique.shape[0], -np.inf)
    np.maximum.at(peak, inverse, log_p)
    finite_peak = np.where(np.isfinite(peak), peak, 0.0)
    mass = np.zeros(unique.shape[0])
    np.add.at(mass, inverse, np.exp(log_p - finite_peak[inverse]))
    with np.errstate(divide="ignore"):
        merged = np.where(mass > 0, finite_peak + np.log(mass), -np.inf)
    return unique[:, :-1], unique[:, -1], merged


@lru_cache(maxsize=4096)
def _log_acceptance(p: Tuple[float, ...], eps: float, grid: Tuple[Tuple[int, ...], ...], budget: int,
                    y_counts: Tuple[int, ...]) -> float:
    p_arr = np.array(p)
    grid_arr = np.array(grid, dtype=np.int64)
    k = p_arr.size
    n = sum(y_counts)
    with np.errstate(divide="ignore"):
        log_p = np.log(p_arr)

    blocks = [b for b, m in enumerate(y_counts) if m > 0]
    counts = np.zeros((1, k), dtype=np.int64)
    dist = np.zeros(1, dtype=np.int64)
    log_mass = np.zeros(1)
    for position, b in enumerate(blocks):
        m = y_counts[b]
        width = math.comb(m + k - 1, k - 1)
        if width * counts.shape[0] > settings.E2_STATE_BUDGET:
            raise ResourceLimitError("impostor-probability table", width * counts.shape[0], settings.E2_STATE_BUDGET)
        block = compositions(m, k)
        block_dist = block @ grid_arr[:, b]
        block_mass = _log_multinomial(block, log_p)

        total_counts = (counts[:, None, :] + block[None, :, :]).reshape(-1, k)
        total_dist = (dist[:, None] + block_dist[None, :]).reshape(-1)
        total_mass = (log_mass[:, None] + block_mass[None, :]).reshape(-1)
        keep = (total_dist <= budget) & np.isfinite(total_mass)
        total_counts, total_dist, total_mass = total_counts[keep], total_dist[keep], total_mass[keep]

        if position == len(blocks) - 1:
            distance = np.abs(total_counts / n - p_arr[None, :]).sum(axis=1)
            accepted = distance <= eps + settings.TYPICALITY_SLACK
            if not accepted.any():
                return -math.inf
            return float(logsumexp(total_mass[accepted]))
        if total_mass.size == 0:
            return -math.inf
        counts, dist, log_mass = _group(total_counts, total_dist, total_mass)
    return -math.inf


def log_acceptance_probability(y_counts: np.ndarray, p: np.ndarray, eps: float, d: DistortionSpec, D: float) -> float:
    """ln P(an i.i.d. p codeword is jointly typical with any y of these letter counts)."""
    try:
        grid, scale = d.integer_grid()
    except ValueError as e:
        raise InvalidArgumentError(str(e)) from e
    n = int(np.sum(y_counts))
    return _log_acceptance(
        tuple(float(v) for v in p), float(eps), tuple(tuple(int(v) for v in row) for row in grid),
        grid_budget(n, D, scale), tuple(int(c) for c in y_counts),
    )


def e2_exact(y_type: Distribution, p_X: Distribution, eps: float, d: DistortionSpec, D: float, n: int) -> float:
    """Exact probability that one independent i.i.d. p_X codeword is jointly typical with a y^n of type ``y_type``.

    Dynamic program over the output-letter blocks of y^n with state (letter counts of the
    codeword, accumulated distortion on the rational grid of d).
    """
    if n < 1 or n > 1000:
        raise InvalidArgumentError(f"e2_exact supports 1 <= n <= 1000, got {n}")
    if p_X.size > 4 or d.output_alphabet.size > 4:
        raise InvalidArgumentError("e2_exact supports alphabets of at most 4 letters")
    if y_type.alphabet != d.output_alphabet or p_X.alphabet != d.input_alphabet:
        raise InvalidArgumentError("type and source alphabets do not match the distortion measure")
    if eps < 0:
        raise InvalidArgumentError(f"eps must be nonnegative, got {eps}")
    scaled = n * y_type.array
    counts = np.rint(scaled).astype(np.int64)
    if np.any(np.abs(scaled - counts) > 1e-9) or counts.sum() != n:
        raise InvalidArgumentError(f"type {y_type.probs} is not realizable at blocklength {n}")
    return min(1.0, math.exp(log_acceptance_probability(counts, p_X.array, eps, d, D)))


def sanov_bound_check(p_X: Distribution, eps: float, d: DistortionSpec, D: float, R: float, n: int,
                      y_type: Distribution, tol: Optional[float] = None) -> SanovCheck:
    """Union bound min(1, 2^{floor(nR)} e2) against (n+1)^{|X||Y|} 2^{floor(nR)} 2^{-n exponent}."""
    e2 = e2_exact(y_type, p_X, eps, d, D, n)
    log2_size = codebook_log2_size(R, n)
    exponent = sanov_exponent(p_X, d.output_alphabet, d, D, eps, tol).exponent_bits

    def _power(log2_value: float) -> float:
        return math.inf if log2_value > 1000 else 2.0 ** log2_value

    union = 0.0 if e2 == 0.0 else min(1.0, _power(log2_size + math.log2(e2)))
    types = p_X.size * d.output_alphabet.size * math.log2(n + 1)
    bound = 0.0 if math.isinf(exponent) else _power(types + log2_size - n * exponent)
    check = SanovCheck(n=n, rate_bits=R, e2=e2, union_probability=union, exponent_bits=exponent, bound=bound)
    logger.debug(f"Sanov check n={n}: union={union:.3e}, bound={bound:.3e}, holds={check.holds}")
    return check


# Ensemble decoding
def _log_impostor_categories(log2_size: int, log_pi: float) -> Tuple[float, float]:
    """ln P(no impostor accepted), ln P(exactly one) among 2^k - 1 i.i.d. impostors."""
    others = (1 << log2_size) - 1
    if others == 0 or log_pi == -math.inf:
        return 0.0, -math.inf
    h = float(log_neg_log1m_exp(log_pi))
    log_others = math.log(others)
    log_none = -math.exp(min(700.0, log_others + h))
    if others == 1:
        return log_none, log_pi
    log_one = log_others + log_pi - math.exp(min(700.0, math.log(others - 1) + h))
    return log_none, log_one


def decode_ensemble(y: np.ndarray, cb: ChannelCodebook, sent: int, eps: float, d: DistortionSpec, D: float,
                    generator: np.random.Generator) -> Tuple[DecodeOutcome, bool, bool]:
    """Sample the decoder outcome over an implicit codebook: (outcome, sent rejected, impostor accepted).

    The sent codeword is checked directly. The impostors are i.i.d. p_X and independent of y,
    so the number that pass is Binomial(M - 1, pi(y)); only whether it is 0, 1 or more matters.
    """
    x = cb.codeword_array(sent)
    sent_ok = jointly_typical_array(x, y, cb.p_X.array, eps, d.array, D)
    log_pi = log_acceptance_probability(type_counts(y, d.output_alphabet.size), cb.p_X.array, eps, d, D)
    log_none, log_one = _log_impostor_categories(cb.log2_size, log_pi)

    log_u = math.log(generator.random())
    if log_u < log_none:
        impostors = 0
    elif log_u < float(np.logaddexp(log_none, log_one)):
        impostors = 1
    else:
        impostors = 2

    if sent_ok and impostors == 0:
        return DecodeOutcome.message(sent), False, False
    if not sent_ok and impostors == 1:
        other = sent
        while other == sent:
            other = random_index(cb.log2_size, generator)
        return DecodeOutcome.message(other), True, True
    return DecodeOutcome.error(int(sent_ok) + impostors, capped=impostors > 1), not sent_ok, impostors > 0


def _reliability_batch(task) -> np.ndarray:
    """Rows of (error, e1, e2) for one message slot."""
    channel, p_X, R, n, realization, d, D, eps, message, rng, codebook_rng, trials = task
    rows = np.zeros((len(trials), 3), dtype=bool)
    for k, t in enumerate(trials):
        cb = build_channel_codebook(p_X, R, n, codebook_rng.derive(t), realization)
        x = cb.codeword_array(message)
        y = channel.transmit_array(x, rng.derive(t, "channel"))
        if cb.realization == CodebookRealization.EXPLICIT:
            outcome, _ = jt_decode_array(y, cb, eps, d.array, D)
            sent_ok = jointly_typical_array(x, y, p_X.array, eps, d.array, D)
            accepted = outcome.candidates - int(sent_ok)
            rows[k] = (outcome.index != message, not sent_ok, accepted > 0)
        else:
            outcome, e1, e2 = decode_ensemble(y, cb, message, eps, d, D, rng.derive(t, "decode").generator())
            rows[k] = (outcome.index != message, e1, e2)
    return rows


def run_reliability(channels: CompoundSet, p_X: Distribution, eps: float, d: DistortionSpec, D: float, R: float,
                    n_list: List[int], messages_sampled: int, trials_per_message: int, rng: SeededRng,
                    workers: Optional[int] = None, realization: CodebookRealization = CodebookRealization.AUTO,
                    relaxed: bool = False) -> ReliabilityReport:
    """Random-coding error over every member: fresh codebook per trial, shared across members."""
    if R <= 0:
        raise InvalidArgumentError(f"rate must be positive, got {R}")
    if messages_sampled < 1 or trials_per_message < 1:
        raise InvalidArgumentError("messages_sampled and trials_per_message must be positive")
    if channels.input_alphabet != p_X.alphabet or channels.output_alphabet != d.output_alphabet:
        raise InvalidArgumentError("channel alphabets do not match the source and distortion measure")
    threshold = _threshold(D, eps, relaxed)

    cells = []
    for label, member in zip(channels.labels(), channels.members):
        for n in n_list:
            log2_size = codebook_log2_size(R, n)
            # Resolve once so an oversized explicit request fails before any trial runs.
            resolved = resolve_realization(realization, log2_size, n)
            tasks = []
            for s in range(messages_sampled):
                message = random_index(log2_size, rng.derive("message", n, s).generator())
                tasks.append((member, p_X, R, n, resolved, d, threshold, eps, message,
                              rng.derive(label, n, s), rng.derive("codebook", n, s),
                              list(range(trials_per_message))))
            results = run_trials(_reliability_batch, tasks, workers, chunksize=1)
            cells.append(_reliability_cell(label, n, R, results, trials_per_message))
            logger.info(f"Reliability {label} n={n} R={R:.3f}: max error={cells[-1].max_error_estimate:.4f}, "
                        f"mean={cells[-1].mean_error:.4f} (E1={cells[-1].e1_count}, E2={cells[-1].e2_count})")
    return ReliabilityReport(cells=cells)


def _reliability_cell(label: str, n: int, R: float, results: List[np.ndarray], trials: int) -> ReliabilityCell:
    per_message = [int(rows[:, 0].sum()) for rows in results]
    worst = max(per_message)
    max_low, max_high = clopper_pearson(worst, trials)
    stacked = np.vstack(results)
    errors = int(stacked[:, 0].sum())
    mean_low, mean_high = clopper_pearson(errors, stacked.shape[0])
    return ReliabilityCell(
        member=label, n=n, rate_bits=R, messages=len(results), trials_per_message=trials,
        max_error_estimate=worst / trials, max_ci_low=max_low, max_ci_high=max_high,
        mean_error=errors / stacked.shape[0], mean_ci_low=mean_low, mean_ci_high=mean_high,
        errors=errors, e1_count=int(stacked[:, 1].sum()), e2_count=int(stacked[:, 2].sum()),
    )
