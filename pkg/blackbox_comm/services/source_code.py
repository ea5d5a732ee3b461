"""Random-codebook lossy source coding.

A rate-R codebook holds 2^{floor(nR)} codewords drawn i.i.d. from q_Y. Small
codebooks are stored (explicit realization) and searched exhaustively. Large
ones use the ensemble realization: codeword i is defined by its own derived
stream, and the minimum-distortion encoder samples the exact law of
(argmin index, reproduction) among all 2^{floor(nR)} i.i.d. codewords given
the input, so the codebook never has to exist in memory.
"""

import logging
import math
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import InvalidArgumentError, ResourceLimitError
from blackbox_comm.core.parallel import run_trials
from blackbox_comm.models.reports import DistortionReport
from blackbox_comm.models.schemas import (
    Alphabet,
    CodebookRealization,
    Distribution,
    DistortionSpec,
    SeededRng,
    Sequence,
    codebook_log2_size,
)
from blackbox_comm.services.prob_core import distortion_budget, draw_iid
from blackbox_comm.utils.logspace import log1m_exp, log_convolve, log_neg_log1m_exp, sample_log_weights
from blackbox_comm.utils.stats import clopper_pearson, mean_interval

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
_BATCH = 64


def fits_memory(log2_size: int, n: int) -> bool:
    return log2_size < 62 and (2 ** log2_size) * n <= settings.MEMORY_GUARD


def resolve_realization(realization: CodebookRealization, log2_size: int, n: int) -> CodebookRealization:
    if realization == CodebookRealization.AUTO:
        return CodebookRealization.EXPLICIT if fits_memory(log2_size, n) else CodebookRealization.ENSEMBLE
    if realization == CodebookRealization.EXPLICIT and not fits_memory(log2_size, n):
        required = (2 ** log2_size) * n
        raise ResourceLimitError("explicit codebook", required, settings.MEMORY_GUARD)
    return realization


def materialize_codewords(p: np.ndarray, log2_size: int, n: int, seed: SeededRng) -> np.ndarray:
    """All 2^log2_size codewords as a (count, n) array of letter indices."""
    count = 2 ** log2_size
    letters = draw_iid(p, count * n, seed.derive("codebook").generator()).reshape(count, n)
    return letters.astype(np.uint8 if p.size <= 256 else np.int64)


def ensemble_codeword(p: np.ndarray, n: int, seed: SeededRng, index: int) -> np.ndarray:
    return draw_iid(p, n, seed.derive("codeword", index).generator())


def random_index(log2_size: int, generator: np.random.Generator) -> int:
    """Uniform index in [0, 2^log2_size) for any size."""
    if log2_size == 0:
        return 0
    nbytes = (log2_size + 7) // 8
    return int.from_bytes(generator.bytes(nbytes), "little") & ((1 << log2_size) - 1)


class EnsembleQuantizer:
    """Minimum-distortion encoder over an implicit i.i.d. codebook.

    Works on the integer distortion grid. For an input x with symbol counts n_a,
    W = d^n(x, Y^n) is a sum of independent per-symbol blocks; per-symbol tables
    hold log P(sum of m i.i.d. block costs = v) for every m seen so far.
    """

    def __init__(self, q_y: np.ndarray, grid: np.ndarray, log2_size: int, n: int, seed: SeededRng):
        self.log_q = np.log(q_y, where=q_y > 0, out=np.full(q_y.size, -np.inf))
        self.grid = grid
        self.log2_size = log2_size
        self.n = n
        self.seed = seed
        self.tables: Dict[int, List[np.ndarray]] = {}
        self.letter_pmfs = [self._letter_pmf(a) for a in range(grid.shape[0])]
        self.pinned: Dict[int, np.ndarray] = {}
        self.encoded: Dict[bytes, int] = {}

        cells = sum(int(n * n * max(1, grid[a].max()) // 2) for a in range(grid.shape[0]))
        if cells > settings.E2_STATE_BUDGET * 4:
            raise ResourceLimitError("ensemble quantizer tables", cells, settings.E2_STATE_BUDGET * 4)

    def _letter_pmf(self, a: int) -> np.ndarray:
        costs = self.grid[a]
        pmf = np.full(int(costs.max()) + 1, -np.inf)
        for y, cost in enumerate(costs):
            pmf[cost] = np.logaddexp(pmf[cost], self.log_q[y])
        return pmf

    def _table(self, a: int, m: int) -> List[np.ndarray]:
        table = self.tables.setdefault(a, [np.zeros(1)])
        while len(table) <= m:
            table.append(log_convolve(table[-1], self.letter_pmfs[a]))
        return table

    def _min_distortion(self, log_pmf: np.ndarray, generator: np.random.Generator) -> int:
        """Minimum of 2^log2_size i.i.d. draws of W, by inversion of P(min <= w)."""
        log_cdf = np.logaddexp.accumulate(log_pmf)
        log_m = self.log2_size * LN2
        target = math.log(-math.log1p(-generator.random()))
        reached = log_m + log_neg_log1m_exp(log_cdf) >= target
        return int(np.argmax(reached)) if reached.any() else int(log_pmf.size - 1)

    def _argmin_index(self, log_pmf: np.ndarray, w: int, generator: np.random.Generator) -> int:
        """Lowest index attaining the minimum: P(J = j) proportional to r^j, r = P(W > w) / P(W >= w)."""
        log_at_least = 0.0 if w == 0 else float(log1m_exp(np.logaddexp.reduce(log_pmf[:w])))
        log_ratio = min(0.0, float(log_pmf[w]) - log_at_least)
        if log_ratio >= 0.0:
            return 0
        # L = -M log r; J / M has density proportional to exp(-L t) on [0, 1).
        big_l = math.exp(min(700.0, self.log2_size * LN2 + float(log_neg_log1m_exp(log_ratio))))
        u = generator.random()
        fraction = u if big_l < 1e-12 else -math.log1p(-u * -math.expm1(-big_l)) / big_l
        mantissa, exponent = math.frexp(fraction)
        shift = exponent + self.log2_size - 53
        if shift <= 0:
            index = int(math.ldexp(mantissa, exponent + self.log2_size))
        else:
            index = (int(math.ldexp(mantissa, 53)) << shift) | random_index(shift, generator)
        return min(index, (1 << self.log2_size) - 1)

    def encode(self, x: np.ndarray) -> Tuple[int, np.ndarray]:
        key = x.tobytes()
        if key in self.encoded:
            index = self.encoded[key]
            return index, self.pinned[index]

        generator = self.seed.derive("encode", key).generator()
        symbols = [a for a in range(self.grid.shape[0]) if np.any(x == a)]
        sizes = [int(np.count_nonzero(x == a)) for a in symbols]
        blocks = [self._table(a, m)[m] for a, m in zip(symbols, sizes)]
        suffix = [np.zeros(1)]
        for block in reversed(blocks):
            suffix.append(log_convolve(block, suffix[-1]))
        suffix.reverse()  # suffix[i] = law of the blocks i, i+1, ...

        w = self._min_distortion(suffix[0], generator)
        index = self._argmin_index(suffix[0], w, generator)

        reproduction = np.empty(x.size, dtype=np.int64)
        remaining = w
        for i, a in enumerate(symbols):
            # Split of the total between this block and the rest.
            head, tail = blocks[i], suffix[i + 1]
            low = max(0, remaining - (tail.size - 1))
            high = min(remaining, head.size - 1)
            values = np.arange(low, high + 1)
            own = sample_log_weights(head[values] + tail[remaining - values], generator)
            target = int(values[own])
            remaining -= target
            reproduction[x == a] = self._sample_block(a, sizes[i], target, generator)

        if index in self.pinned and not np.array_equal(self.pinned[index], reproduction):
            logger.debug(f"Ensemble index {index} already pinned; keeping the earlier codeword")
            reproduction = self.pinned[index]
        self.pinned[index] = reproduction
        self.encoded[key] = index
        return index, reproduction

    def _sample_block(self, a: int, size: int, target: int, generator: np.random.Generator) -> np.ndarray:
        table = self._table(a, size)
        costs = self.grid[a]
        letters = np.empty(size, dtype=np.int64)
        remaining = target
        for position in range(size):
            rest = table[size - position - 1]
            left = remaining - costs
            valid = (left >= 0) & (left < rest.size)
            weights = np.full(costs.size, -np.inf)
            weights[valid] = self.log_q[valid] + rest[left[valid]]
            letters[position] = sample_log_weights(weights, generator)
            remaining -= int(costs[letters[position]])
        return letters


class SourceCodebook(BaseModel):
    """Rate-R source codebook: 2^{floor(nR)} codewords i.i.d. q_Y, generated from ``seed``."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    q_Y: Distribution
    rate_bits: float = Field(ge=0)
    n: int = Field(ge=1)
    seed: SeededRng
    realization: CodebookRealization

    _words: Optional[np.ndarray] = PrivateAttr(default=None)
    _quantizer: Optional[EnsembleQuantizer] = PrivateAttr(default=None)

    def model_post_init(self, __context) -> None:
        if self.realization == CodebookRealization.EXPLICIT:
            self._words = materialize_codewords(self.q_Y.array, self.log2_size, self.n, self.seed)

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

    @property
    def codewords(self) -> List[Sequence]:
        return [Sequence(alphabet=self.q_Y.alphabet, values=row) for row in self.words]

    def codeword_array(self, index: int) -> np.ndarray:
        if not 0 <= index < self.size:
            raise InvalidArgumentError(f"codeword index {index} out of range")
        if self._words is not None:
            return self._words[index].astype(np.int64)
        if self._quantizer is not None and index in self._quantizer.pinned:
            return self._quantizer.pinned[index]
        return ensemble_codeword(self.q_Y.array, self.n, self.seed, index)

    def codeword(self, index: int) -> Sequence:
        return Sequence(alphabet=self.q_Y.alphabet, values=self.codeword_array(index))

    def quantizer(self, d: DistortionSpec) -> EnsembleQuantizer:
        if self._quantizer is None:
            try:
                grid, _ = d.integer_grid()
            except ValueError as e:
                raise InvalidArgumentError(f"ensemble encoding needs a rational distortion grid: {e}") from e
            self._quantizer = EnsembleQuantizer(self.q_Y.array, grid, self.log2_size, self.n, self.seed)
        return self._quantizer


def build_codebook(q_Y: Distribution, R: float, n: int, seed: SeededRng,
                   realization: CodebookRealization = CodebookRealization.EXPLICIT) -> SourceCodebook:
    """Random source codebook at rate R; explicit codebooks are guarded by MEMORY_GUARD."""
    if R <= 0:
        raise InvalidArgumentError(f"rate must be positive, got {R}")
    if n < 1:
        raise InvalidArgumentError(f"blocklength must be positive, got {n}")
    log2_size = codebook_log2_size(R, n)
    resolved = resolve_realization(realization, log2_size, n)
    logger.debug(f"Source codebook: n={n}, R={R:.4f}, 2^{log2_size} words, {resolved.value}")
    return SourceCodebook(q_Y=q_Y, rate_bits=R, n=n, seed=seed, realization=resolved)


@lru_cache(maxsize=8)
def _shared_codebook(symbols: tuple, probs: tuple, R: float, n: int, seed_key: tuple,
                     realization: CodebookRealization) -> SourceCodebook:
    q_Y = Distribution(alphabet=Alphabet(symbols=symbols), probs=probs)
    seed = SeededRng(seed=seed_key[0], stream_id=seed_key[1], path=seed_key[2])
    return build_codebook(q_Y, R, n, seed, realization=realization)


def shared_codebook(q_Y: Distribution, R: float, n: int, seed: SeededRng) -> SourceCodebook:
    """Auto-realized codebook, memoized per process by the values that define it.

    Every holder of the same definition gets the same object, so reproductions the
    ensemble encoder pins stay visible to the decoder of any of them.
    """
    if R <= 0:
        raise InvalidArgumentError(f"rate must be positive, got {R}")
    if n < 1:
        raise InvalidArgumentError(f"blocklength must be positive, got {n}")
    realization = resolve_realization(CodebookRealization.AUTO, codebook_log2_size(R, n), n)
    return _shared_codebook(q_Y.alphabet.symbols, q_Y.probs, R, n, (seed.seed, seed.stream_id, seed.path),
                            realization)


def encode_array(x: np.ndarray, cb: SourceCodebook, d: DistortionSpec) -> Tuple[int, np.ndarray]:
    """(index, reproduction) of the minimum-distortion codeword; ties go to the lowest index."""
    if x.size != cb.n:
        raise InvalidArgumentError(f"input length {x.size} does not match blocklength {cb.n}")
    if cb.realization == CodebookRealization.ENSEMBLE:
        return cb.quantizer(d).encode(x)

    words, dm = cb.words, d.array
    chunk = max(1, (1 << 20) // cb.n)
    best_index, best_value = 0, math.inf
    for start in range(0, words.shape[0], chunk):
        totals = dm[x[None, :], words[start:start + chunk]].sum(axis=1)
        local = int(np.argmin(totals))
        if totals[local] < best_value:
            best_index, best_value = start + local, float(totals[local])
    return best_index, words[best_index].astype(np.int64)


def encode_min_distortion(x: Sequence, cb: SourceCodebook, d: DistortionSpec) -> int:
    if x.alphabet != d.input_alphabet or cb.q_Y.alphabet != d.output_alphabet:
        raise InvalidArgumentError("codebook and input alphabets do not match the distortion measure")
    index, _ = encode_array(x.values, cb, d)
    return index


def _distortion_batch(task) -> np.ndarray:
    p, cb, d, rng, trials = task
    totals = np.empty(len(trials))
    for k, t in enumerate(trials):
        x = draw_iid(p, cb.n, rng.derive(t).generator())
        _, y = encode_array(x, cb, d)
        totals[k] = d.array[x, y].sum()
    return totals


def summarize_distortions(totals: np.ndarray, n: int, D: float, rate_bits: Optional[float] = None) -> DistortionReport:
    excess = int(np.count_nonzero(totals > distortion_budget(n, D)))
    low, high = clopper_pearson(excess, totals.size)
    mean, mean_low, mean_high = mean_interval(totals / n)
    return DistortionReport(
        n=n, trials=int(totals.size), distortion_D=D,
        excess_estimate=excess / totals.size, excess_ci_low=low, excess_ci_high=high,
        mean_distortion=mean, mean_ci_low=mean_low, mean_ci_high=mean_high, rate_bits=rate_bits,
    )


def measure_distortion(p_X: Distribution, cb: SourceCodebook, d: DistortionSpec, D: float, trials: int,
                       rng: SeededRng, workers: Optional[int] = None) -> DistortionReport:
    """Monte Carlo excess-distortion probability and mean distortion of a fixed code."""
    if trials < settings.MIN_TRIALS:
        raise InvalidArgumentError(f"at least {settings.MIN_TRIALS} trials are required, got {trials}")
    tasks = [(p_X.array, cb, d, rng, list(range(s, min(trials, s + _BATCH)))) for s in range(0, trials, _BATCH)]
    totals = np.concatenate(run_trials(_distortion_batch, tasks, workers))
    report = summarize_distortions(totals, cb.n, D, cb.rate_bits)
    logger.info(f"Source code n={cb.n} R={cb.rate_bits:.4f} D={D:.4f}: excess={report.excess_estimate:.4f} "
                f"mean={report.mean_distortion:.4f} over {trials} trials")
    return report
