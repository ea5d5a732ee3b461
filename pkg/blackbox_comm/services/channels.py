"""Blocklength-indexed channel models, compound sets and multi-user media.

Every model implements ``transmit_array(x, rng)`` on index arrays; the public
``transmit`` wraps it with alphabet checks. Models are immutable and draw all
randomness from the ``SeededRng`` they are handed.
"""

import logging
from typing import ClassVar, Dict, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import InvalidArgumentError
from blackbox_comm.core.parallel import run_trials
from blackbox_comm.models.reports import DirectCommCell, DirectCommEvidence
from blackbox_comm.models.schemas import (
    Alphabet,
    ChannelKind,
    Distribution,
    DistortionSpec,
    MediumKind,
    SeededRng,
    Sequence,
    TransitionKernel,
)
from blackbox_comm.services.prob_core import distortion_budget, draw_iid
from blackbox_comm.services.rd_solver import rate_distortion
from blackbox_comm.services.source_code import SourceCodebook, encode_array, shared_codebook
from blackbox_comm.utils.stats import clopper_pearson, half_width, mean_interval

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]
_BATCH = 64


def sample_kernel_rows(cumulative: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per letter; ``cumulative`` holds one CDF row per letter."""
    return (u[:, None] >= cumulative).sum(axis=1).astype(np.int64)


class ChannelModel(BaseModel):
    """A channel c = <c^n>: for every n, a law of y^n given x^n."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: ClassVar[ChannelKind]
    name: str = ""

    @property
    def input_alphabet(self) -> Alphabet:
        raise NotImplementedError

    @property
    def output_alphabet(self) -> Alphabet:
        raise NotImplementedError

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    def transmit_array(self, x: np.ndarray, rng: SeededRng) -> np.ndarray:
        raise NotImplementedError


class DMCChannel(ChannelModel):
    """Memoryless channel: letters are conditionally independent given the inputs."""

    kind: ClassVar[ChannelKind] = ChannelKind.DMC
    kernel: TransitionKernel

    @property
    def input_alphabet(self) -> Alphabet:
        return self.kernel.input_alphabet

    @property
    def output_alphabet(self) -> Alphabet:
        return self.kernel.output_alphabet

    def transmit_array(self, x: np.ndarray, rng: SeededRng) -> np.ndarray:
        u = rng.generator().random(x.size)
        return sample_kernel_rows(self.kernel.cumulative[x], u)

    @classmethod
    def bsc(cls, crossover: float, name: str = "") -> "DMCChannel":
        return cls(kernel=TransitionKernel.bsc(crossover), name=name or f"bsc({crossover:g})")

    @classmethod
    def identity(cls, alphabet: Alphabet, name: str = "identity") -> "DMCChannel":
        return cls(kernel=TransitionKernel.identity(alphabet), name=name)


class _StateKernels(ChannelModel):
    """Shared plumbing for channels that pick one of several kernels per letter."""

    kernels: Tuple[TransitionKernel, ...]

    _stacked: np.ndarray = PrivateAttr()

    @field_validator("kernels")
    @classmethod
    def _shared_alphabets(cls, kernels):
        if len(kernels) < 1:
            raise ValueError("at least one kernel is required")
        first = kernels[0]
        for kernel in kernels[1:]:
            if kernel.input_alphabet != first.input_alphabet or kernel.output_alphabet != first.output_alphabet:
                raise ValueError("all kernels must share input and output alphabets")
        return kernels

    def model_post_init(self, __context) -> None:
        self._stacked = np.stack([k.cumulative for k in self.kernels])

    @property
    def input_alphabet(self) -> Alphabet:
        return self.kernels[0].input_alphabet

    @property
    def output_alphabet(self) -> Alphabet:
        return self.kernels[0].output_alphabet

    def _emit(self, x: np.ndarray, states: np.ndarray, generator: np.random.Generator) -> np.ndarray:
        return sample_kernel_rows(self._stacked[states, x], generator.random(x.size))


class SlidingWindowNoise(_StateKernels):
    """Bursty channel: the kernel index is the number of bursts in the last ``window`` letters, capped at K-1."""

    kind: ClassVar[ChannelKind] = ChannelKind.SLIDING_WINDOW_NOISE
    window: int = Field(ge=1)
    burst_prob: float = Field(ge=0, le=1)

    def transmit_array(self, x: np.ndarray, rng: SeededRng) -> np.ndarray:
        generator = rng.generator()
        bursts = (generator.random(x.size) < self.burst_prob).astype(np.int64)
        windowed = np.convolve(bursts, np.ones(self.window, dtype=np.int64))[:x.size]
        states = np.minimum(windowed, len(self.kernels) - 1)
        return self._emit(x, states, generator)


class AdversarialSwitch(_StateKernels):
    """Periodic switching: letter i uses kernels[(i // period) mod K]."""

    kind: ClassVar[ChannelKind] = ChannelKind.ADVERSARIAL_SWITCH
    period: int = Field(ge=1)

    def transmit_array(self, x: np.ndarray, rng: SeededRng) -> np.ndarray:
        states = (np.arange(x.size) // self.period) % len(self.kernels)
        return self._emit(x, states, rng.generator())


class SourceCodeComposition(ChannelModel):
    """Deterministic channel decoder(encoder(x)) of a rate-(R^I_X(D) + margin) source code.

    The codebook for blocklength n is built on first use from ``seed.derive(n)``.
    """

    kind: ClassVar[ChannelKind] = ChannelKind.SOURCE_CODE_COMPOSITION
    p_X: Distribution
    distortion: DistortionSpec
    distortion_D: float
    rate_margin: float = Field(gt=0)
    n_family: Tuple[int, ...]
    seed: SeededRng
    rate_bits: float = Field(gt=0)
    q_Y: Distribution

    @property
    def input_alphabet(self) -> Alphabet:
        return self.distortion.input_alphabet

    @property
    def output_alphabet(self) -> Alphabet:
        return self.distortion.output_alphabet

    def codebook(self, n: int) -> SourceCodebook:
        if n not in self.n_family:
            raise InvalidArgumentError(f"blocklength {n} is not in the channel's family {self.n_family}")
        return shared_codebook(self.q_Y, self.rate_bits, n, self.seed.derive(n))

    def transmit_array(self, x: np.ndarray, rng: SeededRng) -> np.ndarray:
        _, reproduction = encode_array(x, self.codebook(x.size), self.distortion)
        return reproduction


class CompoundSet(BaseModel):
    """Finite set of channels sharing alphabets; one code must serve every member."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    members: List[ChannelModel]

    @field_validator("members")
    @classmethod
    def _nonempty_shared(cls, members):
        if not members:
            raise ValueError("a compound set needs at least one member")
        first = members[0]
        for member in members[1:]:
            if member.input_alphabet != first.input_alphabet or member.output_alphabet != first.output_alphabet:
                raise ValueError(f"member {member.label} does not share the set's alphabets")
        return members

    @property
    def input_alphabet(self) -> Alphabet:
        return self.members[0].input_alphabet

    @property
    def output_alphabet(self) -> Alphabet:
        return self.members[0].output_alphabet

    def labels(self) -> List[str]:
        """Member labels, made unique by position when names repeat."""
        raw = [m.label for m in self.members]
        return [label if raw.count(label) == 1 else f"{label}#{k}" for k, label in enumerate(raw)]

    @classmethod
    def of(cls, *members: ChannelModel) -> "CompoundSet":
        return cls(members=list(members))


class Medium(BaseModel):
    """Joint transition law of all ordered user pairs (i, j), i != j."""

    model_config = ConfigDict(frozen=True)

    kind: MediumKind
    num_users: int = Field(ge=2)
    pairs: Tuple[Pair, ...]
    kernels: Tuple[TransitionKernel, ...] = ()
    crossover: float = Field(default=0.0, ge=0, le=1)

    @model_validator(mode="after")
    def _valid_pairs(self):
        if not self.pairs:
            raise ValueError("a medium needs at least one pair")
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("pairs must be distinct")
        for i, j in self.pairs:
            if i == j:
                raise ValueError(f"pair ({i}, {j}) is not a pair of distinct users")
            if not (0 <= i < self.num_users and 0 <= j < self.num_users):
                raise ValueError(f"pair ({i}, {j}) refers to a user outside 0..{self.num_users - 1}")
        if self.kind == MediumKind.PARALLEL and len(self.kernels) != len(self.pairs):
            raise ValueError("a parallel medium needs one kernel per pair")
        return self

    def input_alphabet(self, pair: Pair) -> Alphabet:
        if self.kind == MediumKind.SHARED_NOISE:
            return Alphabet.binary()
        return self.kernels[self.pairs.index(pair)].input_alphabet

    def output_alphabet(self, pair: Pair) -> Alphabet:
        if self.kind == MediumKind.SHARED_NOISE:
            return Alphabet.binary()
        return self.kernels[self.pairs.index(pair)].output_alphabet

    @classmethod
    def parallel(cls, pairs: List[Pair], kernels: List[TransitionKernel], num_users: Optional[int] = None) -> "Medium":
        num_users = num_users or 1 + max(max(p) for p in pairs)
        return cls(kind=MediumKind.PARALLEL, num_users=num_users, pairs=tuple(pairs), kernels=tuple(kernels))

    @classmethod
    def shared_noise(cls, pairs: List[Pair], crossover: float, num_users: Optional[int] = None) -> "Medium":
        """One Bernoulli(crossover) noise sequence XORed into every pair."""
        num_users = num_users or 1 + max(max(p) for p in pairs)
        return cls(kind=MediumKind.SHARED_NOISE, num_users=num_users, pairs=tuple(pairs), crossover=crossover)


def medium_transmit_arrays(m: Medium, inputs: Mapping[Pair, np.ndarray], rng: SeededRng) -> Dict[Pair, np.ndarray]:
    missing = [pair for pair in m.pairs if pair not in inputs]
    if missing:
        raise InvalidArgumentError(f"missing input for pairs {missing}")
    lengths = {int(inputs[pair].size) for pair in m.pairs}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"pair inputs have different lengths {sorted(lengths)}")

    if m.kind == MediumKind.SHARED_NOISE:
        n = lengths.pop()
        noise = (rng.derive("shared_noise").generator().random(n) < m.crossover).astype(np.int64)
        return {pair: inputs[pair] ^ noise for pair in m.pairs}

    return {
        pair: sample_kernel_rows(kernel.cumulative[inputs[pair]],
                                 rng.derive("pair", k).generator().random(inputs[pair].size))
        for k, (pair, kernel) in enumerate(zip(m.pairs, m.kernels))
    }


def medium_transmit(m: Medium, inputs: Mapping[Pair, Sequence], rng: SeededRng) -> Dict[Pair, Sequence]:
    """Jointly sample every pair's output from the medium."""
    for pair, x in inputs.items():
        if pair in m.pairs and x.alphabet != m.input_alphabet(pair):
            raise InvalidArgumentError(f"input of pair {pair} is not over the medium's alphabet")
    outputs = medium_transmit_arrays(m, {pair: x.values for pair, x in inputs.items()}, rng)
    return {pair: Sequence(alphabet=m.output_alphabet(pair), values=y) for pair, y in outputs.items()}


class MediumChannel(ChannelModel):
    """Single-pair view of a medium; every other pair is fed i.i.d. letters from its own source."""

    kind: ClassVar[ChannelKind] = ChannelKind.MEDIUM_PAIR
    medium: Medium
    pair: Pair
    background: Dict[Pair, Distribution] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _covers_pairs(self):
        if self.pair not in self.medium.pairs:
            raise ValueError(f"pair {self.pair} is not part of the medium")
        others = [p for p in self.medium.pairs if p != self.pair and p not in self.background]
        if others:
            raise ValueError(f"no background source for pairs {others}")
        return self

    @property
    def input_alphabet(self) -> Alphabet:
        return self.medium.input_alphabet(self.pair)

    @property
    def output_alphabet(self) -> Alphabet:
        return self.medium.output_alphabet(self.pair)

    def transmit_array(self, x: np.ndarray, rng: SeededRng) -> np.ndarray:
        inputs = {self.pair: x}
        for k, pair in enumerate(self.medium.pairs):
            if pair != self.pair:
                inputs[pair] = draw_iid(self.background[pair].array, x.size,
                                        rng.derive("background", k).generator())
        return medium_transmit_arrays(self.medium, inputs, rng.derive("medium"))[self.pair]


def transmit(ch: ChannelModel, x: Sequence, rng: SeededRng) -> Sequence:
    """Draw y^n from c^n(. | x^n); reproducible for a fixed rng."""
    if x.alphabet != ch.input_alphabet:
        raise InvalidArgumentError(f"input is not over the input alphabet of {ch.label}")
    y = ch.transmit_array(x.values, rng)
    return Sequence(alphabet=ch.output_alphabet, values=y)


def make_source_code_channel(p_X: Distribution, d: DistortionSpec, D: float, rate_margin: float,
                             n_family: List[int], seed: SeededRng, name: str = "") -> SourceCodeComposition:
    """Channel that communicates X directly within D through a source code at rate R^I_X(D) + margin."""
    if rate_margin <= 0:
        raise InvalidArgumentError(f"rate_margin must be positive, got {rate_margin}")
    if not n_family or min(n_family) < 1:
        raise InvalidArgumentError("n_family must list positive blocklengths")
    point = rate_distortion(p_X, d, D)
    q_y = Distribution.from_array(d.output_alphabet, point.q_y / point.q_y.sum())
    rate = point.rate_bits + rate_margin
    logger.info(f"Source-code channel: R^I(D={D:g}) = {point.rate_bits:.4f}, code rate {rate:.4f}")
    return SourceCodeComposition(
        name=name or f"source_code(D={D:g},margin={rate_margin:g})",
        p_X=p_X, distortion=d, distortion_D=D, rate_margin=rate_margin,
        n_family=tuple(sorted(set(n_family))), seed=seed, rate_bits=rate, q_Y=q_y,
    )


def _direct_batch(task) -> np.ndarray:
    channel, p, dm, n, rng, trials = task
    totals = np.empty(len(trials))
    for k, t in enumerate(trials):
        x = draw_iid(p, n, rng.derive(t, "source").generator())
        y = channel.transmit_array(x, rng.derive(t, "channel"))
        totals[k] = dm[x, y].sum()
    return totals


def direct_cell(totals: np.ndarray, n: int, D: float) -> DirectCommCell:
    excess = int(np.count_nonzero(totals > distortion_budget(n, D)))
    estimate = excess / totals.size
    low, high = clopper_pearson(excess, totals.size)
    mean, mean_low, mean_high = mean_interval(totals / n)
    return DirectCommCell(
        n=n, trials=int(totals.size), excess_estimate=estimate, ci_low=low, ci_high=high,
        half_width=half_width(low, high, estimate), mean_distortion=mean,
        mean_ci_low=mean_low, mean_ci_high=mean_high,
    )


def verify_direct_communication(channels: CompoundSet, p_X: Distribution, d: DistortionSpec, D: float,
                                n_list: List[int], trials: int, rng: SeededRng,
                                workers: Optional[int] = None) -> List[DirectCommEvidence]:
    """Monte Carlo Pr(d^n(X^n, Y^n) > nD) for i.i.d. p_X fed straight into every member."""
    if trials < settings.MIN_TRIALS:
        raise InvalidArgumentError(f"at least {settings.MIN_TRIALS} trials are required, got {trials}")
    if channels.input_alphabet != p_X.alphabet or channels.input_alphabet != d.input_alphabet:
        raise InvalidArgumentError("source, distortion and channel input alphabets do not match")
    if channels.output_alphabet != d.output_alphabet:
        raise InvalidArgumentError("channel output alphabet does not match the distortion measure")

    evidence = []
    for label, member in zip(channels.labels(), channels.members):
        cells = []
        for n in n_list:
            cell_rng = rng.derive(label, n)
            tasks = [(member, p_X.array, d.array, n, cell_rng, list(range(s, min(trials, s + _BATCH))))
                     for s in range(0, trials, _BATCH)]
            totals = np.concatenate(run_trials(_direct_batch, tasks, workers))
            cell = direct_cell(totals, n, D)
            logger.info(f"Direct communication {label} n={n}: excess={cell.excess_estimate:.4f} "
                        f"(+/-{cell.half_width:.4f}), mean distortion {cell.mean_distortion:.4f}")
            cells.append(cell)
        evidence.append(DirectCommEvidence(channel_id=label, source=p_X, distortion=d, distortion_D=D, cells=cells))
    return evidence
