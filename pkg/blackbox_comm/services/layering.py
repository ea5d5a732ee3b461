"""Layering above black-box channels.

Layers (modems) wrap a channel into a ``ComposedChannel``. Message channels
carry codebook indices: a ``NoiselessPipe`` or a ``CodedChannel``, which is
the random channel code run over a channel certified for direct distortion-D
communication. A ``SeparationSystem`` stacks a source code on a message channel.
"""

import logging
import math
from typing import ClassVar, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import CertificationError, InvalidArgumentError, PreconditionError
from blackbox_comm.core.parallel import run_trials
from blackbox_comm.models.reports import (
    BehavioralCheckResult,
    DirectCommEvidence,
    DistortionReport,
    EquivalenceReport,
    ReliabilityReport,
)
from blackbox_comm.models.schemas import (
    Alphabet,
    ChannelKind,
    CodebookRealization,
    Distribution,
    DistortionSpec,
    SeededRng,
    codebook_log2_size,
)
from blackbox_comm.services.channel_code import (
    ChannelCodebook,
    build_channel_codebook,
    decode_ensemble,
    jt_decode_array,
)
from blackbox_comm.services.channels import ChannelModel, CompoundSet, verify_direct_communication
from blackbox_comm.services.prob_core import draw_iid, type_counts
from blackbox_comm.services.rd_solver import distortion_range, rate_distortion
from blackbox_comm.services.source_code import (
    SourceCodebook,
    encode_array,
    random_index,
    shared_codebook,
    summarize_distortions,
)

logger = logging.getLogger(__name__)

_BATCH = 32


# Layers
class Layer(BaseModel):
    """Encoder/decoder pair placed above a channel; both ends are built from ``seed``."""

    model_config = ConfigDict(frozen=True)

    seed: SeededRng = Field(default_factory=lambda: SeededRng(seed=0))
    name: str = ""

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        return x

    def decode_array(self, y: np.ndarray) -> np.ndarray:
        return y

    def check(self, input_alphabet: Alphabet, output_alphabet: Alphabet) -> None:
        """Raise when the layer cannot sit on a channel with these alphabets."""

    @property
    def label(self) -> str:
        return self.name or type(self).__name__.replace("Layer", "").lower()

    def flat(self) -> Tuple["Layer", ...]:
        return (self,)

    def then(self, outer: "Layer") -> "StackedLayer":
        """This layer with ``outer`` stacked above it."""
        return StackedLayer(layers=self.flat() + outer.flat(), seed=self.seed)

    @classmethod
    def identity(cls) -> "IdentityLayer":
        return IdentityLayer()


class IdentityLayer(Layer):
    def flat(self) -> Tuple[Layer, ...]:
        return ()


class PermutationLayer(Layer):
    """Interleaver: a seeded permutation of letter positions per blocklength."""

    def _permutation(self, n: int) -> np.ndarray:
        return self.seed.derive("permutation", n).generator().permutation(n)

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        return x[self._permutation(x.size)]

    def decode_array(self, y: np.ndarray) -> np.ndarray:
        out = np.empty_like(y)
        out[self._permutation(y.size)] = y
        return out


class ScramblerLayer(Layer):
    """Adds a seeded key sequence modulo the alphabet size; the decoder subtracts it."""

    alphabet_size: int = Field(ge=2)

    def _key(self, n: int) -> np.ndarray:
        return self.seed.derive("scrambler", n).generator().integers(0, self.alphabet_size, n)

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        return (x + self._key(x.size)) % self.alphabet_size

    def decode_array(self, y: np.ndarray) -> np.ndarray:
        return (y - self._key(y.size)) % self.alphabet_size

    def check(self, input_alphabet: Alphabet, output_alphabet: Alphabet) -> None:
        if input_alphabet.size != self.alphabet_size or output_alphabet.size != self.alphabet_size:
            raise InvalidArgumentError(
                f"scrambler over {self.alphabet_size} letters cannot wrap a "
                f"{input_alphabet.size}-to-{output_alphabet.size} letter channel"
            )


class StackedLayer(Layer):
    """Layers listed innermost first; encoding runs outermost first."""

    layers: Tuple[Layer, ...]

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            x = layer.encode_array(x)
        return x

    def decode_array(self, y: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            y = layer.decode_array(y)
        return y

    def check(self, input_alphabet: Alphabet, output_alphabet: Alphabet) -> None:
        for layer in self.layers:
            layer.check(input_alphabet, output_alphabet)

    def flat(self) -> Tuple[Layer, ...]:
        return self.layers

    @property
    def label(self) -> str:
        return self.name or "+".join(layer.label for layer in self.layers) or "identity"


class ComposedChannel(ChannelModel):
    """decoder(inner(encoder(x))): a channel in its own right."""

    kind: ClassVar[ChannelKind] = ChannelKind.COMPOSED
    inner: ChannelModel
    layer: Layer

    @property
    def input_alphabet(self) -> Alphabet:
        return self.inner.input_alphabet

    @property
    def output_alphabet(self) -> Alphabet:
        return self.inner.output_alphabet

    @property
    def label(self) -> str:
        return self.name or f"{self.inner.label}+{self.layer.label}"

    def transmit_array(self, x: np.ndarray, rng: SeededRng) -> np.ndarray:
        return self.layer.decode_array(self.inner.transmit_array(self.layer.encode_array(x), rng))

    def flatten(self) -> "ComposedChannel":
        """One layer over the raw channel, equivalent to the nested composition."""
        layers: List[Layer] = []
        channel: ChannelModel = self
        while isinstance(channel, ComposedChannel):
            layers = list(channel.layer.flat()) + layers
            channel = channel.inner
        return ComposedChannel(inner=channel, layer=StackedLayer(layers=tuple(layers), seed=self.layer.seed),
                               name=self.name)


def compose(ch: ChannelModel, layer: Layer) -> ComposedChannel:
    layer.check(ch.input_alphabet, ch.output_alphabet)
    return ComposedChannel(inner=ch, layer=layer)


# Certificates
class ChannelCertificate(BaseModel):
    """Evidence that a channel (or every member of a set) supports the random channel code.

    Either direct-communication evidence for the source p_c within D_c, which makes every
    rate below R^I_{p_c}(D_c) usable, or a measured reliable rate.
    """

    model_config = ConfigDict(frozen=True)

    channel_ids: Tuple[str, ...]
    p_c: Distribution
    d_c: DistortionSpec
    D_c: float
    evidence: List[DirectCommEvidence] = Field(default_factory=list)
    reliable_rate: Optional[float] = None

    @classmethod
    def from_evidence(cls, evidence: List[DirectCommEvidence], omega: float = 0.1) -> "ChannelCertificate":
        if not evidence:
            raise CertificationError("no direct-communication evidence supplied")
        failing = [e.channel_id for e in evidence if not e.certifies(omega)]
        if failing:
            raise CertificationError(f"channels {failing} exceed excess-distortion {omega} at their largest n")
        first = evidence[0]
        return cls(channel_ids=tuple(e.channel_id for e in evidence), p_c=first.source, d_c=first.distortion,
                   D_c=first.distortion_D, evidence=evidence)

    @classmethod
    def from_reliability(cls, report: ReliabilityReport, p_c: Distribution, d_c: DistortionSpec, D_c: float,
                         delta: float = 0.1) -> "ChannelCertificate":
        largest = max(cell.n for cell in report.cells)
        worst = report.worst_member(largest)
        if worst.max_error_estimate > delta:
            raise CertificationError(f"member {worst.member} has error {worst.max_error_estimate:.3f} > {delta}")
        members = tuple(sorted({cell.member for cell in report.cells}))
        return cls(channel_ids=members, p_c=p_c, d_c=d_c, D_c=D_c, reliable_rate=worst.rate_bits)

    def achievable_rate(self) -> float:
        if self.reliable_rate is not None:
            return self.reliable_rate
        return rate_distortion(self.p_c, self.d_c, self.D_c).rate_bits

    def covers(self, label: str) -> bool:
        return label in self.channel_ids


# Message channels
class NoiselessPipe(BaseModel):
    """Carries any index below 2^{floor(n rate)} unchanged."""

    model_config = ConfigDict(frozen=True)

    rate_bits: float = Field(ge=0)

    @property
    def label(self) -> str:
        return f"pipe({self.rate_bits:g})"

    def carry(self, index: int, n: int, rng: SeededRng) -> Tuple[Optional[int], Optional[np.ndarray]]:
        if index >= 2 ** codebook_log2_size(self.rate_bits, n):
            return None, None
        return index, None


class CodedChannel(BaseModel):
    """Random channel code (codewords i.i.d. p_c, joint-typicality decoding) over a channel."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    channel: ChannelModel
    p_c: Distribution
    d_c: DistortionSpec
    D_c: float
    eps: float = Field(ge=0)
    rate_bits: float = Field(ge=0)

    @property
    def label(self) -> str:
        return self.channel.label

    def send(self, index: int, n: int, rng: SeededRng) -> Tuple[ChannelCodebook, np.ndarray]:
        cb = build_channel_codebook(self.p_c, self.rate_bits, n, rng.derive("codebook"), CodebookRealization.AUTO)
        return cb, cb.codeword_array(index)

    def receive(self, y: np.ndarray, cb: ChannelCodebook, index: int, rng: SeededRng) -> Optional[int]:
        # The ensemble decoder samples the outcome law given the sent index.
        if cb.realization == CodebookRealization.EXPLICIT:
            outcome, _ = jt_decode_array(y, cb, self.eps, self.d_c.array, self.D_c)
        else:
            outcome, _, _ = decode_ensemble(y, cb, index, self.eps, self.d_c, self.D_c,
                                            rng.derive("decode").generator())
        return outcome.index

    def carry(self, index: int, n: int, rng: SeededRng) -> Tuple[Optional[int], np.ndarray]:
        """(decoded index or None on a decoding error, channel input)."""
        cb, x = self.send(index, n, rng)
        y = self.channel.transmit_array(x, rng.derive("channel"))
        return self.receive(y, cb, index, rng), x


MessageChannel = Union[NoiselessPipe, CodedChannel]


def best_constant(p_X: Distribution, d: DistortionSpec) -> int:
    """Reproduction letter minimizing the expected distortion."""
    return int(np.argmin(p_X.array @ d.array))


class SeparationSystem(BaseModel):
    """Source code at rate R_s, index symmetrization, then a message channel.

    A decoding failure, or an index outside the source codebook, yields the constant
    reproduction y*.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    p_X: Distribution
    distortion: DistortionSpec
    distortion_D: float
    source_rate_bits: float = Field(ge=0)
    transport: MessageChannel
    seed: SeededRng
    q_Y: Optional[Distribution] = None

    @model_validator(mode="after")
    def _law_for_positive_rate(self):
        if (self.q_Y is None) != (self.source_rate_bits == 0):
            raise ValueError("a reproduction law q_Y is required exactly when the source rate is positive")
        return self

    @property
    def zero_rate(self) -> bool:
        return self.source_rate_bits == 0

    @property
    def constant_letter(self) -> int:
        return best_constant(self.p_X, self.distortion)

    def source_codebook(self, n: int) -> SourceCodebook:
        return shared_codebook(self.q_Y, self.source_rate_bits, n, self.seed.derive("source_code", n))

    def _symmetrizer(self, n: int) -> Tuple[int, int, int]:
        """(a, b, k): index j travels as (a j + b) mod 2^k with a odd."""
        bits = codebook_log2_size(self.transport.rate_bits, n)
        if bits == 0:
            return 1, 0, 0
        generator = self.seed.derive("symmetrize", n).generator()
        a = 2 * random_index(bits - 1, generator) + 1
        return a, random_index(bits, generator), bits

    def encode_source(self, x: np.ndarray) -> Optional[int]:
        """Symmetrized index to send, or None for a zero-rate system."""
        if self.zero_rate:
            return None
        index, _ = encode_array(x, self.source_codebook(x.size), self.distortion)
        a, b, bits = self._symmetrizer(x.size)
        return (a * index + b) % (1 << bits)

    def decode_source(self, received: Optional[int], n: int) -> np.ndarray:
        constant = np.full(n, self.constant_letter, dtype=np.int64)
        if received is None or self.zero_rate:
            return constant
        a, b, bits = self._symmetrizer(n)
        modulus = 1 << bits
        decoded = (pow(a, -1, modulus) * (received - b)) % modulus if bits else 0
        cb = self.source_codebook(n)
        if decoded >= cb.size:
            return constant
        return cb.codeword_array(decoded)

    def run(self, x: np.ndarray, rng: SeededRng) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """(reproduction, channel input tap) for one source block."""
        sent = self.encode_source(x)
        if sent is None:
            return self.decode_source(None, x.size), None
        received, tap = self.transport.carry(sent, x.size, rng)
        return self.decode_source(received, x.size), tap

    def channel_input_tap(self, n: int, rng: SeededRng) -> Optional[np.ndarray]:
        x = draw_iid(self.p_X.array, n, rng.derive("source").generator())
        _, tap = self.run(x, rng.derive("system"))
        return tap


def source_code_plan(p_X: Distribution, d: DistortionSpec, D: float,
                     rate_margin: float) -> Tuple[float, Optional[Distribution]]:
    """(source rate, reproduction law) of the source code; (0, None) once D >= d_max."""
    if D >= distortion_range(p_X, d).d_max:
        return 0.0, None
    point = rate_distortion(p_X, d, D)
    source_rate = point.rate_bits + rate_margin
    if source_rate <= 0:
        raise PreconditionError("a positive source rate needs a positive rate margin")
    q_y = point.q_y
    return source_rate, Distribution.from_array(d.output_alphabet, q_y / q_y.sum())


def _check_rates(source_rate: float, channel_rate: float, ceiling: Optional[float], enforce: bool) -> None:
    if channel_rate + 1e-12 < source_rate:
        raise PreconditionError(f"channel rate {channel_rate:.4f} is below the source rate {source_rate:.4f}")
    if enforce and ceiling is not None and channel_rate >= ceiling:
        raise PreconditionError(f"channel rate {channel_rate:.4f} is not below the certified rate {ceiling:.4f}")


def separation_architecture(p_X: Distribution, d: DistortionSpec, D: float,
                            medium_ch: Union[ChannelModel, CompoundSet, NoiselessPipe],
                            modems: Optional[Layer] = None, rate_margin: float = 0.1,
                            certificate: Optional[ChannelCertificate] = None, channel_rate: Optional[float] = None,
                            eps: Optional[float] = None, seed: Optional[SeededRng] = None,
                            enforce_rate: bool = True) -> Union[SeparationSystem, List[SeparationSystem]]:
    """Source coding at R^I_X(D) + margin followed by channel coding; one system per set member."""
    if rate_margin < 0:
        raise InvalidArgumentError(f"rate_margin must be nonnegative, got {rate_margin}")
    seed = seed or SeededRng(seed=0)
    eps = settings.DEFAULT_EPS if eps is None else eps

    source_rate, q_y = source_code_plan(p_X, d, D, rate_margin)

    def system(transport: MessageChannel) -> SeparationSystem:
        return SeparationSystem(p_X=p_X, distortion=d, distortion_D=D, source_rate_bits=source_rate,
                                transport=transport, seed=seed, q_Y=q_y)

    if isinstance(medium_ch, NoiselessPipe):
        _check_rates(source_rate, medium_ch.rate_bits, None, enforce_rate)
        return system(medium_ch)

    members = medium_ch.members if isinstance(medium_ch, CompoundSet) else [medium_ch]
    if modems is not None:
        members = [compose(member, modems) for member in members]
    labels = CompoundSet(members=members).labels()

    if certificate is None:
        raise CertificationError("separation over a channel needs a direct-communication or reliable-rate certificate")
    uncovered = [label for label in labels if not certificate.covers(label)]
    if uncovered:
        raise CertificationError(f"no certificate for {uncovered}")

    rate = source_rate if channel_rate is None else channel_rate
    _check_rates(source_rate, rate, certificate.achievable_rate(), enforce_rate)
    logger.info(f"Separation: source rate {source_rate:.4f}, channel rate {rate:.4f} over {labels}")

    systems = [
        system(CodedChannel(channel=member, p_c=certificate.p_c, d_c=certificate.d_c, D_c=certificate.D_c,
                            eps=eps, rate_bits=rate))
        for member in members
    ]
    return systems if isinstance(medium_ch, CompoundSet) else systems[0]


def _end_to_end_batch(task) -> np.ndarray:
    system, p, dm, n, rng, trials = task
    totals = np.empty(len(trials))
    for k, t in enumerate(trials):
        x = draw_iid(p, n, rng.derive(t, "source").generator())
        y, _ = system.run(x, rng.derive(t, "system"))
        totals[k] = dm[x, y].sum()
    return totals


def measure_end_to_end(system: SeparationSystem, p_X: Distribution, d: DistortionSpec, D: float, n: int,
                       trials: int, rng: SeededRng, workers: Optional[int] = None) -> DistortionReport:
    """Excess-distortion probability of X^n -> system -> Y^n."""
    if trials < 1:
        raise InvalidArgumentError(f"trials must be positive, got {trials}")
    tasks = [(system, p_X.array, d.array, n, rng, list(range(s, min(trials, s + _BATCH))))
             for s in range(0, trials, _BATCH)]
    totals = np.concatenate(run_trials(_end_to_end_batch, tasks, workers))
    report = summarize_distortions(totals, n, D, system.source_rate_bits)
    logger.info(f"End-to-end n={n}: excess={report.excess_estimate:.4f}, mean distortion {report.mean_distortion:.4f}")
    return report


# Behavioral interconnection
class DirectSystem(BaseModel):
    """The source fed straight into the channel."""

    model_config = ConfigDict(frozen=True)

    p_X: Distribution

    def channel_input_tap(self, n: int, rng: SeededRng) -> np.ndarray:
        return draw_iid(self.p_X.array, n, rng.derive("source").generator())


class ConstantEncoderSystem(BaseModel):
    """Sends the same letter whatever the message."""

    model_config = ConfigDict(frozen=True)

    letter: int = Field(ge=0)

    def channel_input_tap(self, n: int, rng: SeededRng) -> np.ndarray:
        return np.full(n, self.letter, dtype=np.int64)


class RandomCodeEncoder(BaseModel):
    """Channel encoder of the random code driven by a uniform message."""

    model_config = ConfigDict(frozen=True)

    p_X: Distribution
    rate_bits: float = Field(ge=0)

    def channel_input_tap(self, n: int, rng: SeededRng) -> np.ndarray:
        cb = build_channel_codebook(self.p_X, self.rate_bits, n, rng.derive("codebook"), CodebookRealization.AUTO)
        return cb.codeword_array(random_index(cb.log2_size, rng.derive("message").generator()))


def input_distance(letters: np.ndarray, p: np.ndarray) -> Tuple[float, np.ndarray]:
    empirical = type_counts(letters, p.size) / letters.size
    return float(np.abs(empirical - p).sum()), empirical


def behavioral_check(system, p_X: Distribution, n: int, trials: int, threshold: float,
                     rng: SeededRng) -> BehavioralCheckResult:
    """Empirical channel-input letter distribution against p_X, aggregated over trials."""
    if trials < 1 or n < 1:
        raise InvalidArgumentError("behavioral check needs positive n and trials")
    taps = [system.channel_input_tap(n, rng.derive(t)) for t in range(trials)]
    taps = [tap for tap in taps if tap is not None]
    if not taps:
        raise InvalidArgumentError("system exposes no channel input to check")
    letters = np.concatenate(taps)
    distance, empirical = input_distance(letters, p_X.array)
    passed = distance <= threshold
    logger.info(f"Behavioral check over {letters.size} letters: L1={distance:.4f} (threshold {threshold}) "
                f"{'passed' if passed else 'failed'}")
    return BehavioralCheckResult(distance=distance, threshold=threshold, trials=len(taps), letters=int(letters.size),
                                 empirical=tuple(float(v) for v in empirical), passed=passed)


def behavioral_threshold(alphabet_size: int, n: int, trials: int) -> float:
    """3 sqrt(|X| / (n trials)): the multinomial concentration threshold."""
    return 3.0 * math.sqrt(alphabet_size / (n * trials))


def equivalence_demo(p_X: Distribution, d: DistortionSpec, D: float, p_X2: Distribution, d2: DistortionSpec,
                     D2: float, medium: ChannelModel, n_list: List[int], trials: int, rng: SeededRng,
                     margin: float = 0.05, rate_margin: Optional[float] = None, eps: Optional[float] = None,
                     certificate: Optional[ChannelCertificate] = None, omega: float = 0.1,
                     workers: Optional[int] = None) -> EquivalenceReport:
    """Carry X' within D' over a pipe that communicates X within D, when R^I_{X'}(D') < R^I_X(D)."""
    pipe_rate = rate_distortion(p_X, d, D).rate_bits
    carried_rate = rate_distortion(p_X2, d2, D2).rate_bits
    if margin > 0 and carried_rate >= pipe_rate - margin:
        raise PreconditionError(f"R'={carried_rate:.4f} is not below R={pipe_rate:.4f} by {margin}")
    if margin == 0 and carried_rate > pipe_rate + 1e-9:
        raise PreconditionError(f"R'={carried_rate:.4f} exceeds R={pipe_rate:.4f}")

    if certificate is None:
        evidence = verify_direct_communication(CompoundSet.of(medium), p_X, d, D, n_list,
                                               max(trials, settings.MIN_TRIALS), rng.derive("certify"), workers)
        certificate = ChannelCertificate.from_evidence(evidence, omega)

    channel_rate = 0.5 * (pipe_rate + carried_rate)
    rate_margin = 0.5 * (channel_rate - carried_rate) if rate_margin is None else rate_margin
    if margin == 0:
        channel_rate = max(channel_rate, carried_rate + rate_margin)
    system = separation_architecture(p_X2, d2, D2, medium, rate_margin=rate_margin, certificate=certificate,
                                     channel_rate=channel_rate, eps=eps, seed=rng.derive("system"),
                                     enforce_rate=margin > 0)
    cells = [measure_end_to_end(system, p_X2, d2, D2, n, trials, rng.derive("end_to_end", n), workers)
             for n in n_list]
    return EquivalenceReport(pipe_rate_bits=pipe_rate, carried_rate_bits=carried_rate,
                             channel_rate_bits=channel_rate, cells=cells)
