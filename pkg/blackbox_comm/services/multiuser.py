"""Unicast multi-user harness over a joint medium.

Every ordered pair (i, j) has its own independent source and its own random
stream; all pairs transmit through the medium in the same block.
"""

import itertools
import logging
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import CertificationError, InvalidArgumentError, PreconditionError
from blackbox_comm.core.parallel import run_trials
from blackbox_comm.models.reports import (
    BehavioralCheckResult,
    IndependenceCheckResult,
    InductionReport,
    PairReport,
)
from blackbox_comm.models.schemas import Distribution, DistortionSpec, SeededRng, codebook_log2_size
from blackbox_comm.services.channels import ChannelModel, Medium, MediumChannel, medium_transmit_arrays
from blackbox_comm.services.layering import (
    ChannelCertificate,
    CodedChannel,
    Layer,
    SeparationSystem,
    compose,
    input_distance,
    source_code_plan,
)
from blackbox_comm.services.prob_core import distortion_budget, draw_iid
from blackbox_comm.services.rd_solver import rate_distortion
from blackbox_comm.services.source_code import random_index
from blackbox_comm.utils.stats import clopper_pearson

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]
_BATCH = 32


class PairSpec(BaseModel):
    """Source, distortion target and code rate of one ordered user pair."""

    model_config = ConfigDict(frozen=True)

    i: int = Field(ge=0)
    j: int = Field(ge=0)
    p_X: Distribution
    distortion: DistortionSpec
    distortion_D: float = Field(ge=0)
    rate_bits: Optional[float] = Field(default=None, ge=0)
    stream: Optional[int] = Field(default=None, ge=0)
    encoder: Literal["random_code", "constant"] = "random_code"

    @property
    def pair(self) -> Pair:
        return self.i, self.j

    @property
    def label(self) -> str:
        return f"pair{self.i}-{self.j}"


class UnicastSession(BaseModel):
    """N users, one independent source per ordered pair, and the medium they share."""

    model_config = ConfigDict(frozen=True)

    num_users: int = Field(ge=2)
    pairs: Tuple[PairSpec, ...]
    medium: Medium
    eps: float = Field(default_factory=lambda: settings.DEFAULT_EPS, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.num_users > settings.MAX_USERS:
            raise ValueError(f"at most {settings.MAX_USERS} users are supported")
        if len(self.pairs) > settings.MAX_PAIRS:
            raise ValueError(f"at most {settings.MAX_PAIRS} pairs are supported")
        declared = [spec.pair for spec in self.pairs]
        if sorted(declared) != sorted(self.medium.pairs):
            raise ValueError("session pairs must be exactly the medium's pairs")
        for spec in self.pairs:
            if spec.i == spec.j:
                raise ValueError(f"pair ({spec.i}, {spec.j}) is not a pair of distinct users")
            if max(spec.i, spec.j) >= self.num_users:
                raise ValueError(f"pair ({spec.i}, {spec.j}) refers to a user outside the session")
            if spec.p_X.alphabet != self.medium.input_alphabet(spec.pair):
                raise ValueError(f"source of {spec.label} is not over the medium's input alphabet")
            if spec.distortion.input_alphabet != spec.p_X.alphabet:
                raise ValueError(f"distortion of {spec.label} is not defined on its source alphabet")
            if spec.distortion.output_alphabet != self.medium.output_alphabet(spec.pair):
                raise ValueError(f"distortion of {spec.label} does not match the medium's output alphabet")
        return self

    def stream(self, k: int) -> int:
        spec = self.pairs[k]
        return k if spec.stream is None else spec.stream


def pair_channel(session: UnicastSession, k: int, modem: Optional[Layer] = None) -> ChannelModel:
    """Pair k's view of the medium with every other pair fed its own i.i.d. source."""
    spec = session.pairs[k]
    background = {other.pair: other.p_X for other in session.pairs if other.pair != spec.pair}
    channel = MediumChannel(name=spec.label, medium=session.medium, pair=spec.pair, background=background)
    return channel if modem is None else compose(channel, modem)


def _pair_report(spec: PairSpec, mode: str, n: int, failures: np.ndarray) -> PairReport:
    count, trials = int(failures.sum()), int(failures.size)
    low, high = clopper_pearson(count, trials)
    return PairReport(pair=spec.pair, mode=mode, n=n, trials=trials, estimate=count / trials,
                      ci_low=low, ci_high=high, rate_bits=spec.rate_bits)


def _collect(session: UnicastSession, mode: str, worker, n_list: List[int], trials: int, rng: SeededRng,
             workers: Optional[int], extra=None) -> List[PairReport]:
    reports = []
    for n in n_list:
        tasks = [(session, n, rng.derive(mode, n), list(range(s, min(trials, s + _BATCH))), extra)
                 for s in range(0, trials, _BATCH)]
        failures = np.vstack(run_trials(worker, tasks, workers))
        for k, spec in enumerate(session.pairs):
            report = _pair_report(spec, mode, n, failures[:, k])
            logger.info(f"{mode} {spec.label} n={n}: estimate={report.estimate:.4f} "
                        f"[{report.ci_low:.4f}, {report.ci_high:.4f}]")
            reports.append(report)
    return reports


def _source_streams(session: UnicastSession, rng: SeededRng, n: int, t: int) -> Dict[Pair, np.ndarray]:
    return {
        spec.pair: draw_iid(spec.p_X.array, n, rng.derive("stream", session.stream(k), t, "source").generator())
        for k, spec in enumerate(session.pairs)
    }


def _direct_batch(task) -> np.ndarray:
    session, n, rng, trials, _ = task
    failures = np.zeros((len(trials), len(session.pairs)), dtype=bool)
    for row, t in enumerate(trials):
        inputs = _source_streams(session, rng, n, t)
        outputs = medium_transmit_arrays(session.medium, inputs, rng.derive(t, "medium"))
        for k, spec in enumerate(session.pairs):
            total = spec.distortion.array[inputs[spec.pair], outputs[spec.pair]].sum()
            failures[row, k] = total > distortion_budget(n, spec.distortion_D)
    return failures


def run_direct_multiuser(session: UnicastSession, n_list: List[int], trials: int, rng: SeededRng,
                         workers: Optional[int] = None) -> List[PairReport]:
    """Every pair injects its i.i.d. source into the medium at once; per-pair excess distortion."""
    if trials < 1:
        raise InvalidArgumentError(f"trials must be positive, got {trials}")
    return _collect(session, "direct", _direct_batch, n_list, trials, rng, workers)


def _coded_channels(session: UnicastSession, rates: Dict[Pair, float]) -> List[CodedChannel]:
    return [
        CodedChannel(channel=pair_channel(session, k), p_c=spec.p_X, d_c=spec.distortion, D_c=spec.distortion_D,
                     eps=session.eps, rate_bits=rates[spec.pair])
        for k, spec in enumerate(session.pairs)
    ]


def _channel_inputs(session: UnicastSession, coded: List[CodedChannel], rng: SeededRng, n: int, t: int):
    """Per pair: (codebook, message, channel input); constant encoders send letter 0."""
    sent = {}
    for k, (spec, code) in enumerate(zip(session.pairs, coded)):
        stream = rng.derive("stream", session.stream(k), t)
        if spec.encoder == "constant":
            sent[spec.pair] = (None, 0, np.zeros(n, dtype=np.int64))
            continue
        message = random_index(codebook_log2_size(code.rate_bits, n), stream.derive("message").generator())
        cb, x = code.send(message, n, stream)
        sent[spec.pair] = (cb, message, x)
    return sent


def _reliable_batch(task) -> np.ndarray:
    session, n, rng, trials, coded = task
    failures = np.zeros((len(trials), len(session.pairs)), dtype=bool)
    for row, t in enumerate(trials):
        sent = _channel_inputs(session, coded, rng, n, t)
        outputs = medium_transmit_arrays(session.medium, {pair: s[2] for pair, s in sent.items()},
                                         rng.derive(t, "medium"))
        for k, (spec, code) in enumerate(zip(session.pairs, coded)):
            cb, message, _ = sent[spec.pair]
            if cb is None:
                failures[row, k] = True
                continue
            decoded = code.receive(outputs[spec.pair], cb, message, rng.derive("stream", session.stream(k), t))
            failures[row, k] = decoded != message
    return failures


def _check_rates(session: UnicastSession) -> Dict[Pair, float]:
    rates = {}
    for spec in session.pairs:
        if spec.rate_bits is None:
            raise PreconditionError(f"{spec.label} has no code rate")
        ceiling = rate_distortion(spec.p_X, spec.distortion, spec.distortion_D).rate_bits
        if spec.rate_bits >= ceiling:
            raise PreconditionError(f"{spec.label}: rate {spec.rate_bits:.4f} is not below R^I = {ceiling:.4f}")
        rates[spec.pair] = spec.rate_bits
    return rates


def run_reliable_multiuser(session: UnicastSession, n_list: List[int], trials: int, rng: SeededRng,
                           workers: Optional[int] = None) -> List[PairReport]:
    """Each pair runs its own random channel code; all codewords cross the medium together."""
    if trials < 1:
        raise InvalidArgumentError(f"trials must be positive, got {trials}")
    coded = _coded_channels(session, _check_rates(session))
    return _collect(session, "reliable", _reliable_batch, n_list, trials, rng, workers, extra=coded)


def behavioral_induction_check(session: UnicastSession, n: int, trials: int, threshold: float,
                               rng: SeededRng) -> InductionReport:
    """Channel inputs of every pair match its source, and inputs of different pairs look independent."""
    coded = _coded_channels(session, {spec.pair: spec.rate_bits or 0.0 for spec in session.pairs})
    taps: Dict[Pair, List[np.ndarray]] = {spec.pair: [] for spec in session.pairs}
    for t in range(trials):
        for pair, (_, _, x) in _channel_inputs(session, coded, rng, n, t).items():
            taps[pair].append(x)
    letters = {pair: np.concatenate(chunks) for pair, chunks in taps.items()}

    marginals = {}
    for spec in session.pairs:
        distance, empirical = input_distance(letters[spec.pair], spec.p_X.array)
        marginals[spec.label] = BehavioralCheckResult(
            distance=distance, threshold=threshold, trials=trials, letters=int(letters[spec.pair].size),
            empirical=tuple(float(v) for v in empirical), passed=distance <= threshold,
        )

    independence = []
    for a, b in itertools.combinations(session.pairs, 2):
        xa, xb = letters[a.pair], letters[b.pair]
        joint = np.zeros((a.p_X.size, b.p_X.size))
        np.add.at(joint, (xa, xb), 1.0)
        joint /= xa.size
        # L1 distance to the product of the two source laws.
        distance = float(np.abs(joint - np.outer(a.p_X.array, b.p_X.array)).sum())
        independence.append(IndependenceCheckResult(pair_a=a.pair, pair_b=b.pair, distance=distance,
                                                    threshold=threshold, passed=distance <= threshold))
    report = InductionReport(marginals=marginals, independence=independence)
    logger.info(f"Behavioral induction check over {len(session.pairs)} pairs: "
                f"{'passed' if report.passed else 'failed'}")
    return report


def _separation_batch(task) -> np.ndarray:
    session, n, rng, trials, (systems, modems) = task
    failures = np.zeros((len(trials), len(session.pairs)), dtype=bool)
    for row, t in enumerate(trials):
        sources = _source_streams(session, rng, n, t)
        sent, inputs = {}, {}
        for k, (spec, system) in enumerate(zip(session.pairs, systems)):
            stream = rng.derive("stream", session.stream(k), t)
            index = system.encode_source(sources[spec.pair])
            if index is None:
                # Zero-rate pairs keep the medium terminal busy with i.i.d. channel-source letters.
                x = draw_iid(system.transport.p_c.array, n, stream.derive("dummy").generator())
                sent[spec.pair] = (None, None)
            else:
                cb, x = system.transport.send(index, n, stream)
                sent[spec.pair] = (cb, index)
            inputs[spec.pair] = modems[k].encode_array(x) if modems[k] is not None else x

        outputs = medium_transmit_arrays(session.medium, inputs, rng.derive(t, "medium"))
        for k, (spec, system) in enumerate(zip(session.pairs, systems)):
            cb, index = sent[spec.pair]
            y = outputs[spec.pair]
            y = modems[k].decode_array(y) if modems[k] is not None else y
            received = None
            if cb is not None:
                received = system.transport.receive(y, cb, index, rng.derive("stream", session.stream(k), t))
            reproduction = system.decode_source(received, n)
            total = spec.distortion.array[sources[spec.pair], reproduction].sum()
            failures[row, k] = total > distortion_budget(n, spec.distortion_D)
    return failures


def separation_multiuser(session: UnicastSession, n_list: List[int], trials: int, rng: SeededRng,
                         certificates: Dict[Pair, ChannelCertificate], modems: Optional[Dict[Pair, Layer]] = None,
                         rate_margin: float = 0.1, workers: Optional[int] = None) -> List[PairReport]:
    """Per-pair source code + channel code over the (modem-composed) medium; per-pair excess distortion."""
    modems = modems or {}
    systems: List[SeparationSystem] = []
    for k, spec in enumerate(session.pairs):
        channel = pair_channel(session, k, modems.get(spec.pair))
        certificate = certificates.get(spec.pair)
        if certificate is None or not certificate.covers(channel.label):
            raise CertificationError(f"{channel.label} has no direct-communication certificate")

        source_rate, q_y = source_code_plan(spec.p_X, spec.distortion, spec.distortion_D, rate_margin)
        if source_rate > 0:
            ceiling = certificate.achievable_rate()
            if source_rate >= ceiling:
                raise PreconditionError(f"{spec.label}: source rate {source_rate:.4f} is not below the "
                                        f"certified rate {ceiling:.4f}")
        transport = CodedChannel(channel=channel, p_c=certificate.p_c, d_c=certificate.d_c, D_c=certificate.D_c,
                                 eps=session.eps, rate_bits=source_rate)
        systems.append(SeparationSystem(p_X=spec.p_X, distortion=spec.distortion, distortion_D=spec.distortion_D,
                                        source_rate_bits=source_rate, transport=transport,
                                        seed=rng.derive("separation", session.stream(k)), q_Y=q_y))

    extra = (systems, [modems.get(spec.pair) for spec in session.pairs])
    return _collect(session, "separation", _separation_batch, n_list, trials, rng, workers, extra=extra)
