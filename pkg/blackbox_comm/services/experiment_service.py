"""Turns a validated experiment config into CSV result rows."""

import logging
import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import BlackBoxCommError, ConfigSchemaError, InfeasibleDistortionError, InvalidArgumentError
from blackbox_comm.models.experiment import (
    BehavioralDef,
    BscDef,
    CapacityExperiment,
    ComposedDef,
    DirectExperiment,
    DmcDef,
    EquivalenceExperiment,
    ExperimentConfig,
    ExponentExperiment,
    IdentityDef,
    LayerName,
    MultiuserExperiment,
    RdExperiment,
    ReliabilityExperiment,
    SanovCheckExperiment,
    SeparationExperiment,
    SlidingWindowDef,
    SourceCodeDef,
    SourceExperiment,
    SwitchDef,
)
from blackbox_comm.models.reports import BehavioralCheckResult, DirectCommEvidence, DistortionReport, ResultRow
from blackbox_comm.models.schemas import (
    Alphabet,
    Distribution,
    DistortionSpec,
    MediumKind,
    SeededRng,
    TransitionKernel,
)
from blackbox_comm.services.channel_code import run_reliability, sanov_bound_check
from blackbox_comm.services.channels import (
    AdversarialSwitch,
    ChannelModel,
    CompoundSet,
    DMCChannel,
    Medium,
    SlidingWindowNoise,
    make_source_code_channel,
    verify_direct_communication,
)
from blackbox_comm.services.layering import (
    ChannelCertificate,
    ConstantEncoderSystem,
    IdentityLayer,
    Layer,
    NoiselessPipe,
    PermutationLayer,
    RandomCodeEncoder,
    ScramblerLayer,
    StackedLayer,
    behavioral_check,
    compose,
    equivalence_demo,
    measure_end_to_end,
    separation_architecture,
)
from blackbox_comm.services.multiuser import (
    PairSpec,
    UnicastSession,
    behavioral_induction_check,
    pair_channel,
    run_direct_multiuser,
    run_reliable_multiuser,
    separation_multiuser,
)
from blackbox_comm.services.rd_solver import (
    channel_capacity,
    mutual_information_bound,
    rate_distortion,
    rd_curve,
    sanov_exponent,
)
from blackbox_comm.services.source_code import build_codebook, measure_distortion

logger = logging.getLogger(__name__)


class ConfigResolver:
    """Builds domain objects from the names declared in a config."""

    def __init__(self, config: ExperimentConfig, rng: SeededRng):
        self.config = config
        self.rng = rng
        self._channels: Dict[Tuple[str, Tuple[int, ...]], ChannelModel] = {}

    def alphabet(self, name: str) -> Alphabet:
        return Alphabet(symbols=tuple(self.config.alphabets[name]))

    def distribution(self, name: str) -> Distribution:
        spec = self.config.distributions[name]
        return Distribution(alphabet=self.alphabet(spec.alphabet), probs=tuple(spec.probs))

    def distortion(self, name: str) -> DistortionSpec:
        spec = self.config.distortions[name]
        inputs, outputs = self.alphabet(spec.input), self.alphabet(spec.output)
        if spec.matrix == "hamming":
            if inputs.size != outputs.size:
                raise InvalidArgumentError(f"hamming distortion '{name}' needs alphabets of equal size")
            return DistortionSpec.from_array(inputs, outputs, 1.0 - np.eye(inputs.size))
        return DistortionSpec.from_array(inputs, outputs, spec.matrix)

    def _kernel(self, input_name: str, output_name: str, matrix) -> TransitionKernel:
        return TransitionKernel.from_array(self.alphabet(input_name), self.alphabet(output_name), matrix)

    def layer(self, names: List[LayerName], alphabet_size: int, tag: str) -> Optional[Layer]:
        if not names:
            return None
        seed = self.rng.derive("layers", tag)
        built = []
        for k, name in enumerate(names):
            if name == "permutation":
                built.append(PermutationLayer(seed=seed.derive(k), name=name))
            elif name == "scrambler":
                built.append(ScramblerLayer(seed=seed.derive(k), name=name, alphabet_size=alphabet_size))
            else:
                built.append(IdentityLayer(seed=seed.derive(k), name=name))
        return StackedLayer(layers=tuple(built), seed=seed)

    def channel(self, name: str, n_family: List[int]) -> ChannelModel:
        spec = self.config.channels[name]
        if isinstance(spec, SourceCodeDef) and spec.n_family:
            n_family = spec.n_family
        key = (name, tuple(sorted(set(n_family))))
        if key not in self._channels:
            self._channels[key] = self._build_channel(name, spec, list(key[1]))
        return self._channels[key]

    def _build_channel(self, name: str, spec, n_family: List[int]) -> ChannelModel:
        if isinstance(spec, DmcDef):
            return DMCChannel(kernel=self._kernel(spec.input, spec.output, spec.matrix), name=name)
        if isinstance(spec, BscDef):
            return DMCChannel.bsc(spec.crossover, name=name)
        if isinstance(spec, IdentityDef):
            return DMCChannel.identity(self.alphabet(spec.alphabet), name=name)
        if isinstance(spec, SlidingWindowDef):
            kernels = tuple(self._kernel(spec.input, spec.output, m) for m in spec.kernels)
            return SlidingWindowNoise(kernels=kernels, window=spec.window, burst_prob=spec.burst_prob, name=name)
        if isinstance(spec, SwitchDef):
            kernels = tuple(self._kernel(spec.input, spec.output, m) for m in spec.kernels)
            return AdversarialSwitch(kernels=kernels, period=spec.period, name=name)
        if isinstance(spec, SourceCodeDef):
            return make_source_code_channel(self.distribution(spec.source), self.distortion(spec.distortion), spec.D,
                                            spec.rate_margin, n_family, self.rng.derive("channel", name), name=name)
        if isinstance(spec, ComposedDef):
            inner = self.channel(spec.inner, n_family)
            layer = self.layer(spec.layers, inner.input_alphabet.size, name) or IdentityLayer()
            return compose(inner, layer).model_copy(update={"name": name})
        raise InvalidArgumentError(f"unsupported channel '{name}'")

    def compound(self, names: List[str], n_family: List[int]) -> CompoundSet:
        return CompoundSet(members=[self.channel(name, n_family) for name in names])

    def check(self) -> List[Tuple[str, str]]:
        """Build every declared object that needs no computation; collect failures as diagnostics."""
        diagnostics = []

        def attempt(loc: str, build: Callable[[], object]) -> None:
            try:
                build()
            except ValidationError as e:
                diagnostics.extend((loc, err["msg"]) for err in e.errors())
            except BlackBoxCommError as e:
                diagnostics.append((loc, str(e)))

        for name in self.config.alphabets:
            attempt(f"alphabets.{name}", lambda name=name: self.alphabet(name))
        for name in self.config.distributions:
            attempt(f"distributions.{name}", lambda name=name: self.distribution(name))
        for name in self.config.distortions:
            attempt(f"distortions.{name}", lambda name=name: self.distortion(name))
        for name, spec in self.config.channels.items():
            if isinstance(spec, (DmcDef, BscDef, IdentityDef, SlidingWindowDef, SwitchDef)):
                attempt(f"channels.{name}", lambda name=name, spec=spec: self._build_channel(name, spec, []))
        return diagnostics


def _exact_row(experiment: str, cell: str, value: float, **fields) -> ResultRow:
    return ResultRow(experiment=experiment, cell=cell, estimate=value, ci_low=value, ci_high=value, **fields)


class ExperimentService:
    def __init__(self, config: ExperimentConfig, seed: Optional[int] = None, workers: Optional[int] = None,
                 timing: bool = False):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.workers = settings.WORKERS if workers is None else workers
        self.timing = timing
        self.rng = SeededRng(seed=self.seed).derive(config.kind)
        self.resolver = ConfigResolver(config, self.rng)

    def validate(self) -> None:
        diagnostics = self.resolver.check()
        if diagnostics:
            raise ConfigSchemaError(diagnostics)

    def run(self) -> List[ResultRow]:
        """Run the configured experiment; rows come back in a canonical order."""
        handlers = {
            "rd": self._run_rd,
            "exponent": self._run_exponent,
            "source": self._run_source,
            "direct": self._run_direct,
            "capacity": self._run_capacity,
            "reliability": self._run_reliability,
            "separation": self._run_separation,
            "equivalence": self._run_equivalence,
            "sanov-check": self._run_sanov_check,
            "multiuser": self._run_multiuser,
        }
        kind = self.config.kind
        try:
            self.validate()
            logger.info(f"Running {kind} experiment with seed {self.seed} on {self.workers} worker(s)")
            rows = handlers[kind](self.config.experiment)
            logger.info(f"{kind} experiment produced {len(rows)} rows")
            return rows
        except BlackBoxCommError as e:
            logger.error(f"{kind} experiment failed: {e}")
            raise
        except Exception as e:
            logger.error(f"{kind} experiment crashed: {e}")
            raise

    def _timed(self, fn, *args, **kwargs):
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        return result, (time.perf_counter() - start if self.timing else None)

    # Solvers
    def _run_rd(self, params: RdExperiment) -> List[ResultRow]:
        p, d = self.resolver.distribution(params.source), self.resolver.distortion(params.distortion)
        points, elapsed = self._timed(rd_curve, p, d, params.D_grid, params.tol)
        return [
            _exact_row("rd", f"D={point.distortion_D:g}", point.rate_bits, param=point.distortion_D,
                       wall_time=elapsed,
                       extra={"slope": point.slope_parameter, "achieved_distortion": point.achieved_distortion,
                              "iterations": point.iterations, "output_marginal": list(point.output_marginal)})
            for point in points
        ]

    def _run_exponent(self, params: ExponentExperiment) -> List[ResultRow]:
        p, d = self.resolver.distribution(params.source), self.resolver.distortion(params.distortion)
        try:
            reference = rate_distortion(p, d, params.D, params.tol).rate_bits
        except InfeasibleDistortionError:
            reference = None
        rows = []
        for eps in params.eps_grid:
            result, elapsed = self._timed(sanov_exponent, p, d.output_alphabet, d, params.D, eps, params.tol)
            extra = {"rate_distortion": reference, "feasible": result.feasible}
            if params.mutual_information:
                extra["mutual_information_bound"] = mutual_information_bound(p, d, params.D, eps, params.tol).exponent_bits
            rows.append(_exact_row("exponent", f"eps={eps:g}", result.exponent_bits, param=eps,
                                   wall_time=elapsed, extra=extra))
        return rows

    def _run_capacity(self, params: CapacityExperiment) -> List[ResultRow]:
        rows = []
        for name in params.channels:
            channel = self.resolver.channel(name, [])
            if not isinstance(channel, DMCChannel):
                raise InvalidArgumentError(f"capacity needs a memoryless channel, '{name}' is {channel.kind.value}")
            result, elapsed = self._timed(channel_capacity, channel.kernel, params.tol)
            rows.append(_exact_row("capacity", name, result.capacity_bits, member=name, wall_time=elapsed,
                                   extra={"input_distribution": list(result.input_distribution.probs),
                                          "iterations": result.iterations}))
        return rows

    def _run_sanov_check(self, params: SanovCheckExperiment) -> List[ResultRow]:
        p, d = self.resolver.distribution(params.source), self.resolver.distortion(params.distortion)
        rows = []
        for k, instance in enumerate(params.instances):
            y_type = Distribution.from_array(d.output_alphabet, instance.y_type)
            check, elapsed = self._timed(sanov_bound_check, p, instance.eps, d, instance.D, instance.rate,
                                         instance.n, y_type, params.tol)
            rows.append(_exact_row(
                "sanov-check", f"instance={k}", check.union_probability, n=instance.n, rate=instance.rate,
                param=instance.D, wall_time=elapsed,
                extra={"eps": instance.eps, "e2": check.e2, "bound": check.bound,
                       "exponent_bits": check.exponent_bits, "holds": check.holds},
            ))
        return rows

    # Monte Carlo experiments
    def _distortion_row(self, experiment: str, cell: str, report: DistortionReport, elapsed, member: str = "",
                        param: Optional[float] = None, extra: Optional[dict] = None) -> ResultRow:
        return ResultRow(
            experiment=experiment, cell=cell, member=member, n=report.n, rate=report.rate_bits,
            param=report.distortion_D if param is None else param, estimate=report.excess_estimate,
            ci_low=report.excess_ci_low, ci_high=report.excess_ci_high, trials=report.trials, wall_time=elapsed,
            extra={"mean_distortion": report.mean_distortion, "mean_ci_low": report.mean_ci_low,
                   "mean_ci_high": report.mean_ci_high, **(extra or {})},
        )

    def _evidence_rows(self, experiment: str, evidence: List[DirectCommEvidence], elapsed,
                       prefix: str = "") -> List[ResultRow]:
        return [
            ResultRow(
                experiment=experiment, cell=f"{prefix}{e.channel_id}:n={cell.n}", member=e.channel_id, n=cell.n,
                param=e.distortion_D, estimate=cell.excess_estimate, ci_low=cell.ci_low, ci_high=cell.ci_high,
                trials=cell.trials, wall_time=elapsed,
                extra={"half_width": cell.half_width, "mean_distortion": cell.mean_distortion,
                       "mean_ci_low": cell.mean_ci_low, "mean_ci_high": cell.mean_ci_high},
            )
            for e in evidence for cell in e.cells
        ]

    def _behavioral_row(self, experiment: str, cell: str, result: BehavioralCheckResult, n: int) -> ResultRow:
        return _exact_row(experiment, cell, result.distance, n=n, param=result.threshold, trials=result.trials,
                          extra={"passed": result.passed, "letters": result.letters,
                                 "empirical": list(result.empirical)})

    def _run_source(self, params: SourceExperiment) -> List[ResultRow]:
        p, d = self.resolver.distribution(params.source), self.resolver.distortion(params.distortion)
        point = rate_distortion(p, d, params.D)
        rate = params.rate if params.rate is not None else point.rate_bits + params.rate_margin
        q_y = Distribution.from_array(d.output_alphabet, point.q_y / point.q_y.sum())
        rows = []
        for n in params.n_list:
            cb = build_codebook(q_y, rate, n, self.rng.derive("codebook", n), params.realization)
            report, elapsed = self._timed(measure_distortion, p, cb, d, params.D, params.trials,
                                          self.rng.derive("trials", n), self.workers)
            rows.append(self._distortion_row("source", f"n={n}", report, elapsed,
                                             extra={"realization": cb.realization.value,
                                                    "rate_distortion": point.rate_bits}))
        return rows

    def _run_direct(self, params: DirectExperiment) -> List[ResultRow]:
        p, d = self.resolver.distribution(params.source), self.resolver.distortion(params.distortion)
        channels = self.resolver.compound(params.channels, params.n_list)
        evidence, elapsed = self._timed(verify_direct_communication, channels, p, d, params.D, params.n_list,
                                        params.trials, self.rng, self.workers)
        return self._evidence_rows("direct", evidence, elapsed)

    def _run_reliability(self, params: ReliabilityExperiment) -> List[ResultRow]:
        p, d = self.resolver.distribution(params.source), self.resolver.distortion(params.distortion)
        channels = self.resolver.compound(params.channels, params.n_list)
        eps = settings.DEFAULT_EPS if params.eps is None else params.eps
        report, elapsed = self._timed(run_reliability, channels, p, eps, d, params.D, params.rate, params.n_list,
                                      params.messages, params.trials, self.rng, self.workers, params.realization,
                                      params.relaxed)
        rows = [
            ResultRow(
                experiment="reliability", cell=f"{cell.member}:n={cell.n}", member=cell.member, n=cell.n,
                rate=cell.rate_bits, param=eps, estimate=cell.max_error_estimate, ci_low=cell.max_ci_low,
                ci_high=cell.max_ci_high, trials=cell.messages * cell.trials_per_message, wall_time=elapsed,
                extra={"mean_error": cell.mean_error, "mean_ci_low": cell.mean_ci_low,
                       "mean_ci_high": cell.mean_ci_high, "errors": cell.errors, "e1": cell.e1_count,
                       "e2": cell.e2_count, "messages": cell.messages},
            )
            for cell in report.cells
        ]
        if params.behavioral is not None:
            check = params.behavioral
            encoder = RandomCodeEncoder(p_X=p, rate_bits=params.rate)
            control = ConstantEncoderSystem(letter=0)
            for name, system in (("random_code", encoder), ("constant", control)):
                result = behavioral_check(system, p, check.n, check.trials, check.threshold,
                                          self.rng.derive("behavioral", name))
                rows.append(self._behavioral_row("reliability", f"behavioral:{name}", result, check.n))
        return rows

    def _run_separation(self, params: SeparationExperiment) -> List[ResultRow]:
        p, d = self.resolver.distribution(params.source), self.resolver.distortion(params.distortion)
        seed = self.rng.derive("system")
        rows: List[ResultRow] = []

        if params.pipe_rate is not None:
            system = separation_architecture(p, d, params.D, NoiselessPipe(rate_bits=params.pipe_rate),
                                             rate_margin=params.rate_margin, seed=seed)
            certify_p = None
        else:
            certify = params.certify
            certify_n = certify.n_list or params.n_list
            channel = self.resolver.channel(params.channel, sorted(set(params.n_list) | set(certify_n)))
            modems = self.resolver.layer(params.layers, channel.input_alphabet.size, "separation")
            certified = compose(channel, modems) if modems is not None else channel
            certify_p = self.resolver.distribution(certify.source)
            evidence, elapsed = self._timed(
                verify_direct_communication, CompoundSet.of(certified), certify_p,
                self.resolver.distortion(certify.distortion), certify.D, certify_n, certify.trials,
                self.rng.derive("certify"), self.workers,
            )
            rows.extend(self._evidence_rows("separation", evidence, elapsed, prefix="certify:"))
            certificate = ChannelCertificate.from_evidence(evidence, certify.omega)
            system = separation_architecture(p, d, params.D, channel, modems, params.rate_margin, certificate,
                                             params.channel_rate, params.eps, seed)

        for n in params.n_list:
            report, elapsed = self._timed(measure_end_to_end, system, p, d, params.D, n, params.trials,
                                          self.rng.derive("end_to_end", n), self.workers)
            rows.append(self._distortion_row("separation", f"end_to_end:n={n}", report, elapsed,
                                             extra={"channel_rate": system.transport.rate_bits}))

        if params.behavioral is not None and certify_p is not None:
            check = params.behavioral
            result = behavioral_check(system, certify_p, check.n, check.trials, check.threshold,
                                      self.rng.derive("behavioral"))
            rows.append(self._behavioral_row("separation", "behavioral:separation", result, check.n))
        return rows

    def _run_equivalence(self, params: EquivalenceExperiment) -> List[ResultRow]:
        p, d = self.resolver.distribution(params.source), self.resolver.distortion(params.distortion)
        p2, d2 = self.resolver.distribution(params.carried_source), self.resolver.distortion(params.carried_distortion)
        pipe = self.resolver.channel(params.pipe, params.n_list)
        report, elapsed = self._timed(equivalence_demo, p, d, params.D, p2, d2, params.carried_D, pipe,
                                      params.n_list, params.trials, self.rng, params.margin, params.rate_margin,
                                      params.eps, None, params.omega, self.workers)
        extra = {"pipe_rate": report.pipe_rate_bits, "carried_rate": report.carried_rate_bits}
        return [
            self._distortion_row("equivalence", f"end_to_end:n={cell.n}", cell, elapsed, member=pipe.label,
                                 extra={**extra, "channel_rate": report.channel_rate_bits})
            for cell in report.cells
        ]

    def _medium(self, params: MultiuserExperiment) -> Medium:
        spec = params.medium
        pairs = [tuple(pair) for pair in spec.pairs]
        if spec.type == MediumKind.SHARED_NOISE.value:
            return Medium.shared_noise(pairs, spec.crossover, spec.num_users)
        if len(spec.channels) != len(pairs):
            raise InvalidArgumentError("a parallel medium names one channel per pair")
        kernels = []
        for name in spec.channels:
            channel = self.resolver.channel(name, [])
            if not isinstance(channel, DMCChannel):
                raise InvalidArgumentError(f"parallel media take memoryless channels, '{name}' is not")
            kernels.append(channel.kernel)
        return Medium.parallel(pairs, kernels, spec.num_users)

    def _run_multiuser(self, params: MultiuserExperiment) -> List[ResultRow]:
        medium = self._medium(params)
        specs = []
        for pair in params.pairs:
            p, d = self.resolver.distribution(pair.source), self.resolver.distortion(pair.distortion)
            rate = pair.rate
            if rate is None and pair.rate_fraction is not None:
                rate = pair.rate_fraction * rate_distortion(p, d, pair.D).rate_bits
            specs.append(PairSpec(i=pair.i, j=pair.j, p_X=p, distortion=d, distortion_D=pair.D, rate_bits=rate,
                                  stream=pair.stream, encoder=pair.encoder))
        eps = settings.DEFAULT_EPS if params.eps is None else params.eps
        session = UnicastSession(num_users=medium.num_users, pairs=tuple(specs), medium=medium, eps=eps)

        rows: List[ResultRow] = []
        labels = {spec.pair: spec.label for spec in specs}

        def pair_rows(mode: str, reports, elapsed) -> None:
            for report in reports:
                label = labels[report.pair]
                rows.append(ResultRow(
                    experiment="multiuser", cell=f"{mode}:{label}:n={report.n}", member=label, n=report.n,
                    rate=report.rate_bits, estimate=report.estimate, ci_low=report.ci_low, ci_high=report.ci_high,
                    trials=report.trials, wall_time=elapsed, extra={"mode": mode},
                ))

        for mode in params.modes:
            if mode == "direct":
                reports, elapsed = self._timed(run_direct_multiuser, session, params.n_list, params.trials,
                                               self.rng.derive("direct"), self.workers)
                pair_rows(mode, reports, elapsed)
            elif mode == "reliable":
                reports, elapsed = self._timed(run_reliable_multiuser, session, params.n_list, params.trials,
                                               self.rng.derive("reliable"), self.workers)
                pair_rows(mode, reports, elapsed)
            elif mode == "induction":
                check = params.induction or _default_induction(params)
                report = behavioral_induction_check(session, check.n, check.trials, check.threshold,
                                                    self.rng.derive("induction"))
                for label, result in report.marginals.items():
                    rows.append(self._behavioral_row("multiuser", f"induction:{label}", result, check.n))
                for result in report.independence:
                    a, b = labels[result.pair_a], labels[result.pair_b]
                    rows.append(_exact_row("multiuser", f"independence:{a}:{b}", result.distance, n=check.n,
                                           param=result.threshold, extra={"passed": result.passed}))
            elif mode == "separation":
                rows.extend(self._multiuser_separation(session, params))
        return rows

    def _multiuser_separation(self, session: UnicastSession, params: MultiuserExperiment) -> List[ResultRow]:
        certificates, modems, rows = {}, {}, []
        for k, (spec, pair) in enumerate(zip(session.pairs, params.pairs)):
            modem = self.resolver.layer(params.layers, spec.p_X.size, spec.label)
            if modem is not None:
                modems[spec.pair] = modem
            channel = pair_channel(session, k, modem)
            certify_D = spec.distortion_D if pair.certify_D is None else pair.certify_D
            evidence, elapsed = self._timed(verify_direct_communication, CompoundSet.of(channel), spec.p_X,
                                            spec.distortion, certify_D, params.n_list, params.certify_trials,
                                            self.rng.derive("certify", k), self.workers)
            rows.extend(self._evidence_rows("multiuser", evidence, elapsed, prefix="certify:"))
            certificates[spec.pair] = ChannelCertificate.from_evidence(evidence, params.omega)

        reports, elapsed = self._timed(separation_multiuser, session, params.n_list, params.trials,
                                       self.rng.derive("separation"), certificates, modems, params.rate_margin,
                                       self.workers)
        labels = {spec.pair: spec.label for spec in session.pairs}
        rows.extend(
            ResultRow(experiment="multiuser", cell=f"separation:{labels[r.pair]}:n={r.n}", member=labels[r.pair],
                      n=r.n, rate=r.rate_bits, estimate=r.estimate, ci_low=r.ci_low, ci_high=r.ci_high,
                      trials=r.trials, wall_time=elapsed, extra={"mode": "separation"})
            for r in reports
        )
        return rows


def _default_induction(params: MultiuserExperiment) -> BehavioralDef:
    return BehavioralDef(n=max(params.n_list), trials=params.trials, threshold=params.threshold)
