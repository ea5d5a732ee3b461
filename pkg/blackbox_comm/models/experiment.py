from pydantic import AfterValidator, BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from typing import Annotated, Any, Dict, Iterator, List, Literal, Optional, Tuple, Union
from pathlib import Path
import math

import orjson

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import ConfigSchemaError
from blackbox_comm.models.schemas import CodebookRealization

Matrix = List[List[float]]
LayerName = Literal["identity", "permutation", "scrambler"]
Blocklengths = Annotated[List[Annotated[int, Field(ge=1)]], Field(min_length=1)]


def _enough_trials(trials: int) -> int:
    if trials < settings.MIN_TRIALS:
        raise ValueError(f"at least {settings.MIN_TRIALS} trials are required, got {trials}")
    return trials


# Trial counts fed to the distortion estimators, which refuse fewer than MIN_TRIALS.
EstimatorTrials = Annotated[int, Field(ge=1), AfterValidator(_enough_trials)]

_strict = ConfigDict(extra="forbid")


# Declarations
class DistributionDef(BaseModel):
    model_config = _strict

    alphabet: str
    probs: List[float] = Field(min_length=1)

    @field_validator("probs")
    @classmethod
    def _normalized(cls, probs):
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise ValueError("probabilities must be finite and nonnegative")
        total = math.fsum(probs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total:.12g}, expected 1")
        return probs


class DistortionDef(BaseModel):
    model_config = _strict

    input: str
    output: str
    matrix: Union[Literal["hamming"], Matrix] = "hamming"


# Channels
class DmcDef(BaseModel):
    model_config = _strict

    type: Literal["dmc"]
    input: str
    output: str
    matrix: Matrix


class BscDef(BaseModel):
    model_config = _strict

    type: Literal["bsc"]
    crossover: float = Field(ge=0, le=1)


class IdentityDef(BaseModel):
    model_config = _strict

    type: Literal["identity"]
    alphabet: str


class SlidingWindowDef(BaseModel):
    model_config = _strict

    type: Literal["sliding_window"]
    input: str
    output: str
    kernels: List[Matrix] = Field(min_length=1)
    window: int = Field(ge=1)
    burst_prob: float = Field(ge=0, le=1)


class SwitchDef(BaseModel):
    model_config = _strict

    type: Literal["adversarial_switch"]
    input: str
    output: str
    kernels: List[Matrix] = Field(min_length=1)
    period: int = Field(ge=1)


class SourceCodeDef(BaseModel):
    """Source-code composition channel; ``n_family`` defaults to the experiment's blocklengths."""

    model_config = _strict

    type: Literal["source_code"]
    source: str
    distortion: str
    D: float = Field(ge=0)
    rate_margin: float = Field(gt=0)
    n_family: Optional[List[int]] = None


class ComposedDef(BaseModel):
    model_config = _strict

    type: Literal["composed"]
    inner: str
    layers: List[LayerName] = Field(default_factory=list)


ChannelDef = Annotated[
    Union[DmcDef, BscDef, IdentityDef, SlidingWindowDef, SwitchDef, SourceCodeDef, ComposedDef],
    Field(discriminator="type"),
]


class MediumDef(BaseModel):
    """Parallel media name one DMC channel per pair; shared-noise media use ``crossover``."""

    model_config = _strict

    type: Literal["parallel", "shared_noise"]
    num_users: Optional[int] = Field(default=None, ge=2)
    pairs: List[Tuple[int, int]] = Field(min_length=1)
    channels: List[str] = Field(default_factory=list)
    crossover: float = Field(default=0.0, ge=0, le=1)


# Experiments
class CertifyDef(BaseModel):
    """Direct-communication certification of the channel under a separation stack."""

    model_config = _strict

    source: str
    distortion: str
    D: float = Field(ge=0)
    omega: float = Field(default=0.1, ge=0, le=1)
    trials: EstimatorTrials = 200
    n_list: Optional[Blocklengths] = None


class BehavioralDef(BaseModel):
    model_config = _strict

    n: int = Field(ge=1)
    trials: int = Field(ge=1)
    threshold: float = Field(gt=0)


class RdExperiment(BaseModel):
    model_config = _strict

    kind: Literal["rd"]
    source: str
    distortion: str
    D_grid: List[float] = Field(min_length=1)
    tol: Optional[float] = Field(default=None, gt=0)


class ExponentExperiment(BaseModel):
    model_config = _strict

    kind: Literal["exponent"]
    source: str
    distortion: str
    D: float = Field(ge=0)
    eps_grid: List[Annotated[float, Field(ge=0)]] = Field(min_length=1)
    tol: Optional[float] = Field(default=None, gt=0)
    mutual_information: bool = True


class SourceExperiment(BaseModel):
    """Rate is ``rate`` when given, else R^I_X(D) + ``rate_margin`` (the margin may be negative)."""

    model_config = _strict

    kind: Literal["source"]
    source: str
    distortion: str
    D: float = Field(ge=0)
    rate: Optional[float] = Field(default=None, gt=0)
    rate_margin: float = 0.1
    n_list: Blocklengths
    trials: EstimatorTrials
    realization: CodebookRealization = CodebookRealization.AUTO


class DirectExperiment(BaseModel):
    model_config = _strict

    kind: Literal["direct"]
    channels: List[str] = Field(min_length=1)
    source: str
    distortion: str
    D: float = Field(ge=0)
    n_list: Blocklengths
    trials: EstimatorTrials


class CapacityExperiment(BaseModel):
    model_config = _strict

    kind: Literal["capacity"]
    channels: List[str] = Field(min_length=1)
    tol: Optional[float] = Field(default=None, gt=0)


class ReliabilityExperiment(BaseModel):
    model_config = _strict

    kind: Literal["reliability"]
    channels: List[str] = Field(min_length=1)
    source: str
    distortion: str
    D: float = Field(ge=0)
    eps: Optional[float] = Field(default=None, ge=0)
    rate: float = Field(gt=0)
    n_list: Blocklengths
    messages: int = Field(default=4, ge=1)
    trials: int = Field(ge=1)
    realization: CodebookRealization = CodebookRealization.AUTO
    relaxed: bool = False
    behavioral: Optional[BehavioralDef] = None


class SeparationExperiment(BaseModel):
    model_config = _strict

    kind: Literal["separation"]
    source: str
    distortion: str
    D: float = Field(ge=0)
    channel: Optional[str] = None
    pipe_rate: Optional[float] = Field(default=None, ge=0)
    layers: List[LayerName] = Field(default_factory=list)
    rate_margin: float = Field(default=0.1, ge=0)
    channel_rate: Optional[float] = Field(default=None, gt=0)
    eps: Optional[float] = Field(default=None, ge=0)
    certify: Optional[CertifyDef] = None
    n_list: Blocklengths
    trials: int = Field(ge=1)
    behavioral: Optional[BehavioralDef] = None

    @model_validator(mode="after")
    def _one_transport(self):
        if (self.channel is None) == (self.pipe_rate is None):
            raise ValueError("give exactly one of 'channel' and 'pipe_rate'")
        if self.channel is not None and self.certify is None:
            raise ValueError("a separation over a channel needs a 'certify' block")
        return self


class EquivalenceExperiment(BaseModel):
    model_config = _strict

    kind: Literal["equivalence"]
    source: str
    distortion: str
    D: float = Field(ge=0)
    carried_source: str
    carried_distortion: str
    carried_D: float = Field(ge=0)
    pipe: str
    margin: float = Field(default=0.05, ge=0)
    rate_margin: Optional[float] = Field(default=None, ge=0)
    eps: Optional[float] = Field(default=None, ge=0)
    omega: float = Field(default=0.1, ge=0, le=1)
    n_list: Blocklengths
    trials: int = Field(ge=1)


class SanovInstance(BaseModel):
    model_config = _strict

    D: float = Field(ge=0)
    eps: float = Field(ge=0)
    rate: float = Field(ge=0)
    n: int = Field(ge=1, le=1000)
    y_type: List[float] = Field(min_length=1)


class SanovCheckExperiment(BaseModel):
    model_config = _strict

    kind: Literal["sanov-check"]
    source: str
    distortion: str
    instances: List[SanovInstance] = Field(min_length=1)
    tol: Optional[float] = Field(default=None, gt=0)


class PairDef(BaseModel):
    """One ordered pair; ``rate_fraction`` scales the pair's R^I when ``rate`` is absent."""

    model_config = _strict

    i: int = Field(ge=0)
    j: int = Field(ge=0)
    source: str
    distortion: str
    D: float = Field(ge=0)
    rate: Optional[float] = Field(default=None, ge=0)
    rate_fraction: Optional[float] = Field(default=None, gt=0, lt=1)
    stream: Optional[int] = Field(default=None, ge=0)
    encoder: Literal["random_code", "constant"] = "random_code"
    certify_D: Optional[float] = Field(default=None, ge=0)


class MultiuserExperiment(BaseModel):
    model_config = _strict

    kind: Literal["multiuser"]
    medium: MediumDef
    pairs: List[PairDef] = Field(min_length=1)
    modes: List[Literal["direct", "reliable", "induction", "separation"]] = Field(
        default_factory=lambda: ["direct", "reliable", "induction"], min_length=1
    )
    n_list: Blocklengths
    trials: int = Field(ge=1)
    eps: Optional[float] = Field(default=None, ge=0)
    threshold: float = Field(default=0.03, gt=0)
    induction: Optional[BehavioralDef] = None
    layers: List[LayerName] = Field(default_factory=list)
    rate_margin: float = Field(default=0.1, ge=0)
    certify_trials: EstimatorTrials = 200
    omega: float = Field(default=0.1, ge=0, le=1)


ExperimentParams = Annotated[
    Union[
        RdExperiment, ExponentExperiment, SourceExperiment, DirectExperiment, CapacityExperiment,
        ReliabilityExperiment, SeparationExperiment, EquivalenceExperiment, SanovCheckExperiment,
        MultiuserExperiment,
    ],
    Field(discriminator="kind"),
]

EXPERIMENT_KINDS = (
    "rd", "exponent", "source", "reliability", "separation", "multiuser", "equivalence", "sanov-check",
    "capacity", "direct",
)


class ExperimentConfig(BaseModel):
    """Top-level JSON experiment description; every object is declared once and referenced by name."""

    model_config = _strict

    schema_version: int
    seed: int = Field(default=0, ge=0, lt=2**64)
    output: Optional[str] = None
    alphabets: Dict[str, List[Union[int, str]]] = Field(default_factory=dict)
    distributions: Dict[str, DistributionDef] = Field(default_factory=dict)
    distortions: Dict[str, DistortionDef] = Field(default_factory=dict)
    channels: Dict[str, ChannelDef] = Field(default_factory=dict)
    experiment: ExperimentParams

    @field_validator("schema_version")
    @classmethod
    def _supported_version(cls, version):
        if version != settings.SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {version}, expected {settings.SCHEMA_VERSION}")
        return version

    @property
    def kind(self) -> str:
        return self.experiment.kind


# Reference checking
_REFERENCES = {
    "source": "distributions",
    "carried_source": "distributions",
    "distortion": "distortions",
    "carried_distortion": "distortions",
    "channel": "channels",
    "channels": "channels",
    "pipe": "channels",
    "inner": "channels",
    "alphabet": "alphabets",
    "input": "alphabets",
    "output": "alphabets",
}


def _walk(node: Any, loc: Tuple[Union[str, int], ...]) -> Iterator[Tuple[Tuple[Union[str, int], ...], str, Any]]:
    if isinstance(node, BaseModel):
        for name in type(node).model_fields:
            value = getattr(node, name)
            if name in _REFERENCES:
                yield loc + (name,), name, value
            yield from _walk(value, loc + (name,))
    elif isinstance(node, dict):
        for key, value in node.items():
            yield from _walk(value, loc + (key,))
    elif isinstance(node, list):
        for index, value in enumerate(node):
            yield from _walk(value, loc + (index,))


def _format_loc(loc) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def reference_diagnostics(config: ExperimentConfig) -> List[Tuple[str, str]]:
    """Every name used in the config must be declared in the matching section."""
    declared = {
        "alphabets": config.alphabets, "distributions": config.distributions,
        "distortions": config.distortions, "channels": config.channels,
    }
    diagnostics = []
    sections = {section: getattr(config, section) for section in ("distributions", "distortions", "channels")}
    for section, items in sections.items():
        for loc, name, value in _walk(items, (section,)):
            diagnostics.extend(_check_reference(declared, loc, name, value))
    for loc, name, value in _walk(config.experiment, ("experiment",)):
        diagnostics.extend(_check_reference(declared, loc, name, value))
    return diagnostics


def _check_reference(declared, loc, name, value) -> List[Tuple[str, str]]:
    section = _REFERENCES[name]
    values = value if isinstance(value, list) else [value]
    return [
        (_format_loc(loc), f"undeclared {section[:-1]} '{ref}'")
        for ref in values
        if isinstance(ref, str) and ref not in declared[section]
    ]


def parse_config(raw: bytes, source: Optional[str] = None) -> ExperimentConfig:
    """Parse and schema-check a config; raises ConfigSchemaError with (location, message) diagnostics."""
    try:
        data = orjson.loads(raw)
    except orjson.JSONDecodeError as e:
        raise ConfigSchemaError([(f"line {e.lineno} column {e.colno}", e.msg)], source) from e

    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        diagnostics = [(_format_loc(err["loc"]), err["msg"]) for err in e.errors()]
        raise ConfigSchemaError(diagnostics, source) from e

    diagnostics = reference_diagnostics(config)
    if diagnostics:
        raise ConfigSchemaError(diagnostics, source)
    return config


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigSchemaError([("<file>", str(e))], str(path)) from e
    return parse_config(raw, str(path))
