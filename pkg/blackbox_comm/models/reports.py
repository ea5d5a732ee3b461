from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Any, Dict, List, Optional, Tuple
import math

import numpy as np

from blackbox_comm.models.schemas import DecodeStatus, Distribution, DistortionSpec, JointDistribution

_frozen = ConfigDict(frozen=True)


# Solver results
class RdPoint(BaseModel):
    """One point of R^I_X(D) with the test channel that achieves it."""

    model_config = _frozen

    distortion_D: float
    rate_bits: float = Field(ge=0)
    optimal_test_channel: Tuple[Tuple[float, ...], ...]
    slope_parameter: float = Field(ge=0)
    achieved_distortion: float
    output_marginal: Tuple[float, ...]
    iterations: int = 0

    @property
    def test_channel(self) -> np.ndarray:
        return np.array(self.optimal_test_channel)

    @property
    def q_y(self) -> np.ndarray:
        return np.array(self.output_marginal)


class ExponentResult(BaseModel):
    """inf over the constraint set of D(q_ZY || p_X q_Y); +inf when the set is empty."""

    model_config = _frozen

    exponent_bits: float = Field(ge=0)
    minimizer_qZY: Optional[JointDistribution] = None
    epsilon: float
    distortion_D: float

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.exponent_bits)


class DistortionRange(BaseModel):
    model_config = _frozen

    d_min: float = Field(ge=0)
    d_max: float = Field(ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.d_min > self.d_max + 1e-12:
            raise ValueError("d_min must not exceed d_max")
        return self


class CapacityResult(BaseModel):
    model_config = _frozen

    capacity_bits: float = Field(ge=0)
    input_distribution: Distribution
    iterations: int


# Monte Carlo reports
class DirectCommCell(BaseModel):
    model_config = _frozen

    n: int
    trials: int
    excess_estimate: float = Field(ge=0, le=1)
    ci_low: float
    ci_high: float
    half_width: float
    mean_distortion: float
    mean_ci_low: float
    mean_ci_high: float


class DirectCommEvidence(BaseModel):
    """Excess-distortion estimates of one channel for an i.i.d. source, per blocklength."""

    model_config = _frozen

    channel_id: str
    source: Distribution
    distortion: DistortionSpec
    distortion_D: float
    cells: List[DirectCommCell]

    @property
    def blocklengths(self) -> List[int]:
        return [cell.n for cell in self.cells]

    def at(self, n: int) -> DirectCommCell:
        for cell in self.cells:
            if cell.n == n:
                return cell
        raise KeyError(n)

    def certifies(self, omega: float) -> bool:
        """True when the estimate at the largest tested blocklength is at most omega."""
        return max(self.cells, key=lambda c: c.n).excess_estimate <= omega


class DistortionReport(BaseModel):
    model_config = _frozen

    n: int
    trials: int
    distortion_D: float
    excess_estimate: float = Field(ge=0, le=1)
    excess_ci_low: float
    excess_ci_high: float
    mean_distortion: float
    mean_ci_low: float
    mean_ci_high: float
    rate_bits: Optional[float] = None


class DecodeOutcome(BaseModel):
    """Message(index) iff exactly one jointly typical codeword was found."""

    model_config = _frozen

    status: DecodeStatus
    index: Optional[int] = None
    candidates: int = Field(ge=0)
    candidates_capped: bool = False

    @model_validator(mode="after")
    def _consistent(self):
        if (self.status == DecodeStatus.MESSAGE) != (self.index is not None):
            raise ValueError("a message outcome carries an index and an error outcome does not")
        if self.status == DecodeStatus.MESSAGE and self.candidates != 1:
            raise ValueError("a message outcome needs exactly one candidate")
        return self

    @classmethod
    def message(cls, index: int) -> "DecodeOutcome":
        return cls(status=DecodeStatus.MESSAGE, index=index, candidates=1)

    @classmethod
    def error(cls, candidates: int, capped: bool = False) -> "DecodeOutcome":
        return cls(status=DecodeStatus.ERROR, candidates=candidates, candidates_capped=capped)

    @property
    def is_message(self) -> bool:
        return self.status == DecodeStatus.MESSAGE


class ReliabilityCell(BaseModel):
    model_config = _frozen

    member: str
    n: int
    rate_bits: float
    messages: int
    trials_per_message: int
    max_error_estimate: float = Field(ge=0, le=1)
    max_ci_low: float
    max_ci_high: float
    mean_error: float = Field(ge=0, le=1)
    mean_ci_low: float
    mean_ci_high: float
    errors: int
    e1_count: int
    e2_count: int

    @model_validator(mode="after")
    def _accounting(self):
        if self.e1_count + self.e2_count < self.errors:
            raise ValueError("every error must be covered by an E1 or E2 event")
        return self


class ReliabilityReport(BaseModel):
    model_config = _frozen

    cells: List[ReliabilityCell]

    def for_member(self, member: str) -> List[ReliabilityCell]:
        return sorted((c for c in self.cells if c.member == member), key=lambda c: c.n)

    def worst_member(self, n: int) -> ReliabilityCell:
        return max((c for c in self.cells if c.n == n), key=lambda c: c.max_error_estimate)


class BehavioralCheckResult(BaseModel):
    model_config = _frozen

    distance: float = Field(ge=0)
    threshold: float
    trials: int
    letters: int
    empirical: Tuple[float, ...]
    passed: bool


class IndependenceCheckResult(BaseModel):
    model_config = _frozen

    pair_a: Tuple[int, int]
    pair_b: Tuple[int, int]
    distance: float = Field(ge=0)
    threshold: float
    passed: bool


class PairReport(BaseModel):
    """Per-pair estimate: block error (reliable mode) or excess distortion (distortion modes)."""

    model_config = _frozen

    pair: Tuple[int, int]
    mode: str
    n: int
    trials: int
    estimate: float = Field(ge=0, le=1)
    ci_low: float
    ci_high: float
    rate_bits: Optional[float] = None


class InductionReport(BaseModel):
    model_config = _frozen

    marginals: Dict[str, BehavioralCheckResult]
    independence: List[IndependenceCheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.marginals.values()) and all(r.passed for r in self.independence)


class EquivalenceReport(BaseModel):
    model_config = _frozen

    pipe_rate_bits: float
    carried_rate_bits: float
    channel_rate_bits: float
    cells: List[DistortionReport]


class SanovCheck(BaseModel):
    model_config = _frozen

    n: int
    rate_bits: float
    e2: float
    union_probability: float
    exponent_bits: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.union_probability > 1.0 or self.union_probability <= self.bound * (1 + 1e-9)


# CSV rows
class ResultRow(BaseModel):
    """One CSV row; ``extra`` is serialized as sorted-key JSON."""

    experiment: str
    cell: str
    member: str = ""
    n: Optional[int] = None
    rate: Optional[float] = None
    param: Optional[float] = None
    estimate: float
    ci_low: float
    ci_high: float
    trials: Optional[int] = None
    extra: Dict[str, Any] = Field(default_factory=dict)
    wall_time: Optional[float] = None

    @model_validator(mode="after")
    def _ci_contains_estimate(self):
        if math.isfinite(self.estimate) and not (self.ci_low - 1e-12 <= self.estimate <= self.ci_high + 1e-12):
            raise ValueError(f"row {self.cell}: interval does not contain the estimate")
        return self
