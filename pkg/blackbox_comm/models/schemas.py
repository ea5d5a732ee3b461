from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator
from typing import Tuple, Union
from enum import Enum
from fractions import Fraction
from functools import reduce
import hashlib
import math

import numpy as np

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import InvalidArgumentError

Symbol = Union[int, str]


# Enums
class ChannelKind(str, Enum):
    DMC = "dmc"
    SLIDING_WINDOW_NOISE = "sliding_window_noise"
    SOURCE_CODE_COMPOSITION = "source_code_composition"
    ADVERSARIAL_SWITCH = "adversarial_switch"
    COMPOSED = "composed"
    MEDIUM_PAIR = "medium_pair"


class MediumKind(str, Enum):
    PARALLEL = "parallel"
    SHARED_NOISE = "shared_noise"


class DecodeStatus(str, Enum):
    MESSAGE = "message"
    ERROR = "error"


class CodebookRealization(str, Enum):
    EXPLICIT = "explicit"
    ENSEMBLE = "ensemble"
    AUTO = "auto"


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


# Finite alphabets and distributions
class Alphabet(BaseModel):
    """Ordered finite set of distinct symbols; index <-> symbol is a bijection."""

    model_config = ConfigDict(frozen=True)

    symbols: Tuple[Symbol, ...]

    @field_validator("symbols")
    @classmethod
    def _distinct(cls, symbols):
        if len(symbols) < 1:
            raise ValueError("alphabet must contain at least one symbol")
        if len(set(symbols)) != len(symbols):
            raise ValueError("alphabet symbols must be distinct")
        return symbols

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: Symbol) -> int:
        return self.symbols.index(symbol)

    @classmethod
    def binary(cls) -> "Alphabet":
        return cls(symbols=(0, 1))

    @classmethod
    def of_size(cls, k: int) -> "Alphabet":
        return cls(symbols=tuple(range(k)))


class Distribution(BaseModel):
    """Probability mass function over a finite alphabet."""

    model_config = ConfigDict(frozen=True)

    alphabet: Alphabet
    probs: Tuple[float, ...]

    _array: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def _normalized(self):
        if len(self.probs) != self.alphabet.size:
            raise ValueError(f"expected {self.alphabet.size} probabilities, got {len(self.probs)}")
        if any(not math.isfinite(p) or p < 0 for p in self.probs):
            raise ValueError("probabilities must be finite and nonnegative")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > settings.PROB_TOLERANCE:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        return self

    def model_post_init(self, __context) -> None:
        self._array = _readonly(np.array(self.probs, dtype=float))

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def size(self) -> int:
        return self.alphabet.size

    def __getitem__(self, index: int) -> float:
        return self.probs[index]

    @classmethod
    def from_array(cls, alphabet: Alphabet, probs) -> "Distribution":
        return cls(alphabet=alphabet, probs=tuple(float(p) for p in np.asarray(probs, dtype=float)))

    @classmethod
    def uniform(cls, alphabet: Alphabet) -> "Distribution":
        return cls.from_array(alphabet, np.full(alphabet.size, 1.0 / alphabet.size))

    @classmethod
    def point_mass(cls, alphabet: Alphabet, index: int) -> "Distribution":
        probs = np.zeros(alphabet.size)
        probs[index] = 1.0
        return cls.from_array(alphabet, probs)

    @classmethod
    def bernoulli(cls, p: float) -> "Distribution":
        """Distribution on {0, 1} with P(1) = p."""
        return cls(alphabet=Alphabet.binary(), probs=(1.0 - p, p))


class JointDistribution(BaseModel):
    """Probability mass function over a product alphabet (rows x columns)."""

    model_config = ConfigDict(frozen=True)

    row_alphabet: Alphabet
    col_alphabet: Alphabet
    probs: Tuple[Tuple[float, ...], ...]

    _array: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def _normalized(self):
        if len(self.probs) != self.row_alphabet.size or any(
            len(row) != self.col_alphabet.size for row in self.probs
        ):
            raise ValueError("joint probability matrix shape does not match its alphabets")
        flat = [p for row in self.probs for p in row]
        if any(not math.isfinite(p) or p < 0 for p in flat):
            raise ValueError("joint probabilities must be finite and nonnegative")
        total = math.fsum(flat)
        if abs(total - 1.0) > settings.PROB_TOLERANCE:
            raise ValueError(f"joint probabilities sum to {total!r}, not 1")
        return self

    def model_post_init(self, __context) -> None:
        self._array = _readonly(np.array(self.probs, dtype=float))

    @property
    def array(self) -> np.ndarray:
        return self._array

    def marginals(self) -> Tuple[Distribution, Distribution]:
        """Exact row and column sums as distributions."""
        rows = self._array.sum(axis=1)
        cols = self._array.sum(axis=0)
        return (
            Distribution.from_array(self.row_alphabet, rows / math.fsum(rows)),
            Distribution.from_array(self.col_alphabet, cols / math.fsum(cols)),
        )

    @classmethod
    def from_array(cls, row_alphabet: Alphabet, col_alphabet: Alphabet, probs) -> "JointDistribution":
        probs = np.asarray(probs, dtype=float)
        return cls(
            row_alphabet=row_alphabet,
            col_alphabet=col_alphabet,
            probs=tuple(tuple(float(p) for p in row) for row in probs),
        )


class Sequence(BaseModel):
    """Length-n word over an alphabet, stored as symbol indices."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alphabet: Alphabet
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_index_array(cls, values):
        array = np.array(values, dtype=np.int64).reshape(-1)
        if array.size < 1:
            raise ValueError("sequence must contain at least one symbol")
        return _readonly(array)

    @model_validator(mode="after")
    def _in_alphabet(self):
        if self.values.min() < 0 or self.values.max() >= self.alphabet.size:
            raise ValueError("sequence contains an index outside its alphabet")
        return self

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sequence):
            return NotImplemented
        return self.alphabet == other.alphabet and np.array_equal(self.values, other.values)

    __hash__ = None

    def concat(self, other: "Sequence") -> "Sequence":
        return Sequence(alphabet=self.alphabet, values=np.concatenate([self.values, other.values]))

    @classmethod
    def of(cls, alphabet: Alphabet, values) -> "Sequence":
        if np.size(values) < 1:
            raise InvalidArgumentError("sequence must contain at least one symbol")
        return cls(alphabet=alphabet, values=values)


class DistortionSpec(BaseModel):
    """Per-letter distortion d(x, y) >= 0; the n-letter extension is additive."""

    model_config = ConfigDict(frozen=True)

    input_alphabet: Alphabet
    output_alphabet: Alphabet
    matrix: Tuple[Tuple[float, ...], ...]

    _array: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def _finite_nonnegative(self):
        if len(self.matrix) != self.input_alphabet.size or any(
            len(row) != self.output_alphabet.size for row in self.matrix
        ):
            raise ValueError("distortion matrix shape does not match its alphabets")
        if any(not math.isfinite(v) or v < 0 for row in self.matrix for v in row):
            raise ValueError("distortion entries must be finite and nonnegative")
        return self

    def model_post_init(self, __context) -> None:
        self._array = _readonly(np.array(self.matrix, dtype=float))

    @property
    def array(self) -> np.ndarray:
        return self._array

    def integer_grid(self, max_denominator: int = 10**6) -> Tuple[np.ndarray, int]:
        """Scale the matrix by the LCM of its denominators: returns (integer matrix, scale).

        Entries must be rationals with denominator <= ``max_denominator``.
        """
        fractions = []
        for value in self._array.ravel():
            frac = Fraction(float(value)).limit_denominator(max_denominator)
            if abs(float(frac) - value) > 1e-12 * max(1.0, abs(value)):
                raise ValueError(f"distortion entry {value!r} is not on a rational grid")
            fractions.append(frac)
        scale = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fractions), 1)
        grid = np.array([int(f * scale) for f in fractions], dtype=np.int64).reshape(self._array.shape)
        return grid, scale

    @classmethod
    def from_array(cls, input_alphabet: Alphabet, output_alphabet: Alphabet, matrix) -> "DistortionSpec":
        matrix = np.asarray(matrix, dtype=float)
        return cls(
            input_alphabet=input_alphabet,
            output_alphabet=output_alphabet,
            matrix=tuple(tuple(float(v) for v in row) for row in matrix),
        )

    @classmethod
    def hamming(cls, alphabet: Alphabet) -> "DistortionSpec":
        return cls.from_array(alphabet, alphabet, 1.0 - np.eye(alphabet.size))


class TransitionKernel(BaseModel):
    """Single-letter channel law W(y|x); each row is a distribution over outputs."""

    model_config = ConfigDict(frozen=True)

    input_alphabet: Alphabet
    output_alphabet: Alphabet
    matrix: Tuple[Tuple[float, ...], ...]

    _array: np.ndarray = PrivateAttr()
    _cumulative: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def _row_stochastic(self):
        if len(self.matrix) != self.input_alphabet.size or any(
            len(row) != self.output_alphabet.size for row in self.matrix
        ):
            raise ValueError("kernel shape does not match its alphabets")
        for x, row in enumerate(self.matrix):
            if any(not math.isfinite(v) or v < 0 for v in row):
                raise ValueError(f"kernel row {x} has a negative or non-finite entry")
            if abs(math.fsum(row) - 1.0) > settings.PROB_TOLERANCE:
                raise ValueError(f"kernel row {x} sums to {math.fsum(row)!r}, not 1")
        return self

    def model_post_init(self, __context) -> None:
        self._array = _readonly(np.array(self.matrix, dtype=float))
        cumulative = np.cumsum(self._array, axis=1)
        cumulative[:, -1] = 1.0
        self._cumulative = _readonly(cumulative)

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def cumulative(self) -> np.ndarray:
        return self._cumulative

    @classmethod
    def from_array(cls, input_alphabet: Alphabet, output_alphabet: Alphabet, matrix) -> "TransitionKernel":
        matrix = np.asarray(matrix, dtype=float)
        return cls(
            input_alphabet=input_alphabet,
            output_alphabet=output_alphabet,
            matrix=tuple(tuple(float(v) for v in row) for row in matrix),
        )

    @classmethod
    def identity(cls, alphabet: Alphabet) -> "TransitionKernel":
        return cls.from_array(alphabet, alphabet, np.eye(alphabet.size))

    @classmethod
    def bsc(cls, crossover: float) -> "TransitionKernel":
        """Binary symmetric channel with the given crossover probability."""
        binary = Alphabet.binary()
        return cls(input_alphabet=binary, output_alphabet=binary,
                   matrix=((1.0 - crossover, crossover), (crossover, 1.0 - crossover)))


def stream_key(key: Union[int, str, bytes]) -> int:
    """Stable nonnegative integer for a stream label."""
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(key)
    data = key.encode() if isinstance(key, str) else bytes(key)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


class SeededRng(BaseModel):
    """Reproducible random stream identified by (seed, stream_id, derivation path)."""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(ge=0, lt=2**64)
    stream_id: int = Field(default=0, ge=0, lt=2**64)
    path: Tuple[int, ...] = ()

    def derive(self, *keys: Union[int, str, bytes]) -> "SeededRng":
        """Child stream; distinct key paths give independent streams."""
        return SeededRng(seed=self.seed, stream_id=self.stream_id,
                         path=self.path + tuple(stream_key(k) for k in keys))

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,) + self.path)
        return np.random.Generator(np.random.PCG64(sequence))


def codebook_log2_size(rate_bits: float, n: int) -> int:
    """floor(nR): a rate-R codebook at blocklength n holds 2**floor(nR) words."""
    if rate_bits < 0 or n < 1:
        raise ValueError("rate must be nonnegative and n positive")
    return int(math.floor(n * rate_bits + 1e-9))
