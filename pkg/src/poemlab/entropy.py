"""Fixed-point entropy arithmetic for the POEM fork-choice rule.

Intrinsic weights are stored as Q9.64 integers (``raw / 2**64`` bits) and
chain weights as Q96.64 integers. Everything in this module is integer
arithmetic, so results are bit-identical on every platform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Tuple, Union

FRAC_BITS = 64
ONE = 1 << FRAC_BITS

# Q9.64 / Q96.64 integer-part widths
WEIGHT_INT_BITS = 9
CHAIN_INT_BITS = 96
_CHAIN_LIMIT = 1 << (CHAIN_INT_BITS + FRAC_BITS)

# working precision for the mantissa during fractional-bit extraction
_MANTISSA_BITS = 128


class ConfigError(ValueError):
    """Invalid field width, threshold, or other configuration value."""


@dataclass(frozen=True)
class FieldSpec:
    """Width ``l`` of the proof-of-work output field, in bits."""

    l: int

    def __post_init__(self) -> None:
        if not isinstance(self.l, int) or not 1 <= self.l <= 256:
            raise ConfigError(f"field width l must be an integer in [1, 256], got {self.l!r}")

    @property
    def size(self) -> int:
        return 1 << self.l


@dataclass(frozen=True, order=True)
class HashValue:
    value: int

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("hash value must be non-negative")

    def check(self, field: FieldSpec) -> None:
        if self.value >= field.size:
            raise ValueError(f"hash value {self.value} does not fit in {field.l} bits")

    def hex(self, field: FieldSpec | None = None) -> str:
        width = (field.l + 3) // 4 if field is not None else 0
        return format(self.value, f"0{width}x")


def _fraction_to_raw(x: Union[int, float, Fraction]) -> int:
    fx = Fraction(x)
    return math.floor(fx * ONE)


@dataclass(frozen=True, order=True)
class IntrinsicWeight:
    """Entropy reduction ``n`` of a single block, Q9.64."""

    raw: int

    def __post_init__(self) -> None:
        if not 0 <= self.raw < (1 << (WEIGHT_INT_BITS + FRAC_BITS)):
            raise OverflowError(f"intrinsic weight raw value {self.raw} outside Q9.64")

    @classmethod
    def from_bits(cls, bits: Union[int, float, Fraction]) -> "IntrinsicWeight":
        return cls(_fraction_to_raw(bits))

    @property
    def bits(self) -> Fraction:
        return Fraction(self.raw, ONE)

    def __float__(self) -> float:
        return self.raw / ONE


@dataclass(frozen=True, order=True)
class ChainWeight:
    """Accumulated ``sum(n_i)`` over an ancestry, Q96.64 (``-log2`` of delta S_k)."""

    raw: int = 0

    def __post_init__(self) -> None:
        if self.raw < 0:
            raise ValueError("chain weight cannot be negative")
        if self.raw >= _CHAIN_LIMIT:
            raise OverflowError("chain weight exceeds Q96.64 range")

    @classmethod
    def from_bits(cls, bits: Union[int, float, Fraction]) -> "ChainWeight":
        return cls(_fraction_to_raw(bits))

    @property
    def bits(self) -> Fraction:
        return Fraction(self.raw, ONE)

    def __float__(self) -> float:
        return self.raw / ONE

    def __add__(self, other: object) -> "ChainWeight":
        if isinstance(other, (IntrinsicWeight, ChainWeight)):
            return ChainWeight(self.raw + other.raw)
        return NotImplemented


GENESIS_WEIGHT = ChainWeight(0)


@dataclass(frozen=True)
class ThresholdSpec:
    """Subordinate threshold ``m_t`` and the extra dominant bits ``m_d``."""

    m_t: int
    m_d: int

    def __post_init__(self) -> None:
        if self.m_t < 1:
            raise ConfigError(f"m_t must be >= 1, got {self.m_t}")
        if self.m_d < 0:
            raise ConfigError(f"m_d must be >= 0, got {self.m_d}")

    @property
    def dominant_bits(self) -> int:
        return self.m_t + self.m_d

    def validate(self, field: FieldSpec) -> None:
        if self.m_t + self.m_d >= field.l:
            raise ConfigError(
                f"m_t + m_d must be < l (got {self.m_t} + {self.m_d} >= {field.l})"
            )


def log2_fixed(value: int) -> int:
    """floor(log2(value) * 2**64) for ``value >= 1``, approximately.

    Integer part from the top set bit; 64 fractional bits by repeated squaring
    of the normalised mantissa held with 128 fractional bits. The result is
    monotone non-decreasing in ``value`` and within a few units of 2**-128 of
    the true floor.
    """
    if value < 1:
        raise ValueError("log2 of a non-positive value")
    top = value.bit_length() - 1
    shift = _MANTISSA_BITS - top
    x = value << shift if shift >= 0 else value >> -shift
    two = 2 << _MANTISSA_BITS
    frac = 0
    for _ in range(FRAC_BITS):
        x = (x * x) >> _MANTISSA_BITS
        frac <<= 1
        if x >= two:
            x >>= 1
            frac |= 1
    return (top << FRAC_BITS) | frac


@lru_cache(maxsize=1 << 16)
def _intrinsic_raw(value: int, l: int) -> int:
    if value <= 1:
        return l << FRAC_BITS
    log_raw = log2_fixed(value)
    if value & (value - 1):
        # log2 of a non-power-of-two is irrational; the ceiling of its
        # fixed-point expansion is floor + 1, so l - log2 truncates downward
        log_raw += 1
    return (l << FRAC_BITS) - log_raw


def intrinsic_weight(h: HashValue, field: FieldSpec) -> IntrinsicWeight:
    """``l - log2(h)`` truncated to Q9.64; exactly ``l`` for h in {0, 1}."""
    h.check(field)
    return IntrinsicWeight(_intrinsic_raw(h.value, field.l))


def delta_entropy_exponent(weights: Iterable[IntrinsicWeight]) -> ChainWeight:
    """Sum of intrinsic weights along a chain: ``-log2(delta S_k)``."""
    return ChainWeight(sum(w.raw for w in weights))


def accumulate(parent: ChainWeight, n: IntrinsicWeight) -> ChainWeight:
    return ChainWeight(parent.raw + n.raw)


def difference_entropy(weight: Union[IntrinsicWeight, ChainWeight]) -> float:
    """``delta S = 2**-n`` as a float, for reporting only."""
    return 2.0 ** (-float(weight))


def compare_poem(a: Tuple[ChainWeight, HashValue], b: Tuple[ChainWeight, HashValue]) -> int:
    """Three-way POEM preference: 1 if ``a`` wins, -1 if ``b`` wins, 0 if identical.

    The larger chain weight (smaller difference entropy) wins; bit-identical
    weights fall back to the smaller tip hash.
    """
    (wa, ha), (wb, hb) = a, b
    if wa.raw != wb.raw:
        return 1 if wa.raw > wb.raw else -1
    if ha.value != hb.value:
        return 1 if ha.value < hb.value else -1
    return 0


def compare_hcr(a: int, b: int) -> int:
    """Three-way heaviest-chain comparison on summed threshold work."""
    return (a > b) - (a < b)


def hcr_block_weight(threshold_bits: int) -> int:
    return 1 << threshold_bits


def meets_threshold(h: HashValue, bits: int, field: FieldSpec) -> bool:
    if not 0 <= bits < field.l:
        raise ConfigError(f"threshold bits must be in [0, {field.l}), got {bits}")
    return h.value < (1 << (field.l - bits))


@dataclass(frozen=True)
class OvertakeBound:
    bound: Fraction
    min_blocks: int


def _least_integer_above(x: Fraction) -> int:
    return math.floor(x) + 1


def overtake_bound_difficulty(t: ThresholdSpec, extra_bits: int = 0) -> OvertakeBound:
    """Subordinate blocks needed to beat one dominant block under threshold weights.

    ``k * 2**m_t > 2**(m_t + m_d + extra)`` reduces to ``k > 2**(m_d + extra)``.
    """
    if extra_bits < 0:
        raise ConfigError("extra_bits must be >= 0")
    bound = Fraction(1 << (t.m_d + extra_bits))
    return OvertakeBound(bound, _least_integer_above(bound))


def overtake_bound_entropy(t: ThresholdSpec, extra_bits: int = 0) -> OvertakeBound:
    """Subordinate blocks needed to beat one dominant block under entropy weights.

    ``k * m_t > m_t + m_d + extra``; ``extra`` counts surplus bits the
    dominant block carries past its threshold.
    """
    if extra_bits < 0:
        raise ConfigError("extra_bits must be >= 0")
    bound = Fraction(t.m_t + t.m_d + extra_bits, t.m_t)
    return OvertakeBound(bound, _least_integer_above(bound))


def tie_probability(field: FieldSpec, threshold_bits: int) -> Fraction:
    """Chance two valid blocks share a hash, hashes uniform below the threshold."""
    if not 0 <= threshold_bits < field.l:
        raise ConfigError(f"threshold bits must be in [0, {field.l}), got {threshold_bits}")
    return Fraction(1, 1 << (field.l - threshold_bits))


def tie_probability_full_field(field: FieldSpec) -> Fraction:
    """The full-field collision figure ``1 / 2**l`` (hashes uniform over all states)."""
    return Fraction(1, field.size)
