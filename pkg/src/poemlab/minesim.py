"""Stochastic block discovery: hash values, levels, inter-arrival times."""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .entropy import (
    ChainWeight,
    ConfigError,
    FieldSpec,
    HashValue,
    IntrinsicWeight,
    ThresholdSpec,
    intrinsic_weight,
    meets_threshold,
)

RNG_NAME = "philox4x64"


class Level(str, enum.Enum):
    DOMINANT = "dominant"
    SUBORDINATE = "subordinate"


class ModeKind(str, enum.Enum):
    SAMPLED = "sampled"
    CLAMPED = "clamped"
    GRIND = "grind"


GRIND_ALGORITHMS = ("sha256", "sha3_256", "blake2s")


@dataclass(frozen=True)
class MiningMode:
    kind: ModeKind = ModeKind.SAMPLED
    algorithm: str = "sha256"

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ModeKind(self.kind))
        if self.kind is ModeKind.GRIND and self.algorithm not in GRIND_ALGORITHMS:
            raise ConfigError(f"unknown grind algorithm {self.algorithm!r}")

    @property
    def clamped(self) -> bool:
        return self.kind is ModeKind.CLAMPED


# Miner strategies

@dataclass(frozen=True)
class Honest:
    pass


@dataclass(frozen=True)
class WithholdDominant:
    """Withhold each dominant block until ``reveal_after`` honest subordinate blocks
    have been found on top of the block it extends."""

    reveal_after: int

    def __post_init__(self) -> None:
        if self.reveal_after < 0:
            raise ConfigError("reveal_after must be >= 0")


@dataclass(frozen=True)
class PrivateChain:
    """Mine a private branch and publish once it leads by ``reveal_margin`` bits."""

    reveal_margin: ChainWeight = field(default_factory=ChainWeight)


Strategy = Union[Honest, WithholdDominant, PrivateChain]


class LevelFocus(str, enum.Enum):
    """Which thresholds a miner hashes against."""

    MERGED = "merged"  # one stream serving both levels
    SUBORDINATE = "subordinate"  # every output is filed as a subordinate block
    DOMINANT = "dominant"  # only dominant-threshold outputs are kept


@dataclass(frozen=True)
class MinerSpec:
    id: str
    hashrate_fraction: float
    strategy: Strategy = field(default_factory=Honest)
    focus: LevelFocus = LevelFocus.MERGED

    def __post_init__(self) -> None:
        object.__setattr__(self, "focus", LevelFocus(self.focus))
        if not 0.0 < self.hashrate_fraction <= 1.0:
            raise ConfigError(
                f"miner {self.id!r}: hashrate_fraction must be in (0, 1], got {self.hashrate_fraction}"
            )

    @property
    def honest(self) -> bool:
        return isinstance(self.strategy, Honest)


def validate_miners(miners: Sequence[MinerSpec]) -> None:
    if not miners:
        raise ConfigError("at least one miner is required")
    total = math.fsum(m.hashrate_fraction for m in miners)
    if abs(total - 1.0) > 1e-12:
        raise ConfigError(f"miners: hashrate fractions must sum to 1, got {total!r}")
    ids = [m.id for m in miners]
    if len(set(ids)) != len(ids):
        raise ConfigError("miners: duplicate miner id")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(ss))


def uniform_bits(rng: np.random.Generator, bits: int) -> int:
    """Uniform integer in [0, 2**bits)."""
    if bits <= 0:
        return 0
    nbytes = (bits + 7) // 8
    raw = int.from_bytes(rng.bytes(nbytes), "big")
    return raw >> (nbytes * 8 - bits)


def sample_block_hash(rng: np.random.Generator, field: FieldSpec, threshold_bits: int) -> HashValue:
    """Uniform draw over the valid region [0, 2**(l - threshold_bits))."""
    if not 0 <= threshold_bits < field.l:
        raise ConfigError(f"threshold_bits must be in [0, {field.l})")
    return HashValue(uniform_bits(rng, field.l - threshold_bits))


def sample_block_hashes(
    rng: np.random.Generator, field: FieldSpec, threshold_bits: int, size: int
) -> np.ndarray:
    """Vectorised :func:`sample_block_hash` for valid regions up to 63 bits wide."""
    width = field.l - threshold_bits
    if not 0 < width <= 63:
        raise ConfigError("vectorised sampling needs 1 <= l - threshold_bits <= 63")
    return rng.integers(0, 1 << width, size=size, dtype=np.int64)


def block_weight(
    h: HashValue, threshold_bits: int, field: FieldSpec, mode: MiningMode
) -> IntrinsicWeight:
    """The n credited to a block: its intrinsic weight, or exactly its threshold when clamped."""
    if mode.clamped:
        return IntrinsicWeight.from_bits(threshold_bits)
    return intrinsic_weight(h, field)


def next_block_time(
    rng: np.random.Generator, miner: MinerSpec, network_rate: float, threshold_bits: int
) -> float:
    """Exponential waiting time; ``network_rate`` is total hashes per time unit."""
    if network_rate <= 0:
        raise ConfigError("network_rate must be positive")
    rate = miner.hashrate_fraction * network_rate * 2.0 ** (-threshold_bits)
    return float(rng.exponential(1.0 / rate))


def classify_level(h: HashValue, t: ThresholdSpec, field: FieldSpec) -> Level:
    if not meets_threshold(h, t.m_t, field):
        raise ValueError(f"hash {h.value:#x} does not meet the subordinate threshold")
    if meets_threshold(h, t.dominant_bits, field):
        return Level.DOMINANT
    return Level.SUBORDINATE


class NonceSpaceExhausted(RuntimeError):
    pass


def digest_bits(algorithm: str) -> int:
    return hashlib.new(algorithm).digest_size * 8


def grind_block_hash(
    prefix: bytes,
    threshold_bits: int,
    *,
    start_nonce: int = 0,
    max_nonces: int = 1 << 32,
    algorithm: str = "sha256",
) -> tuple[int, HashValue]:
    """Search nonces from ``start_nonce`` until the digest clears the threshold.

    The preimage is ``prefix || nonce`` with the nonce as 8 little-endian bytes;
    the digest is read as a big-endian integer. Returns ``(nonce, hash)``.
    """
    if threshold_bits > 24:
        raise ConfigError("grind mode is limited to thresholds of at most 24 bits")
    width = digest_bits(algorithm)
    target = 1 << (width - threshold_bits)
    base = hashlib.new(algorithm, prefix)
    for nonce in range(start_nonce, start_nonce + max_nonces):
        h = base.copy()
        h.update(nonce.to_bytes(8, "little"))
        value = int.from_bytes(h.digest(), "big")
        if value < target:
            return nonce, HashValue(value)
    raise NonceSpaceExhausted(f"no nonce in [{start_nonce}, {start_nonce + max_nonces}) met {threshold_bits} bits")


@dataclass
class BlockDraw:
    """One mining outcome before it is wired into a chain."""

    hash: HashValue
    level: Level
    n: IntrinsicWeight
    threshold_bits: int


class BlockSource:
    """Produces block hashes for one run under a given mining mode."""

    def __init__(self, field: FieldSpec, thresholds: ThresholdSpec, mode: MiningMode, rng: np.random.Generator):
        thresholds.validate(field)
        if mode.kind is ModeKind.GRIND and field.l != digest_bits(mode.algorithm):
            raise ConfigError(f"field_bits must be {digest_bits(mode.algorithm)} for {mode.algorithm}")
        self.field = field
        self.thresholds = thresholds
        self.mode = mode
        self.rng = rng
        self._salt = rng.bytes(16)
        self._counter = 0

    def rate_bits(self, miner: MinerSpec) -> int:
        """Threshold that sets the miner's discovery rate."""
        if miner.focus is LevelFocus.DOMINANT:
            return self.thresholds.dominant_bits
        return self.thresholds.m_t

    def draw(self, miner: MinerSpec, preimage: bytes = b"") -> BlockDraw:
        bits = self.rate_bits(miner)
        if self.mode.kind is ModeKind.GRIND:
            prefix = self._salt + self._counter.to_bytes(8, "big") + preimage
            self._counter += 1
            _, h = grind_block_hash(prefix, bits, algorithm=self.mode.algorithm)
        else:
            h = sample_block_hash(self.rng, self.field, bits)
        level = classify_level(h, self.thresholds, self.field)
        if miner.focus is LevelFocus.SUBORDINATE:
            level = Level.SUBORDINATE
        level_bits = self.thresholds.dominant_bits if level is Level.DOMINANT else self.thresholds.m_t
        return BlockDraw(h, level, block_weight(h, level_bits, self.field, self.mode), level_bits)
