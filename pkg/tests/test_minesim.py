import hashlib
import math

import numpy as np
import pytest

from poemlab.entropy import ConfigError, FieldSpec, HashValue, ThresholdSpec, intrinsic_weight
from poemlab.minesim import (
    BlockSource,
    Level,
    LevelFocus,
    MinerSpec,
    MiningMode,
    ModeKind,
    NonceSpaceExhausted,
    block_weight,
    classify_level,
    grind_block_hash,
    make_rng,
    next_block_time,
    sample_block_hash,
    sample_block_hashes,
    validate_miners,
)

F8 = FieldSpec(8)


def test_sampled_hash_in_valid_region():
    rng = make_rng(1)
    assert all(sample_block_hash(rng, F8, 3).value < 32 for _ in range(2000))


def test_clamped_weight_is_threshold():
    w = block_weight(HashValue(5), 3, F8, MiningMode(ModeKind.CLAMPED))
    assert float(w) == 3.0
    assert block_weight(HashValue(16), 3, F8, MiningMode()) == intrinsic_weight(HashValue(16), F8)


def test_streams_are_independent_and_reproducible():
    a = make_rng(5, 0).bytes(32)
    assert a == make_rng(5, 0).bytes(32)
    assert a != make_rng(5, 1).bytes(32)
    assert a != make_rng(6, 0).bytes(32)


def test_leading_zero_law():
    # P(n >= j) = 2^-j for uniform h over the full field
    rng = make_rng(11)
    f = FieldSpec(32)
    hs = sample_block_hashes(rng, f, 0, 200_000)
    bitlen = np.floor(np.log2(np.maximum(hs, 1))).astype(int) + 1
    bitlen[hs == 0] = 0
    for j in range(1, 10):
        p = 2.0 ** -j
        frac = float(np.mean(bitlen <= 32 - j))
        assert abs(frac - p) <= 4 * math.sqrt(p * (1 - p) / len(hs))


def test_dominant_fraction():
    rng = make_rng(2)
    t = ThresholdSpec(4, 3)
    f = FieldSpec(24)
    hs = sample_block_hashes(rng, f, t.m_t, 1_000_000)
    frac = float(np.mean(hs < (1 << (24 - 7))))
    p = 2.0 ** -3
    assert abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / len(hs))


def test_rate_doubling_doubles_mean():
    m = MinerSpec("a", 1.0)
    rng = make_rng(3)
    a = np.mean([next_block_time(rng, m, 1024.0, 10) for _ in range(100_000)])
    b = np.mean([next_block_time(rng, m, 1024.0, 11) for _ in range(100_000)])
    assert b / a == pytest.approx(2.0, rel=0.02)


def test_block_times_deterministic():
    m = MinerSpec("a", 0.5)
    r1, r2 = make_rng(9), make_rng(9)
    assert [next_block_time(r1, m, 10.0, 2) for _ in range(50)] == [next_block_time(r2, m, 10.0, 2) for _ in range(50)]


def test_classify_level():
    t = ThresholdSpec(2, 2)
    assert classify_level(HashValue(10), t, F8) is Level.DOMINANT
    assert classify_level(HashValue(40), t, F8) is Level.SUBORDINATE
    with pytest.raises(ValueError):
        classify_level(HashValue(64), t, F8)


def test_grind_contract():
    nonce, h = grind_block_hash(b"x", 0)
    assert nonce == 0
    nonce, h = grind_block_hash(b"x", 8)
    assert h.value < 1 << 248
    digest = hashlib.sha256(b"x" + nonce.to_bytes(8, "little")).digest()
    assert int.from_bytes(digest, "big") == h.value


def test_grind_golden_values():
    assert grind_block_hash(b"poemlab-golden", 12, algorithm="sha256")[0] == 2854
    assert grind_block_hash(b"poemlab-golden", 12, algorithm="sha3_256")[0] == 3307
    assert grind_block_hash(b"poemlab-golden", 12, algorithm="blake2s")[0] == 972


def test_grind_limits():
    with pytest.raises(NonceSpaceExhausted):
        grind_block_hash(b"x", 20, max_nonces=3)
    with pytest.raises(ConfigError):
        grind_block_hash(b"x", 25)


def test_block_source_focus():
    t = ThresholdSpec(2, 2)
    src = BlockSource(FieldSpec(16), t, MiningMode(ModeKind.CLAMPED), make_rng(0))
    d = src.draw(MinerSpec("d", 1.0, focus=LevelFocus.DOMINANT))
    assert d.level is Level.DOMINANT and float(d.n) == 4
    s = src.draw(MinerSpec("s", 1.0, focus=LevelFocus.SUBORDINATE))
    assert s.level is Level.SUBORDINATE and float(s.n) == 2


def test_validate_miners():
    validate_miners([MinerSpec("a", 0.25), MinerSpec("b", 0.75)])
    with pytest.raises(ConfigError):
        validate_miners([MinerSpec("a", 0.5), MinerSpec("b", 0.4)])
    with pytest.raises(ConfigError):
        validate_miners([MinerSpec("a", 0.5), MinerSpec("a", 0.5)])
