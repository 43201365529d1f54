from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import oracle_n
from poemlab.entropy import (
    ONE,
    ChainWeight,
    ConfigError,
    FieldSpec,
    HashValue,
    IntrinsicWeight,
    ThresholdSpec,
    accumulate,
    compare_hcr,
    compare_poem,
    delta_entropy_exponent,
    hcr_block_weight,
    intrinsic_weight,
    log2_fixed,
    meets_threshold,
    overtake_bound_difficulty,
    overtake_bound_entropy,
    tie_probability,
    tie_probability_full_field,
)

EPS60 = mpmath.mpf(2) ** -60


def n(h, l):
    return intrinsic_weight(HashValue(h), FieldSpec(l))


def err(w, exact):
    with mpmath.workprec(300):
        return abs(mpmath.mpf(w.raw) / ONE - exact)


@pytest.mark.parametrize("h,l,expected", [(16, 8, 4), (1, 256, 256), (0, 8, 8), (1, 8, 8), (128, 8, 1)])
def test_exact_values(h, l, expected):
    assert n(h, l).raw == expected * ONE


def test_h3_within_tolerance():
    w = n(3, 8)
    assert float(w) == pytest.approx(6.4150374992788, abs=1e-12)
    assert err(w, oracle_n(3, 8)) <= EPS60


def test_fixed_point_truncates_down():
    with mpmath.workprec(300):
        for h in range(2, 256):
            assert mpmath.mpf(n(h, 8).raw) / ONE <= oracle_n(h, 8)


@pytest.mark.parametrize("l", [8, 16, 64, 256])
def test_random_inputs_match_oracle(l):
    import random

    r = random.Random(l)
    for _ in range(2000):
        h = r.randrange(1, 1 << l)
        assert err(n(h, l), oracle_n(h, l)) <= EPS60


def test_log2_fixed_powers_of_two():
    for k in range(0, 300, 7):
        assert log2_fixed(1 << k) == k * ONE


def test_hash_out_of_field_rejected():
    with pytest.raises(ValueError):
        intrinsic_weight(HashValue(256), FieldSpec(8))
    with pytest.raises(ConfigError):
        FieldSpec(0)
    with pytest.raises(ConfigError):
        FieldSpec(257)


@given(st.integers(min_value=0, max_value=(1 << 64) - 2))
@settings(max_examples=300)
def test_antitone_in_hash(h):
    assert n(h, 64).raw >= n(h + 1, 64).raw


@given(st.integers(min_value=0, max_value=(1 << 256) - 1))
@settings(max_examples=200)
def test_range_within_field(h):
    w = n(h, 256)
    assert 0 <= w.raw <= 256 * ONE


def test_delta_entropy_exponent_examples():
    assert delta_entropy_exponent([]).raw == 0
    assert delta_entropy_exponent([n(16, 8)] * 3).raw == 12 * ONE
    total = delta_entropy_exponent([n(3, 8), n(5, 8)])
    with mpmath.workprec(300):
        exact = oracle_n(3, 8) + oracle_n(5, 8)
        assert abs(mpmath.mpf(total.raw) / ONE - exact) <= mpmath.mpf(2) ** -59


def test_accumulate_examples():
    assert accumulate(ChainWeight(0), IntrinsicWeight.from_bits(4)).raw == 4 * ONE
    got = accumulate(ChainWeight.from_bits(Fraction(25, 2)), IntrinsicWeight.from_bits(Fraction(81, 4)))
    assert got == ChainWeight.from_bits(Fraction(131, 4))


def test_chain_weight_overflow():
    big = ChainWeight((1 << 160) - 1)
    with pytest.raises(OverflowError):
        accumulate(big, IntrinsicWeight.from_bits(1))


def cw(x):
    return ChainWeight.from_bits(Fraction(x))


def test_compare_poem_examples():
    assert compare_poem((cw("40.5"), HashValue(9)), (cw("40.25"), HashValue(5))) == 1
    assert compare_poem((cw("40.5"), HashValue(5)), (cw("40.5"), HashValue(9))) == 1
    assert compare_poem((cw("40.5"), HashValue(9)), (cw("40.5"), HashValue(5))) == -1
    assert compare_poem((cw(3), HashValue(5)), (cw(3), HashValue(5))) == 0


def test_compare_poem_exhaustive_same_parent_l8():
    f = FieldSpec(8)
    parent = cw(7)
    view = [(accumulate(parent, intrinsic_weight(HashValue(h), f)), HashValue(h)) for h in range(256)]
    for a in range(256):
        for b in range(256):
            got = compare_poem(view[a], view[b])
            assert got == (0 if a == b else (1 if a < b else -1))
            assert compare_poem(view[b], view[a]) == -got


def test_compare_hcr_boundary(t_20_5):
    dom = hcr_block_weight(t_20_5.dominant_bits)
    sub = hcr_block_weight(t_20_5.m_t)
    assert compare_hcr(32 * sub, dom) == 0
    assert compare_hcr(33 * sub, dom) == 1
    assert compare_hcr(sub, sub) == 0


@pytest.mark.parametrize("bits,h,ok", [(3, 31, True), (3, 32, False), (0, 255, True)])
def test_meets_threshold(bits, h, ok):
    assert meets_threshold(HashValue(h), bits, FieldSpec(8)) is ok


def test_bounds_examples(t_20_5):
    d = overtake_bound_difficulty(t_20_5)
    assert (d.bound, d.min_blocks) == (32, 33)
    assert overtake_bound_difficulty(ThresholdSpec(20, 0)).min_blocks == 2
    assert overtake_bound_entropy(t_20_5).min_blocks == 2
    e = overtake_bound_entropy(t_20_5, 10)
    assert (e.bound, e.min_blocks) == (Fraction(7, 4), 2)
    z = overtake_bound_entropy(ThresholdSpec(20, 0))
    assert (z.bound, z.min_blocks) == (1, 2)
    assert overtake_bound_entropy(ThresholdSpec(1, 254)).bound == 255


def test_entropy_bound_property_exhaustive_small():
    for m_t in range(1, 31):
        for m_d in range(0, 31):
            for extra in range(0, 6):
                b = overtake_bound_entropy(ThresholdSpec(m_t, m_d), extra)
                assert b.bound == Fraction(m_t + m_d + extra, m_t)
                assert b.min_blocks > b.bound >= b.min_blocks - 1
                assert b.min_blocks >= 2


def test_tie_probability_examples():
    f8 = FieldSpec(8)
    assert tie_probability(f8, 0) == Fraction(1, 256)
    assert tie_probability(f8, 3) == Fraction(1, 32)
    assert tie_probability(FieldSpec(256), 20) == Fraction(1, 1 << 236)
    assert tie_probability_full_field(f8) == Fraction(1, 256)


def test_tie_probability_matches_enumeration():
    f8 = FieldSpec(8)
    valid = range(32)
    ties = sum(1 for a in valid for b in valid if a == b)
    assert tie_probability(f8, 3) == Fraction(ties, len(valid) ** 2)


def test_threshold_validation():
    with pytest.raises(ConfigError):
        ThresholdSpec(0, 1)
    with pytest.raises(ConfigError):
        ThresholdSpec(200, 56).validate(FieldSpec(256))
    ThresholdSpec(200, 55).validate(FieldSpec(256))
