import random

import pytest

from poemlab.chaindag import (
    BlockRecord,
    ChainError,
    ChainStore,
    InsertOutcome,
    InvalidBlockError,
    OrphanBlockError,
    Rule,
)
from poemlab.entropy import ONE, FieldSpec, HashValue, IntrinsicWeight, ThresholdSpec, intrinsic_weight
from poemlab.experiments import brute_force_weights, random_dag
from poemlab.minesim import Level

F16 = FieldSpec(16)
T = ThresholdSpec(2, 2)  # subordinate < 2^14, dominant < 2^12
G = HashValue(0)


def sub(h, parent, height):
    return BlockRecord(HashValue(h), parent if isinstance(parent, HashValue) else HashValue(parent),
                       Level.SUBORDINATE, height)


def dom(h, parent, height, tip):
    return BlockRecord(HashValue(h), HashValue(parent), Level.DOMINANT, height, sub_tip_ref=HashValue(tip))


@pytest.fixture
def store():
    return ChainStore(F16, T)


def test_genesis_weight_and_first_child(store):
    assert store.weight_of(G).raw == 0
    assert store.insert_block(sub(5000, G, 1)) is InsertOutcome.NEW_TIP
    assert store.best_tip().best_tip == HashValue(5000)
    assert store.weight_of(HashValue(5000)).raw == store.n_of(HashValue(5000)).raw


def test_smaller_sibling_weight_is_side_branch(store):
    store.insert_block(sub(5000, G, 1))
    assert store.insert_block(sub(9000, G, 1)) is InsertOutcome.SIDE_BRANCH
    assert store.best_tip(Rule.POEM).best_tip == HashValue(5000)


def test_hcr_keeps_first_received_on_tie():
    s = ChainStore(F16, T, rule=Rule.HCR)
    s.insert_block(sub(9000, G, 1))
    assert s.insert_block(sub(5000, G, 1)) is InsertOutcome.SIDE_BRANCH
    assert s.best_tip(Rule.HCR).best_tip == HashValue(9000)
    assert s.best_tip(Rule.POEM).best_tip == HashValue(5000)


def test_weight_recurrence(store):
    store.insert_block(sub(5000, G, 1))
    store.insert_block(sub(7000, 5000, 2))
    expected = store.weight_of(HashValue(5000)).raw + intrinsic_weight(HashValue(7000), F16).raw
    assert store.weight_of(HashValue(7000)).raw == expected


def test_duplicate_is_idempotent(store):
    b = sub(5000, G, 1)
    store.insert_block(b)
    before = store.weight_of(b.id)
    assert store.insert_block(b) is InsertOutcome.DUPLICATE
    assert len(store) == 2
    assert store.weight_of(b.id) == before


def test_conflicting_duplicate_rejected(store):
    store.insert_block(sub(5000, G, 1))
    with pytest.raises(InvalidBlockError):
        store.insert_block(BlockRecord(HashValue(5000), G, Level.SUBORDINATE, 1, miner="other"))


def test_threshold_and_height_checks(store):
    with pytest.raises(InvalidBlockError):
        store.insert_block(sub(1 << 14, G, 1))
    with pytest.raises(InvalidBlockError):
        store.insert_block(dom(5000, 0, 1, 0))  # 5000 >= 2^12
    with pytest.raises(InvalidBlockError):
        store.insert_block(sub(5000, G, 3))


def test_orphan_buffered_then_adopted(store):
    child = sub(7000, 5000, 2)
    with pytest.raises(OrphanBlockError) as exc:
        store.insert_block(child)
    assert exc.value.missing == HashValue(5000)
    assert store.is_buffered(child.id) and store.orphan_count == 1
    store.insert_block(sub(5000, G, 1))
    assert store.last_adopted == [child.id]
    assert child.id in store and store.orphan_count == 0
    assert store.best_tip().best_tip == child.id


def test_reorg_depth(store):
    store.insert_block(sub(9000, G, 1))
    store.insert_block(sub(9100, 9000, 2))
    store.insert_block(sub(9200, 9100, 2 + 1))
    assert store.reorg_depth(HashValue(9100), HashValue(9200)) == 0
    store.insert_block(sub(9300, 9000, 2))
    assert store.reorg_depth(HashValue(9100), HashValue(9300)) == 1
    # withheld dominant built on genesis displacing three subordinates
    store.insert_block(dom(100, 0, 1, 0))
    assert store.reorg_depth(HashValue(9200), HashValue(100)) == 3
    assert store.lowest_common_ancestor(HashValue(9200), HashValue(100)) == G


def test_unknown_id_errors(store):
    with pytest.raises(ChainError):
        store.weight_of(HashValue(1234))


def test_dominant_counts_merge_mined_closure_once(store):
    # lineage: G <- a <- b ; dominant d references G as parent and b as subordinate tip
    store.insert_block(sub(5000, G, 1))
    store.insert_block(sub(6000, 5000, 2))
    store.insert_block(dom(100, 0, 1, 6000))
    want = sum(intrinsic_weight(HashValue(h), F16).raw for h in (5000, 6000, 100))
    assert store.weight_of(HashValue(100)).raw == want
    assert store.weight_of(HashValue(100), Rule.HCR) == 2 * 4 + 16
    assert store.last_dominant(HashValue(100)) == HashValue(100)


def test_off_lineage_dominant_parent_adds_uncovered_blocks(store):
    store.insert_block(sub(5000, G, 1))
    store.insert_block(dom(100, 0, 1, 5000))
    store.insert_block(sub(7000, G, 1))
    store.insert_block(dom(200, 100, 2, 7000))  # dominant parent on another branch
    want = sum(intrinsic_weight(HashValue(h), F16).raw for h in (5000, 100, 7000, 200))
    assert store.weight_of(HashValue(200)).raw == want


def test_random_dag_matches_brute_force_and_is_order_invariant():
    field, t, records = random_dag(1500, seed=3)
    expected = brute_force_weights(field, t, records)
    a = ChainStore(field, t)
    for r in records:
        a.insert_block(r)
    shuffled = records[:]
    random.Random(9).shuffle(shuffled)
    b = ChainStore(field, t)
    for r in shuffled:
        try:
            b.insert_block(r)
        except OrphanBlockError:
            pass
    assert len(b) == len(a) and b.orphan_count == 0
    for r in records:
        assert (a.weight_of(r.id).raw, a.weight_of(r.id, Rule.HCR)) == expected[r.id.value]
        assert b.weight_of(r.id) == a.weight_of(r.id)
    assert a.best_tip(Rule.POEM) == b.best_tip(Rule.POEM)


def test_clamped_weights_are_exact():
    t = ThresholdSpec(20, 5)
    s = ChainStore(FieldSpec(256), t)
    b = BlockRecord(HashValue(77), G, Level.SUBORDINATE, 1, n=IntrinsicWeight.from_bits(20), clamped=True)
    s.insert_block(b)
    assert s.weight_of(b.id).raw == 20 * ONE


def test_trace_rows_written():
    rows = []
    s = ChainStore(F16, T, trace=rows)
    s.insert_block(sub(5000, G, 1))
    s.insert_block(sub(5000, G, 1))
    assert [r["outcome"] for r in rows] == ["new_tip", "duplicate"]
