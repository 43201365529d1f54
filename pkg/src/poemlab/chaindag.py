"""Block DAG store for a merge-mined dominant/subordinate pair of chains.

Every block sits in the subordinate lineage: a subordinate block's ``parent``
is the block it extends, and a dominant block (which is also a valid
subordinate output) extends ``sub_tip_ref``. A dominant block's ``parent`` is
the previous dominant block. The weight of a block is the sum of ``n`` over
the union of everything reachable through either link, each block counted
once.
"""
from __future__ import annotations

import enum
import json
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Set, TextIO

from .entropy import (
    ChainWeight,
    FieldSpec,
    HashValue,
    IntrinsicWeight,
    ThresholdSpec,
    compare_hcr,
    compare_poem,
    intrinsic_weight,
    meets_threshold,
)
from .minesim import Level

TRACE_SCHEMA_VERSION = 1
ORPHAN_POOL_CAPACITY = 10_000


class Rule(str, enum.Enum):
    POEM = "poem"
    HCR = "hcr"
    HCR_INTRINSIC = "hcr-intrinsic"


class InsertOutcome(str, enum.Enum):
    NEW_TIP = "new_tip"
    SIDE_BRANCH = "side_branch"
    DUPLICATE = "duplicate"


class ChainError(Exception):
    pass


class InvalidBlockError(ChainError):
    pass


class OrphanBlockError(ChainError):
    """Raised when a block's parent or referenced subordinate tip is unknown.

    The block has been buffered and is connected automatically once the
    missing block is inserted.
    """

    def __init__(self, block_id: HashValue, missing: HashValue):
        super().__init__(f"block {block_id.value:#x} waits for unknown block {missing.value:#x}")
        self.block_id = block_id
        self.missing = missing


@dataclass(frozen=True)
class BlockRecord:
    id: HashValue
    parent: Optional[HashValue]
    level: Level
    height: int
    miner: str = ""
    found_at: float = 0.0
    sub_tip_ref: Optional[HashValue] = None
    n: Optional[IntrinsicWeight] = None  # set in clamped mode, else derived from id
    clamped: bool = False

    @property
    def is_genesis(self) -> bool:
        return self.parent is None

    def lineage_parent(self) -> Optional[HashValue]:
        """The block this one extends in the subordinate chain."""
        if self.level is Level.DOMINANT and self.parent is not None:
            return self.sub_tip_ref
        return self.parent

    def references(self) -> List[HashValue]:
        refs = []
        if self.parent is not None:
            refs.append(self.parent)
        if self.sub_tip_ref is not None and self.sub_tip_ref != self.parent:
            refs.append(self.sub_tip_ref)
        return refs


def make_genesis(field: FieldSpec) -> BlockRecord:
    """Genesis sits at the all-zero id with no parent and zero weight."""
    return BlockRecord(
        id=HashValue(0), parent=None, level=Level.DOMINANT, height=0,
        miner="genesis", n=IntrinsicWeight(0),
    )


@dataclass(frozen=True)
class TipView:
    best_tip: HashValue
    rule: Rule
    weight: object  # ChainWeight for POEM, int otherwise


@dataclass
class _Node:
    record: BlockRecord
    n: IntrinsicWeight
    hcr_unit: int
    work_unit: int
    poem: ChainWeight
    hcr: int
    hcr_intrinsic: int
    lineage_height: int
    seq: int
    last_dominant: int
    children: int = 0


def block_work(record: BlockRecord, field: FieldSpec, threshold_bits: int) -> int:
    """Integer work credited to a block by the intrinsic-difficulty HCR variant."""
    if record.clamped:
        return 1 << threshold_bits
    return field.size // max(record.id.value, 1)


class ChainStore:
    """All blocks known to one node, with per-rule cached weights and tips."""

    def __init__(self, field: FieldSpec, thresholds: ThresholdSpec, rule: Rule = Rule.POEM,
                 genesis: Optional[BlockRecord] = None, trace: Optional[List[dict]] = None):
        thresholds.validate(field)
        self.rule = Rule(rule)
        self.field = field
        self.thresholds = thresholds
        self._nodes: Dict[int, _Node] = {}
        self._orphans: "OrderedDict[int, BlockRecord]" = OrderedDict()
        self._waiting: Dict[int, Set[int]] = {}
        self._seq = 0
        self._tips: Dict[Rule, int] = {}
        self.trace = trace
        self.now = 0.0
        self.last_adopted: List[HashValue] = []
        g = genesis or make_genesis(field)
        node = _Node(g, IntrinsicWeight(0), 0, 0, ChainWeight(0), 0, 0, 0, 0, g.id.value)
        self._nodes[g.id.value] = node
        self.genesis = g
        for rule in Rule:
            self._tips[rule] = g.id.value

    # -- queries -------------------------------------------------------

    def __contains__(self, block_id: HashValue) -> bool:
        return block_id.value in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __iter__(self) -> Iterator[BlockRecord]:
        return (node.record for node in self._nodes.values())

    def get(self, block_id: HashValue) -> BlockRecord:
        return self._node(block_id).record

    def _node(self, block_id: HashValue) -> _Node:
        try:
            return self._nodes[block_id.value]
        except KeyError:
            raise ChainError(f"unknown block {block_id.value:#x}") from None

    def n_of(self, block_id: HashValue) -> IntrinsicWeight:
        return self._node(block_id).n

    def lineage_height(self, block_id: HashValue) -> int:
        return self._node(block_id).lineage_height

    @property
    def orphan_count(self) -> int:
        return len(self._orphans)

    def weight_of(self, block_id: HashValue, rule: Rule = Rule.POEM):
        node = self._node(block_id)
        if rule is Rule.POEM:
            return node.poem
        if rule is Rule.HCR:
            return node.hcr
        return node.hcr_intrinsic

    def best_tip(self, rule: Rule = Rule.POEM) -> TipView:
        tip = self._nodes[self._tips[rule]]
        return TipView(tip.record.id, rule, self.weight_of(tip.record.id, rule))

    def leaves(self) -> List[BlockRecord]:
        return [node.record for node in self._nodes.values() if node.children == 0]

    def leaves_excluding(self, excluded: Set[int]) -> List[BlockRecord]:
        """Leaves of the sub-DAG that remains after dropping ``excluded`` ids."""
        has_child: Set[int] = set()
        for v, node in self._nodes.items():
            if v in excluded:
                continue
            has_child.update(r.value for r in node.record.references())
        return [node.record for v, node in self._nodes.items() if v not in excluded and v not in has_child]

    def is_buffered(self, block_id: HashValue) -> bool:
        return block_id.value in self._orphans

    def last_dominant(self, block_id: HashValue) -> HashValue:
        """Most recent dominant block (or genesis) on the lineage of ``block_id``."""
        return self._nodes[self._node(block_id).last_dominant].record.id

    def prefer(self, a: HashValue, b: HashValue, rule: Rule) -> int:
        """Three-way comparison of two stored blocks under ``rule``.

        HCR variants return 0 on equal weight; callers break such ties by
        arrival order.
        """
        na, nb = self._node(a), self._node(b)
        if rule is Rule.POEM:
            return compare_poem((na.poem, na.record.id), (nb.poem, nb.record.id))
        if rule is Rule.HCR:
            return compare_hcr(na.hcr, nb.hcr)
        return compare_hcr(na.hcr_intrinsic, nb.hcr_intrinsic)

    def lineage(self, block_id: HashValue) -> Iterator[BlockRecord]:
        """Walk the subordinate lineage from ``block_id`` back to genesis."""
        rec: Optional[BlockRecord] = self.get(block_id)
        while rec is not None:
            yield rec
            parent = rec.lineage_parent()
            rec = None if parent is None else self.get(parent)

    def closure(self, block_id: HashValue) -> Set[int]:
        """Ids reachable from ``block_id`` through parent and sub_tip_ref links."""
        seen: Set[int] = set()
        stack = [block_id.value]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(r.value for r in self._nodes[v].record.references())
        return seen

    def lowest_common_ancestor(self, a: HashValue, b: HashValue) -> HashValue:
        na, nb = self._node(a), self._node(b)
        while na.lineage_height > nb.lineage_height:
            na = self._lineage_parent_node(na)
        while nb.lineage_height > na.lineage_height:
            nb = self._lineage_parent_node(nb)
        while na is not nb:
            if na.record.is_genesis or nb.record.is_genesis:
                raise ChainError(f"blocks {a.value:#x} and {b.value:#x} are disconnected")
            na = self._lineage_parent_node(na)
            nb = self._lineage_parent_node(nb)
        return na.record.id

    def _lineage_parent_node(self, node: _Node) -> _Node:
        parent = node.record.lineage_parent()
        if parent is None:
            raise ChainError("walked past genesis")
        return self._nodes[parent.value]

    def reorg_depth(self, old_tip: HashValue, new_tip: HashValue) -> int:
        """Blocks abandoned when switching from ``old_tip`` to ``new_tip``."""
        lca = self.lowest_common_ancestor(old_tip, new_tip)
        return self._node(old_tip).lineage_height - self._node(lca).lineage_height

    def is_ancestor(self, ancestor: HashValue, block_id: HashValue) -> bool:
        """True if ``ancestor`` is on the subordinate lineage of ``block_id`` (or equal)."""
        na, nb = self._node(ancestor), self._node(block_id)
        while nb.lineage_height > na.lineage_height:
            nb = self._lineage_parent_node(nb)
        return nb is na

    # -- insertion ----------------------------------------------------

    def insert_block(self, b: BlockRecord) -> InsertOutcome:
        """Store ``b`` and update every rule's tip.

        Blocks whose parent or referenced subordinate tip is unknown are
        buffered and :class:`OrphanBlockError` is raised; buffered descendants
        of ``b`` are connected right after it (see ``last_adopted``).
        """
        self.last_adopted = []
        existing = self._nodes.get(b.id.value)
        if existing is not None:
            if existing.record != b:
                raise InvalidBlockError(f"conflicting record for id {b.id.value:#x}")
            self._log(b, InsertOutcome.DUPLICATE)
            return InsertOutcome.DUPLICATE
        if b.id.value in self._orphans:
            if self._orphans[b.id.value] != b:
                raise InvalidBlockError(f"conflicting record for id {b.id.value:#x}")
            raise OrphanBlockError(b.id, self._missing(b))
        self._validate(b)
        missing = self._missing(b)
        if missing is not None:
            self._buffer(b, missing)
            raise OrphanBlockError(b.id, missing)
        outcome = self._connect(b)
        self._adopt_children(b.id.value)
        return outcome

    def _missing(self, b: BlockRecord) -> Optional[HashValue]:
        for ref in b.references():
            if ref.value not in self._nodes:
                return ref
        return None

    def _validate(self, b: BlockRecord) -> None:
        if b.parent is None:
            raise InvalidBlockError("only the store's own genesis may lack a parent")
        b.id.check(self.field)
        bits = self.thresholds.dominant_bits if b.level is Level.DOMINANT else self.thresholds.m_t
        if not meets_threshold(b.id, bits, self.field):
            raise InvalidBlockError(f"block {b.id.value:#x} misses its {bits}-bit threshold")
        if b.level is Level.DOMINANT and b.sub_tip_ref is None:
            raise InvalidBlockError("dominant block without sub_tip_ref")
        if b.level is Level.SUBORDINATE and b.sub_tip_ref is not None:
            raise InvalidBlockError("subordinate block carrying a sub_tip_ref")
        if b.clamped and b.n is None:
            raise InvalidBlockError("clamped block without an assigned weight")

    def _check_links(self, b: BlockRecord, lineage_parent: _Node) -> None:
        if b.level is Level.DOMINANT:
            parent = self._nodes[b.parent.value].record
            if parent.level is not Level.DOMINANT:
                raise InvalidBlockError("a dominant block's parent must be dominant or genesis")
            expected = parent.height + 1
        else:
            expected = lineage_parent.lineage_height + 1
        if b.height != expected:
            raise InvalidBlockError(f"block {b.id.value:#x} has height {b.height}, expected {expected}")

    def _buffer(self, b: BlockRecord, missing: HashValue) -> None:
        if len(self._orphans) >= ORPHAN_POOL_CAPACITY:
            old_id, old = self._orphans.popitem(last=False)
            for ref in old.references():
                waiters = self._waiting.get(ref.value)
                if waiters is not None:
                    waiters.discard(old_id)
                    if not waiters:
                        del self._waiting[ref.value]
        self._orphans[b.id.value] = b
        self._waiting.setdefault(missing.value, set()).add(b.id.value)

    def _adopt_children(self, parent_value: int) -> None:
        pending = [parent_value]
        while pending:
            v = pending.pop()
            for child_value in sorted(self._waiting.pop(v, ())):
                child = self._orphans.get(child_value)
                if child is None:
                    continue
                missing = self._missing(child)
                if missing is not None:
                    self._waiting.setdefault(missing.value, set()).add(child_value)
                    continue
                del self._orphans[child_value]
                self._connect(child)
                self.last_adopted.append(child.id)
                pending.append(child_value)

    def _connect(self, b: BlockRecord) -> InsertOutcome:
        level_bits = self.thresholds.dominant_bits if b.level is Level.DOMINANT else self.thresholds.m_t
        n = b.n if b.clamped else intrinsic_weight(b.id, self.field)
        if b.n is not None and not b.clamped and b.n != n:
            raise InvalidBlockError(f"block {b.id.value:#x} carries a weight that does not match its hash")
        hcr_unit = 1 << level_bits
        work_unit = block_work(b, self.field, level_bits)

        lineage_parent = self._nodes[b.lineage_parent().value]
        self._check_links(b, lineage_parent)
        poem, hcr, hcri = lineage_parent.poem.raw + n.raw, lineage_parent.hcr + hcr_unit, lineage_parent.hcr_intrinsic + work_unit
        if b.level is Level.DOMINANT:
            extra = self._uncovered(self._nodes[b.parent.value], lineage_parent)
            for v in extra:
                node = self._nodes[v]
                poem += node.n.raw
                hcr += node.hcr_unit
                hcri += node.work_unit

        self._seq += 1
        last_dom = b.id.value if b.level is Level.DOMINANT else lineage_parent.last_dominant
        node = _Node(b, n, hcr_unit, work_unit, ChainWeight(poem), hcr, hcri,
                     lineage_parent.lineage_height + 1, self._seq, last_dom)
        self._nodes[b.id.value] = node
        for ref in b.references():
            self._nodes[ref.value].children += 1

        outcome = InsertOutcome.SIDE_BRANCH
        for rule in Rule:
            if self._beats(node, self._nodes[self._tips[rule]], rule):
                self._tips[rule] = b.id.value
        if self._tips[self.rule] == b.id.value:
            outcome = InsertOutcome.NEW_TIP
        self._log(b, outcome)
        return outcome

    def _beats(self, node: _Node, tip: _Node, rule: Rule) -> bool:
        if rule is Rule.POEM:
            return compare_poem((node.poem, node.record.id), (tip.poem, tip.record.id)) > 0
        if rule is Rule.HCR:
            return node.hcr > tip.hcr
        return node.hcr_intrinsic > tip.hcr_intrinsic

    def _uncovered(self, dom_parent: _Node, lineage_parent: _Node) -> Set[int]:
        """Blocks reachable from ``dom_parent`` that ``lineage_parent`` does not already cover."""
        if self.is_ancestor(dom_parent.record.id, lineage_parent.record.id):
            return set()
        covered = self.closure(lineage_parent.record.id)
        extra: Set[int] = set()
        stack = [dom_parent.record.id.value]
        while stack:
            v = stack.pop()
            if v in covered or v in extra:
                continue
            extra.add(v)
            stack.extend(r.value for r in self._nodes[v].record.references())
        return extra

    def _log(self, b: BlockRecord, outcome: InsertOutcome) -> None:
        if self.trace is not None:
            self.trace.append(insertion_record(self, self._nodes[b.id.value], outcome))


def insertion_record(store: ChainStore, node: _Node, outcome: InsertOutcome) -> dict:
    """One JSON-ready trace row; key order is fixed."""
    b = node.record
    return {
        "time": store.now,
        "id": format(b.id.value, "x"),
        "parent": None if b.parent is None else format(b.parent.value, "x"),
        "sub_tip_ref": None if b.sub_tip_ref is None else format(b.sub_tip_ref.value, "x"),
        "level": b.level.value,
        "n_raw": node.n.raw,
        "poem_raw": node.poem.raw,
        "hcr": str(node.hcr),
        "hcr_intrinsic": str(node.hcr_intrinsic),
        "outcome": outcome.value,
    }


def write_jsonl(rows: Iterable[dict], fh: TextIO) -> None:
    for row in rows:
        fh.write(json.dumps(row, separators=(",", ":")))
        fh.write("\n")
