"""Trace post-processing: orphan accounting, fork persistence, reorg depths."""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

GENESIS = "0"
CONNECTED = ("new_tip", "side_branch")
_INSERT_EVENTS = ("mined", "deliver", "reveal", "private")


@dataclass
class BlockInfo:
    id: str
    parent: Optional[str]
    sub_tip_ref: Optional[str]
    level: str
    miner: str
    found_at: float
    n_raw: Optional[int] = None

    @property
    def lineage_parent(self) -> Optional[str]:
        return self.sub_tip_ref if self.level == "dominant" else self.parent


class TraceIndex:
    """Block graph and per-node tip timeline reconstructed from a trace."""

    def __init__(self, trace: Sequence[dict]):
        self.trace = list(trace)
        header = self.trace[0] if self.trace and self.trace[0].get("event") == "header" else {}
        self.header = header
        self.blocks: Dict[str, BlockInfo] = {}
        self.nodes: List[str] = list(header.get("nodes", ()))
        self.honest_nodes: List[str] = list(header.get("honest_nodes", self.nodes))
        self.reference = header.get("reference_node", self.nodes[0] if self.nodes else None)
        self.final_tips: Dict[str, str] = {}
        for row in self.trace:
            ev = row.get("event")
            if ev == "found":
                self.blocks[row["id"]] = BlockInfo(
                    row["id"], row["parent"], row["sub_tip_ref"], row["level"], row["miner"], row["time"]
                )
            elif ev in _INSERT_EVENTS and row.get("n_raw") is not None:
                info = self.blocks.get(row["id"])
                if info is not None and info.n_raw is None:
                    info.n_raw = row["n_raw"]
            elif ev == "end":
                self.final_tips = dict(row["tips"])
        self._depth: Dict[str, int] = {GENESIS: 0}

    # -- graph helpers ------------------------------------------------

    def depth(self, block: str) -> int:
        path = []
        b = block
        while b not in self._depth:
            path.append(b)
            b = self.blocks[b].lineage_parent
        d = self._depth[b]
        for x in reversed(path):
            d += 1
            self._depth[x] = d
        return self._depth[block]

    def lineage_ancestor_at(self, block: str, depth: int) -> Optional[str]:
        if depth < 0:
            return None
        b = block
        d = self.depth(b)
        if d < depth:
            return None
        while d > depth:
            b = self.blocks[b].lineage_parent
            d -= 1
        return b

    def descends_from(self, block: str, ancestor: str) -> bool:
        return self.lineage_ancestor_at(block, self.depth(ancestor)) == ancestor

    def closure(self, block: str) -> Set[str]:
        seen: Set[str] = set()
        stack = [block]
        while stack:
            b = stack.pop()
            if b in seen:
                continue
            seen.add(b)
            if b == GENESIS:
                continue
            info = self.blocks[b]
            for ref in (info.parent, info.sub_tip_ref):
                if ref is not None:
                    stack.append(ref)
        return seen

    def connected_by_node(self) -> Dict[str, Dict[str, float]]:
        """node -> {block id -> time it became part of that node's chain store}."""
        out: Dict[str, Dict[str, float]] = defaultdict(dict)
        for row in self.trace:
            if row.get("event") not in _INSERT_EVENTS:
                continue
            held = out[row["node"]]
            if row["outcome"] in CONNECTED:
                held.setdefault(row["id"], row["time"])
            for adopted in row.get("adopted", ()):
                held.setdefault(adopted, row["time"])
        return out

    def fork_groups(self) -> List[List[str]]:
        children: Dict[str, List[str]] = defaultdict(list)
        for info in self.blocks.values():
            children[info.lineage_parent].append(info.id)
        groups = [sorted(c, key=lambda b: (self.blocks[b].found_at, b)) for c in children.values() if len(c) > 1]
        groups.sort(key=lambda g: (self.blocks[g[1]].found_at, g))
        return groups


@dataclass
class OrphanStats:
    blocks: int
    canonical: int
    orphaned: int
    in_flight: int
    orphan_rate: float
    forks: int
    mean_fork_persistence: float
    reorg_histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def max_reorg_depth(self) -> int:
        return max(self.reorg_histogram, default=0)


def _tip_side(idx: TraceIndex, tip: str, siblings: Sequence[str], depth: int) -> Optional[str]:
    anc = idx.lineage_ancestor_at(tip, depth)
    return anc if anc in siblings else None


def measure_orphans(trace: Sequence[dict]) -> OrphanStats:
    """Orphan rate, fork persistence (in deliveries), and reorg-depth histogram.

    Every found block is exactly one of canonical, orphaned, or in flight
    (unknown to the reference node at the end of the run).
    """
    idx = TraceIndex(trace)
    ref = idx.reference
    held = idx.connected_by_node().get(ref, {})
    final_tip = idx.final_tips.get(ref, GENESIS)
    canonical = idx.closure(final_tip) - {GENESIS}
    found = set(idx.blocks)
    known = found & set(held)
    orphaned = known - canonical
    in_flight = found - known
    total = len(found)

    reorgs = Counter(
        row["reorg_depth"] for row in trace
        if row.get("event") in _INSERT_EVENTS and row.get("reorg_depth", 0) > 0
        and row["node"] in idx.honest_nodes
    )

    persistence = fork_persistence(idx)
    mean_persist = sum(persistence) / len(persistence) if persistence else 0.0
    return OrphanStats(
        blocks=total,
        canonical=len(canonical & found),
        orphaned=len(orphaned),
        in_flight=len(in_flight),
        orphan_rate=len(orphaned) / total if total else 0.0,
        forks=len(persistence),
        mean_fork_persistence=mean_persist,
        reorg_histogram=dict(sorted(reorgs.items())),
    )


def _tip_timeline(trace: Sequence[dict]) -> List[Tuple[int, str, str]]:
    """(row index, node, tip) for every row that reports a node's tip."""
    return [(i, row["node"], row["tip"]) for i, row in enumerate(trace)
            if row.get("event") in _INSERT_EVENTS and "tip" in row]


def fork_persistence(idx: TraceIndex) -> List[int]:
    """Deliveries between each fork's creation and network-wide agreement on one side."""
    timeline = _tip_timeline(idx.trace)
    found_row = {row["id"]: i for i, row in enumerate(idx.trace) if row.get("event") == "found"}
    results = []
    for siblings in idx.fork_groups():
        created = found_row[siblings[1]]
        depth = idx.depth(siblings[0])
        tips = {n: GENESIS for n in idx.honest_nodes}
        deliveries = 0
        for i, node, tip in timeline:
            if node in tips:
                tips[node] = tip
            if i <= created:
                continue
            if idx.trace[i]["event"] == "deliver":
                deliveries += 1
            sides = {_tip_side(idx, t, siblings, depth) for t in tips.values()}
            if len(sides) == 1:
                break
        # unresolved forks count every delivery up to the end of the trace
        results.append(deliveries)
    return results


@dataclass
class ForkCheck:
    siblings: List[str]
    winner: Optional[str]
    complete: bool
    isolated: bool = False
    mixed_order: bool = False
    equal_hcr: bool = False
    created_at: float = 0.0
    all_hold_at: Optional[float] = None
    sides_at_all_hold: Set[Optional[str]] = field(default_factory=set)
    agreed_at: Optional[float] = None
    violation: Optional[str] = None

    @property
    def agreement_lag(self) -> Optional[float]:
        return None if self.agreed_at is None else self.agreed_at - self.created_at


def poem_winner(idx: TraceIndex, siblings: Sequence[str]) -> str:
    """Sibling preferred by POEM: largest n, then smallest hash."""
    return max(siblings, key=lambda b: (idx.blocks[b].n_raw, -int(b, 16)))


def _hold_rows(idx: TraceIndex) -> Dict[str, Dict[str, int]]:
    """node -> {block id -> trace row at which the node connected it}."""
    out: Dict[str, Dict[str, int]] = defaultdict(dict)
    for i, row in enumerate(idx.trace):
        if row.get("event") not in _INSERT_EVENTS:
            continue
        held = out[row["node"]]
        if row["outcome"] in CONNECTED:
            held.setdefault(row["id"], i)
        for adopted in row.get("adopted", ()):
            held.setdefault(adopted, i)
    return out


def check_latency_forks(trace: Sequence[dict], rule: str) -> List[ForkCheck]:
    """When do honest nodes settle on one side of each same-parent fork?

    A fork is *isolated* when no child of any sibling is found before every
    honest node holds every sibling. For POEM, each node must pick the
    winner the moment it holds all siblings, and all nodes must agree once
    the last delivery lands. For HCR, isolated equal-weight forks seen in
    different orders must still be split at that moment.
    """
    idx = TraceIndex(trace)
    held = _hold_rows(idx)
    timeline = _tip_timeline(idx.trace)
    hcr_of: Dict[str, str] = {}
    for row in idx.trace:
        if row.get("event") in _INSERT_EVENTS and row.get("hcr") is not None:
            hcr_of.setdefault(row["id"], row["hcr"])
    checks = []
    for siblings in idx.fork_groups():
        complete = all(s in held.get(n, {}) for n in idx.honest_nodes for s in siblings)
        winner = poem_winner(idx, siblings) if all(idx.blocks[s].n_raw is not None for s in siblings) else None
        check = ForkCheck(list(siblings), winner, complete, created_at=idx.blocks[siblings[1]].found_at)
        checks.append(check)
        if not complete:
            continue
        depth = idx.depth(siblings[0])
        hold_row = {n: max(held[n][s] for s in siblings) for n in idx.honest_nodes}
        first = {n: min(siblings, key=lambda s: held[n][s]) for n in idx.honest_nodes}
        r_all = max(hold_row.values())
        t_all = idx.trace[r_all]["time"]
        check.all_hold_at = t_all
        check.mixed_order = len(set(first.values())) > 1
        check.equal_hcr = len({hcr_of.get(s) for s in siblings}) == 1
        check.isolated = not any(
            idx.blocks[b].lineage_parent in siblings and found_row <= r_all
            for b, found_row in _found_rows(idx).items()
        )
        tips = {n: GENESIS for n in idx.honest_nodes}
        for i, node, tip in timeline:
            if node in tips:
                tips[node] = tip
            if node in hold_row and i == hold_row[node] and rule == "poem" and check.isolated:
                side = _tip_side(idx, tip, siblings, depth)
                if side is not None and side != winner and check.violation is None:
                    check.violation = f"node {node} kept a losing sibling after holding all siblings"
            if i == r_all:
                check.sides_at_all_hold = {_tip_side(idx, t, siblings, depth) for t in tips.values()}
            if i >= r_all and check.agreed_at is None:
                if len({_tip_side(idx, t, siblings, depth) for t in tips.values()}) == 1:
                    check.agreed_at = idx.trace[i]["time"]
        if not check.isolated:
            continue
        if rule == "poem":
            if check.violation is None and check.sides_at_all_hold not in ({winner}, {None}):
                check.violation = "honest nodes disagree once every node holds every sibling"
        elif check.equal_hcr and check.mixed_order and len(check.sides_at_all_hold) == 1:
            check.violation = "equal-weight fork resolved without a subsequent block"
    return checks


def _found_rows(idx: TraceIndex) -> Dict[str, int]:
    cached = getattr(idx, "_found_rows", None)
    if cached is None:
        cached = {row["id"]: i for i, row in enumerate(idx.trace) if row.get("event") == "found"}
        idx._found_rows = cached
    return cached
