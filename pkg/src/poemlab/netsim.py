"""Deterministic discrete-event network simulation of merge-mined chains.

Nodes each hold a :class:`ChainStore`; miners attached to a node build on
that node's tip. Blocks gossip over directed links with configurable
delays. Attackers see honest blocks the instant they are found.
"""
from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Dict, List, Optional


from . import __version__
from .chaindag import (
    BlockRecord,
    ChainStore,
    InsertOutcome,
    InvalidBlockError,
    OrphanBlockError,
    Rule,
    TRACE_SCHEMA_VERSION,
)
from .config import ExponentialDelay, FixedDelay, LinkSpec, NodeSpec, SimConfig, UniformDelay
from .entropy import HashValue
from .minesim import (
    RNG_NAME,
    BlockSource,
    Level,
    MinerSpec,
    PrivateChain,
    WithholdDominant,
    make_rng,
    next_block_time,
)

STREAM_MINING = 0
STREAM_NETWORK = 1
STREAM_HASHES = 2


class EventKind(enum.IntEnum):
    """Priority among simultaneous events; lower runs first."""

    BLOCK_DELIVERED = 0
    ATTACKER_REVEAL = 1
    BLOCK_FOUND = 2


@dataclass(order=True)
class SimEvent:
    time: float
    kind: EventKind
    key: int  # block id for deliveries/reveals, miner index for discoveries
    node: int
    seq: int
    block: Optional[BlockRecord] = field(default=None, compare=False)
    sender: Optional[int] = field(default=None, compare=False)


@dataclass
class _NodeState:
    index: int
    spec: NodeSpec
    rule: Rule
    store: ChainStore
    out_links: List[LinkSpec]
    hosts_attacker: bool = False


@dataclass
class _Attack:
    block: BlockRecord
    base: HashValue
    reveal_after: int
    honest_seen: int = 0
    revealed_at: Optional[float] = None
    adopted: Dict[str, bool] = field(default_factory=dict)
    reorg: Dict[str, int] = field(default_factory=dict)


@dataclass
class _MinerState:
    index: int
    spec: MinerSpec
    node: int
    paused: bool = False
    pending: Optional[_Attack] = None
    private: List[BlockRecord] = field(default_factory=list)


@dataclass
class RunResult:
    config: SimConfig
    seed: int
    trace: List[dict]
    found: List[BlockRecord]
    final_tips: Dict[str, str]
    attacks: List[_Attack]
    invalid_dropped: int
    end_time: float


def _hex(h: Optional[HashValue]) -> Optional[str]:
    return None if h is None else format(h.value, "x")


class Simulation:
    def __init__(self, config: SimConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        self.field = config.field
        self.thresholds = config.thresholds
        self.mode = config.mode
        self.rng_mining = make_rng(seed, STREAM_MINING)
        self.rng_network = make_rng(seed, STREAM_NETWORK)
        self.source = BlockSource(self.field, self.thresholds, self.mode, make_rng(seed, STREAM_HASHES))
        # hashes per ms that put the subordinate interval at block_interval_ms
        self.network_rate = 2.0 ** self.thresholds.m_t / config.block_interval_ms

        self.nodes: List[_NodeState] = []
        node_index = {n.id: i for i, n in enumerate(config.nodes)}
        for i, spec in enumerate(config.nodes):
            store = ChainStore(self.field, self.thresholds, rule=config.node_rule(spec))
            links = [l for l in config.links if l.src == spec.id]
            self.nodes.append(_NodeState(i, spec, config.node_rule(spec), store, links))
        self.node_index = node_index
        self.miners: List[_MinerState] = []
        for i, spec in enumerate(config.miners):
            host = next(n for n in config.nodes if spec.id in n.miners)
            self.miners.append(_MinerState(i, spec, node_index[host.id]))
            if not spec.honest:
                self.nodes[node_index[host.id]].hosts_attacker = True
        self.reference = next(
            (self.miners[i].node for i, m in enumerate(config.miners) if m.honest), 0
        )

        self.queue: List[SimEvent] = []
        self._seq = 0
        self.now = 0.0
        self.trace: List[dict] = []
        self.found: List[BlockRecord] = []
        self.known_ids = {self.nodes[0].store.genesis.id.value}
        self.attacks: List[_Attack] = []
        self.invalid_dropped = 0
        self.mining_stopped = False
        self.stop_after_attacks: Optional[int] = None
        self._honest_nodes = [n.spec.id for n in self.nodes if not n.hosts_attacker]

    # -- scheduling ----------------------------------------------------

    def _push(self, time: float, kind: EventKind, key: int, node: int,
              block: Optional[BlockRecord] = None, sender: Optional[int] = None) -> None:
        self._seq += 1
        heapq.heappush(self.queue, SimEvent(time, kind, key, node, self._seq, block, sender))

    def _schedule_mining(self, miner: _MinerState) -> None:
        bits = self.source.rate_bits(miner.spec)
        dt = next_block_time(self.rng_mining, miner.spec, self.network_rate, bits)
        self._push(self.now + dt, EventKind.BLOCK_FOUND, miner.index, miner.node)

    def _delay(self, link: LinkSpec) -> float:
        d = link.delay
        if isinstance(d, FixedDelay):
            return d.delay_ms
        if isinstance(d, ExponentialDelay):
            return float(self.rng_network.exponential(d.mean_ms)) if d.mean_ms > 0 else 0.0
        if isinstance(d, UniformDelay):
            return float(self.rng_network.uniform(d.lo_ms, d.hi_ms))
        raise TypeError(f"unknown delay model {d!r}")

    def _broadcast(self, node: _NodeState, block: BlockRecord, exclude: Optional[int] = None) -> None:
        for link in node.out_links:
            dst = self.node_index[link.dst]
            if dst == exclude:
                continue
            self._push(self.now + self._delay(link), EventKind.BLOCK_DELIVERED, block.id.value, dst, block, node.index)

    # -- mining --------------------------------------------------------

    def _new_block(self, miner: _MinerState) -> BlockRecord:
        store = self.nodes[miner.node].store
        tip = store.best_tip(store.rule).best_tip
        while True:
            draw = self.source.draw(miner.spec, preimage=tip.value.to_bytes(32, "big"))
            if draw.hash.value not in self.known_ids:
                break
        self.known_ids.add(draw.hash.value)
        clamped = self.mode.clamped
        if draw.level is Level.DOMINANT:
            parent = store.last_dominant(tip)
            return BlockRecord(
                id=draw.hash, parent=parent, level=Level.DOMINANT,
                height=store.get(parent).height + 1, miner=miner.spec.id, found_at=self.now,
                sub_tip_ref=tip, n=draw.n if clamped else None, clamped=clamped,
            )
        return BlockRecord(
            id=draw.hash, parent=tip, level=Level.SUBORDINATE,
            height=store.lineage_height(tip) + 1, miner=miner.spec.id, found_at=self.now,
            n=draw.n if clamped else None, clamped=clamped,
        )

    def _on_found(self, miner: _MinerState) -> None:
        block = self._new_block(miner)
        self.found.append(block)
        node = self.nodes[miner.node]
        strategy = miner.spec.strategy
        withhold = (
            isinstance(strategy, WithholdDominant) and block.level is Level.DOMINANT
        ) or isinstance(strategy, PrivateChain)
        self._log_found(block, node, withheld=withhold)
        if isinstance(strategy, WithholdDominant) and block.level is Level.DOMINANT:
            attack = _Attack(block, block.sub_tip_ref, strategy.reveal_after)
            miner.pending = attack
            miner.paused = True
            self.attacks.append(attack)
            if strategy.reveal_after == 0:
                self._push(self.now, EventKind.ATTACKER_REVEAL, block.id.value, miner.node, block)
            return
        if isinstance(strategy, PrivateChain):
            self._insert(node, block, sender=None, event="private")
            miner.private.append(block)
            self._check_private(miner)
            if not self.mining_stopped:
                self._schedule_mining(miner)
            return
        self._insert(node, block, sender=None, event="mined")
        self._broadcast(node, block)
        if miner.spec.honest:
            self._notify_attackers(block)
        self._check_horizon()
        if not self.mining_stopped:
            self._schedule_mining(miner)

    def _notify_attackers(self, block: BlockRecord) -> None:
        """Attacker nodes receive honest blocks instantly."""
        for node in self.nodes:
            if node.hosts_attacker and block.id not in node.store:
                self._push(self.now, EventKind.BLOCK_DELIVERED, block.id.value, node.index, block, None)

    # -- receiving -----------------------------------------------------

    def _insert(self, node: _NodeState, block: BlockRecord, sender: Optional[int], event: str) -> InsertOutcome | str:
        store = node.store
        store.now = self.now
        old_tip = store.best_tip(node.rule).best_tip
        try:
            outcome: InsertOutcome | str = store.insert_block(block)
        except OrphanBlockError:
            outcome = "orphaned"
        except InvalidBlockError:
            self.invalid_dropped += 1
            outcome = "invalid"
        new_tip = store.best_tip(node.rule).best_tip
        reorg = store.reorg_depth(old_tip, new_tip) if new_tip != old_tip else 0
        n = store.n_of(block.id) if block.id in store else None
        row = {
            "event": event,
            "time": self.now,
            "node": node.spec.id,
            "id": _hex(block.id),
            "parent": _hex(block.parent),
            "sub_tip_ref": _hex(block.sub_tip_ref),
            "level": block.level.value,
            "miner": block.miner,
            "n_raw": None if n is None else n.raw,
            "poem_raw": store.weight_of(block.id, Rule.POEM).raw if block.id in store else None,
            "hcr": str(store.weight_of(block.id, Rule.HCR)) if block.id in store else None,
            "hcr_intrinsic": str(store.weight_of(block.id, Rule.HCR_INTRINSIC)) if block.id in store else None,
            "outcome": outcome if isinstance(outcome, str) else outcome.value,
            "adopted": [_hex(h) for h in store.last_adopted],
            "tip": _hex(new_tip),
            "reorg_depth": reorg,
        }
        self.trace.append(row)
        return outcome

    def on_block_received(self, node: _NodeState, block: BlockRecord, sender: Optional[int]) -> bool:
        """Insert a delivered block; returns True when the node relays it."""
        first_seen = block.id not in node.store and not node.store.is_buffered(block.id)
        outcome = self._insert(node, block, sender, event="deliver")
        if not first_seen or outcome == "invalid":
            return False
        self._broadcast(node, block, exclude=sender)
        if not node.hosts_attacker:
            self._record_attack_delivery(node, block)
        else:
            self._attacker_observe(node, block)
        if node.index == self.reference:
            self._check_horizon()
        return True

    def _record_attack_delivery(self, node: _NodeState, block: BlockRecord) -> None:
        for attack in self.attacks:
            if attack.revealed_at is not None and attack.block.id == block.id:
                store = node.store
                tip = store.best_tip(node.rule).best_tip
                attack.adopted[node.spec.id] = block.id in store and store.is_ancestor(block.id, tip)
                attack.reorg[node.spec.id] = self.trace[-1]["reorg_depth"]

    # -- attackers -----------------------------------------------------

    def _attacker_observe(self, node: _NodeState, block: BlockRecord) -> None:
        if block.miner and not self._miner_by_id(block.miner).spec.honest:
            return
        for miner in self.miners:
            if miner.node != node.index:
                continue
            attack = miner.pending
            if attack is not None and attack.revealed_at is None and block.level is Level.SUBORDINATE:
                store = node.store
                if block.id in store and store.is_ancestor(attack.base, block.id) and block.id != attack.base:
                    attack.honest_seen += 1
                    if attack.honest_seen >= attack.reveal_after:
                        self._push(self.now, EventKind.ATTACKER_REVEAL, attack.block.id.value, node.index, attack.block)
            if isinstance(miner.spec.strategy, PrivateChain):
                self._check_private(miner)

    def _miner_by_id(self, miner_id: str) -> _MinerState:
        for m in self.miners:
            if m.spec.id == miner_id:
                return m
        raise KeyError(miner_id)

    def _on_reveal(self, node: _NodeState, block: BlockRecord) -> None:
        miner = self._miner_by_id(block.miner)
        attack = miner.pending
        if attack is None or attack.revealed_at is not None:
            return
        attack.revealed_at = self.now
        self._insert(node, block, sender=None, event="reveal")
        self._broadcast(node, block)
        miner.pending = None
        miner.paused = False
        if not self.mining_stopped:
            self._schedule_mining(miner)

    def _check_private(self, miner: _MinerState) -> None:
        """Publish the private branch once it leads the public chain by the margin."""
        node = self.nodes[miner.node]
        store = node.store
        unpublished = [b for b in miner.private if b.id in store]
        if not unpublished:
            return
        tip = store.best_tip(node.rule).best_tip
        private_ids = {b.id.value for b in unpublished}
        if tip.value not in private_ids:
            # honest chain is ahead: abandon the private branch
            miner.private.clear()
            return
        public_best = self._public_best(store, private_ids, node.rule)
        margin = miner.spec.strategy.reveal_margin
        if node.rule is Rule.POEM:
            lead_ok = store.weight_of(tip).raw >= store.weight_of(public_best).raw + margin.raw
        else:
            lead_ok = store.prefer(tip, public_best, node.rule) > 0
        if not lead_ok:
            return
        branch = [b for b in unpublished if store.is_ancestor(b.id, tip) or b.id == tip]
        attack = _Attack(store.get(tip), public_best, 0, revealed_at=self.now)
        self.attacks.append(attack)
        for b in branch:
            self.trace.append({"event": "publish", "time": self.now, "node": node.spec.id, "id": _hex(b.id)})
            self._broadcast(node, b)
        miner.private.clear()

    def _public_best(self, store: ChainStore, private_ids: set, rule: Rule) -> HashValue:
        best: Optional[HashValue] = None
        for rec in store.leaves_excluding(private_ids):
            if best is None or store.prefer(rec.id, best, rule) > 0:
                best = rec.id
        return best if best is not None else store.genesis.id

    def _attacks_settled(self) -> bool:
        done = [a for a in self.attacks if a.revealed_at is not None
                and all(n in a.adopted for n in self._honest_nodes)]
        return len(done) >= self.stop_after_attacks

    # -- horizon -------------------------------------------------------

    def _check_horizon(self) -> None:
        if self.mining_stopped:
            return
        ref = self.nodes[self.reference]
        tip = ref.store.best_tip(ref.rule).best_tip
        if ref.store.lineage_height(tip) >= self.config.horizon_blocks:
            self.mining_stopped = True

    # -- main loop -----------------------------------------------------

    def _log_found(self, block: BlockRecord, node: _NodeState, withheld: bool) -> None:
        self.trace.append({
            "event": "found",
            "time": self.now,
            "node": node.spec.id,
            "id": _hex(block.id),
            "parent": _hex(block.parent),
            "sub_tip_ref": _hex(block.sub_tip_ref),
            "level": block.level.value,
            "miner": block.miner,
            "withheld": withheld,
        })

    def header(self) -> dict:
        return {
            "event": "header",
            "schema": TRACE_SCHEMA_VERSION,
            "tool": "poemlab",
            "version": __version__,
            "config_sha256": self.config.digest(),
            "seed": self.seed,
            "rng": RNG_NAME,
            "streams": {"mining": STREAM_MINING, "network": STREAM_NETWORK, "hashes": STREAM_HASHES},
            "nodes": [n.spec.id for n in self.nodes],
            "honest_nodes": list(self._honest_nodes),
            "reference_node": self.nodes[self.reference].spec.id,
            "field_bits": self.field.l,
            "m_t": self.thresholds.m_t,
            "m_d": self.thresholds.m_d,
            "mode": self.mode.kind.value,
        }

    def run(self) -> RunResult:
        self.trace.append(self.header())
        for miner in self.miners:
            self._schedule_mining(miner)
        max_time = self.config.max_time_ms
        while self.queue:
            ev = heapq.heappop(self.queue)
            if max_time is not None and ev.time > max_time:
                break
            if ev.kind is EventKind.BLOCK_FOUND and self.mining_stopped:
                continue
            if self.mining_stopped and not self.config.drain:
                break
            self.now = ev.time
            node = self.nodes[ev.node]
            if ev.kind is EventKind.BLOCK_FOUND:
                miner = self.miners[ev.key]
                if not miner.paused:
                    self._on_found(miner)
            elif ev.kind is EventKind.BLOCK_DELIVERED:
                self.on_block_received(node, ev.block, ev.sender)
            else:
                self._on_reveal(node, ev.block)
            if self.stop_after_attacks is not None and self._attacks_settled():
                break
        tips = {n.spec.id: _hex(n.store.best_tip(n.rule).best_tip) for n in self.nodes}
        self.trace.append({"event": "end", "time": self.now, "tips": tips})
        return RunResult(self.config, self.seed, self.trace, self.found, tips, self.attacks,
                         self.invalid_dropped, self.now)


def run(config: SimConfig, seed: int) -> RunResult:
    return Simulation(config, seed).run()


def run_attack(config: SimConfig, seed: int, attacks: int = 1) -> RunResult:
    """Run until ``attacks`` withheld blocks have been revealed and seen by every honest node."""
    sim = Simulation(config, seed)
    sim.stop_after_attacks = attacks
    return sim.run()


def withholding_attack(config: SimConfig, seed: int = 0):
    """Single withholding attempt summarised as a metrics row."""
    from .metrics import record_for_run

    return record_for_run(run_attack(config, seed))
