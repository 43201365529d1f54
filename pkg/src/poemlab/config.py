"""Experiment configuration: JSON parsing, validation, and serialisation.

Unknown keys are rejected everywhere; every error names the offending field.
Time values are in milliseconds and carry an ``_ms`` suffix.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .chaindag import Rule
from .entropy import ChainWeight, ConfigError, FieldSpec, ThresholdSpec
from .minesim import (
    GRIND_ALGORITHMS,
    Honest,
    LevelFocus,
    MinerSpec,
    MiningMode,
    ModeKind,
    PrivateChain,
    WithholdDominant,
    validate_miners,
)


@dataclass(frozen=True)
class FixedDelay:
    delay_ms: float


@dataclass(frozen=True)
class ExponentialDelay:
    mean_ms: float


@dataclass(frozen=True)
class UniformDelay:
    lo_ms: float
    hi_ms: float


DelayModel = Union[FixedDelay, ExponentialDelay, UniformDelay]


@dataclass(frozen=True)
class LinkSpec:
    src: str
    dst: str
    delay: DelayModel


@dataclass(frozen=True)
class NodeSpec:
    id: str
    miners: Tuple[str, ...] = ()
    rule: Optional[Rule] = None


@dataclass(frozen=True)
class SimConfig:
    field_bits: int
    m_t: int
    m_d: int
    rule: Rule = Rule.POEM
    mode: MiningMode = field(default_factory=MiningMode)
    block_interval_ms: float = 1000.0
    miners: Tuple[MinerSpec, ...] = ()
    nodes: Tuple[NodeSpec, ...] = ()
    links: Tuple[LinkSpec, ...] = ()
    horizon_blocks: int = 100
    seeds: Tuple[int, int] = (0, 0)
    max_time_ms: Optional[float] = None
    drain: bool = True
    out_dir: Optional[str] = None

    @property
    def field(self) -> FieldSpec:
        return FieldSpec(self.field_bits)

    @property
    def thresholds(self) -> ThresholdSpec:
        return ThresholdSpec(self.m_t, self.m_d)

    def seed_list(self) -> List[int]:
        lo, hi = self.seeds
        return list(range(lo, hi + 1))

    def node_rule(self, node: NodeSpec) -> Rule:
        return node.rule if node.rule is not None else self.rule

    def with_rule(self, rule: Rule) -> "SimConfig":
        """Same experiment with every node switched to ``rule``."""
        nodes = tuple(replace(n, rule=None) for n in self.nodes)
        return replace(self, rule=Rule(rule), nodes=nodes)

    def validate(self) -> "SimConfig":
        try:
            fs = FieldSpec(self.field_bits)
        except ConfigError as exc:
            raise ConfigError(f"field_bits: {exc}") from None
        if self.m_t < 1:
            raise ConfigError(f"m_t: must be >= 1, got {self.m_t}")
        if self.m_d < 0:
            raise ConfigError(f"m_d: must be >= 0, got {self.m_d}")
        if self.m_t + self.m_d >= fs.l:
            raise ConfigError(f"m_t, m_d: m_t + m_d must be < field_bits ({self.m_t} + {self.m_d} >= {fs.l})")
        if self.horizon_blocks < 1:
            raise ConfigError("horizon_blocks: must be >= 1")
        if not self.block_interval_ms > 0:
            raise ConfigError("block_interval_ms: must be > 0")
        if self.seeds[0] > self.seeds[1] or self.seeds[0] < 0:
            raise ConfigError(f"seeds: invalid range {self.seeds[0]}..{self.seeds[1]}")
        if self.mode.kind is ModeKind.GRIND:
            if self.m_t + self.m_d > 24:
                raise ConfigError("mode: grind mode needs m_t + m_d <= 24")
        validate_miners(self.miners)
        node_ids = [n.id for n in self.nodes]
        if not node_ids:
            raise ConfigError("nodes: at least one node is required")
        if len(set(node_ids)) != len(node_ids):
            raise ConfigError("nodes: duplicate node id")
        attached: Dict[str, str] = {}
        for node in self.nodes:
            for mid in node.miners:
                if mid in attached:
                    raise ConfigError(f"nodes: miner {mid!r} attached to both {attached[mid]!r} and {node.id!r}")
                attached[mid] = node.id
        for miner in self.miners:
            if miner.id not in attached:
                raise ConfigError(f"nodes: miner {miner.id!r} is not attached to any node")
        honest = {m.id: m.honest for m in self.miners}
        for node in self.nodes:
            kinds = {honest.get(mid, True) for mid in node.miners}
            if len(kinds) > 1:
                raise ConfigError(f"nodes: node {node.id!r} mixes honest and adversarial miners")
        unknown = set(attached) - {m.id for m in self.miners}
        if unknown:
            raise ConfigError(f"nodes: unknown miner ids {sorted(unknown)}")
        for i, link in enumerate(self.links):
            for end in (link.src, link.dst):
                if end not in node_ids:
                    raise ConfigError(f"links[{i}]: unknown node {end!r}")
            _validate_delay(link.delay, f"links[{i}].delay")
        if len(self.nodes) > 1 and not _strongly_connected(node_ids, self.links):
            raise ConfigError("links: node graph must be strongly connected")
        return self

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()


def _validate_delay(delay: DelayModel, where: str) -> None:
    if isinstance(delay, FixedDelay):
        if delay.delay_ms < 0:
            raise ConfigError(f"{where}.fixed_ms: must be >= 0")
    elif isinstance(delay, ExponentialDelay):
        if delay.mean_ms < 0:
            raise ConfigError(f"{where}.exponential_mean_ms: must be >= 0")
    elif isinstance(delay, UniformDelay):
        if delay.lo_ms < 0 or delay.hi_ms < delay.lo_ms:
            raise ConfigError(f"{where}.uniform_ms: need 0 <= lo <= hi")


def _strongly_connected(node_ids: Sequence[str], links: Sequence[LinkSpec]) -> bool:
    fwd: Dict[str, List[str]] = {n: [] for n in node_ids}
    back: Dict[str, List[str]] = {n: [] for n in node_ids}
    for link in links:
        fwd[link.src].append(link.dst)
        back[link.dst].append(link.src)

    def reach(adj: Dict[str, List[str]]) -> int:
        seen = {node_ids[0]}
        stack = [node_ids[0]]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen)

    return reach(fwd) == len(node_ids) and reach(back) == len(node_ids)


# -- parsing -----------------------------------------------------------------

_TOP_KEYS = {
    "field_bits", "m_t", "m_d", "rule", "mode", "block_interval_ms", "miners", "nodes",
    "links", "horizon_blocks", "seeds", "max_time_ms", "drain", "out_dir",
}
_REQUIRED = ("field_bits", "m_t", "m_d", "miners", "nodes")


def _check_keys(obj: Mapping[str, Any], allowed: set, where: str) -> None:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")


def _int(obj: Mapping[str, Any], key: str, where: str = "") -> int:
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}{key}: expected an integer, got {value!r}")
    return value


def _num(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _rule(value: Any, where: str) -> Rule:
    try:
        return Rule(value)
    except ValueError:
        raise ConfigError(f"{where}: unknown rule {value!r} (poem, hcr, hcr-intrinsic)") from None


def parse_seeds(value: Any) -> Tuple[int, int]:
    """Accept ``7``, ``"7"``, ``"1..10"`` or ``[1, 10]``."""
    if isinstance(value, bool):
        raise ConfigError(f"seeds: invalid value {value!r}")
    if isinstance(value, int):
        return (value, value)
    if isinstance(value, str):
        text = value.strip()
        try:
            if ".." in text:
                lo, hi = text.split("..", 1)
                return (int(lo), int(hi))
            return (int(text), int(text))
        except ValueError:
            raise ConfigError(f"seeds: cannot parse {value!r}") from None
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, int) for v in value):
        return (value[0], value[1])
    raise ConfigError(f"seeds: invalid value {value!r}")


def _parse_mode(value: Any) -> MiningMode:
    if isinstance(value, str):
        if value == "grind":
            return MiningMode(ModeKind.GRIND)
        try:
            return MiningMode(ModeKind(value))
        except ValueError:
            raise ConfigError(f"mode: unknown mining mode {value!r}") from None
    if isinstance(value, Mapping):
        _check_keys(value, {"grind"}, "mode")
        algo = value["grind"]
        if algo not in GRIND_ALGORITHMS:
            raise ConfigError(f"mode.grind: unknown algorithm {algo!r}")
        return MiningMode(ModeKind.GRIND, algo)
    raise ConfigError(f"mode: invalid value {value!r}")


def _parse_strategy(value: Any, where: str):
    if value in (None, "honest"):
        return Honest()
    if isinstance(value, Mapping) and len(value) == 1:
        (kind, params), = value.items()
        if kind == "withhold_dominant":
            _check_keys(params, {"reveal_after"}, f"{where}.withhold_dominant")
            if "reveal_after" not in params:
                raise ConfigError(f"{where}.withhold_dominant.reveal_after: required")
            return WithholdDominant(_int(params, "reveal_after", f"{where}.withhold_dominant."))
        if kind == "private_chain":
            _check_keys(params, {"reveal_margin_bits"}, f"{where}.private_chain")
            margin = _num(params.get("reveal_margin_bits", 0), f"{where}.private_chain.reveal_margin_bits")
            if margin < 0:
                raise ConfigError(f"{where}.private_chain.reveal_margin_bits: must be >= 0")
            return PrivateChain(ChainWeight.from_bits(margin))
    raise ConfigError(f"{where}: unknown strategy {value!r}")


def _parse_miner(obj: Any, i: int) -> MinerSpec:
    where = f"miners[{i}]"
    _check_keys(obj, {"id", "hashrate_fraction", "strategy", "focus"}, where)
    for key in ("id", "hashrate_fraction"):
        if key not in obj:
            raise ConfigError(f"{where}.{key}: required")
    try:
        focus = LevelFocus(obj.get("focus", "merged"))
    except ValueError:
        raise ConfigError(f"{where}.focus: unknown value {obj.get('focus')!r}") from None
    fraction = _num(obj["hashrate_fraction"], f"{where}.hashrate_fraction")
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"{where}.hashrate_fraction: must be in (0, 1], got {fraction}")
    return MinerSpec(str(obj["id"]), fraction, _parse_strategy(obj.get("strategy"), f"{where}.strategy"), focus)


def _parse_node(obj: Any, i: int) -> NodeSpec:
    where = f"nodes[{i}]"
    _check_keys(obj, {"id", "miners", "rule"}, where)
    if "id" not in obj:
        raise ConfigError(f"{where}.id: required")
    rule = _rule(obj["rule"], f"{where}.rule") if obj.get("rule") is not None else None
    return NodeSpec(str(obj["id"]), tuple(str(m) for m in obj.get("miners", ())), rule)


def _parse_delay(obj: Any, where: str) -> DelayModel:
    _check_keys(obj, {"fixed_ms", "exponential_mean_ms", "uniform_ms"}, where)
    if len(obj) != 1:
        raise ConfigError(f"{where}: exactly one of fixed_ms, exponential_mean_ms, uniform_ms")
    (kind, value), = obj.items()
    if kind == "fixed_ms":
        return FixedDelay(_num(value, f"{where}.fixed_ms"))
    if kind == "exponential_mean_ms":
        return ExponentialDelay(_num(value, f"{where}.exponential_mean_ms"))
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where}.uniform_ms: expected [lo, hi]")
    return UniformDelay(_num(value[0], f"{where}.uniform_ms"), _num(value[1], f"{where}.uniform_ms"))


def _parse_link(obj: Any, i: int) -> LinkSpec:
    where = f"links[{i}]"
    _check_keys(obj, {"from", "to", "delay", "bidirectional"}, where)
    for key in ("from", "to", "delay"):
        if key not in obj:
            raise ConfigError(f"{where}.{key}: required")
    return LinkSpec(str(obj["from"]), str(obj["to"]), _parse_delay(obj["delay"], f"{where}.delay"))


def from_dict(data: Mapping[str, Any]) -> SimConfig:
    _check_keys(data, _TOP_KEYS, "config")
    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"{key}: required field missing")
    links: List[LinkSpec] = []
    for i, raw in enumerate(data.get("links", ())):
        link = _parse_link(raw, i)
        links.append(link)
        if raw.get("bidirectional", False):
            links.append(LinkSpec(link.dst, link.src, link.delay))
    max_time = data.get("max_time_ms")
    cfg = SimConfig(
        field_bits=_int(data, "field_bits"),
        m_t=_int(data, "m_t"),
        m_d=_int(data, "m_d"),
        rule=_rule(data.get("rule", "poem"), "rule"),
        mode=_parse_mode(data.get("mode", "sampled")),
        block_interval_ms=_num(data.get("block_interval_ms", 1000.0), "block_interval_ms"),
        miners=tuple(_parse_miner(m, i) for i, m in enumerate(data["miners"])),
        nodes=tuple(_parse_node(n, i) for i, n in enumerate(data["nodes"])),
        links=tuple(links),
        horizon_blocks=_int(data, "horizon_blocks") if "horizon_blocks" in data else 100,
        seeds=parse_seeds(data.get("seeds", 0)),
        max_time_ms=None if max_time is None else _num(max_time, "max_time_ms"),
        drain=bool(data.get("drain", True)),
        out_dir=data.get("out_dir"),
    )
    return cfg.validate()


def loads(text: str) -> SimConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return from_dict(data)


def load(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# -- serialisation -----------------------------------------------------------

def _strategy_dict(strategy) -> Any:
    if isinstance(strategy, WithholdDominant):
        return {"withhold_dominant": {"reveal_after": strategy.reveal_after}}
    if isinstance(strategy, PrivateChain):
        return {"private_chain": {"reveal_margin_bits": float(strategy.reveal_margin)}}
    return "honest"


def _delay_dict(delay: DelayModel) -> Dict[str, Any]:
    if isinstance(delay, FixedDelay):
        return {"fixed_ms": delay.delay_ms}
    if isinstance(delay, ExponentialDelay):
        return {"exponential_mean_ms": delay.mean_ms}
    return {"uniform_ms": [delay.lo_ms, delay.hi_ms]}


def to_dict(cfg: SimConfig) -> Dict[str, Any]:
    mode: Any = cfg.mode.kind.value
    if cfg.mode.kind is ModeKind.GRIND:
        mode = {"grind": cfg.mode.algorithm}
    out: Dict[str, Any] = {
        "field_bits": cfg.field_bits,
        "m_t": cfg.m_t,
        "m_d": cfg.m_d,
        "rule": cfg.rule.value,
        "mode": mode,
        "block_interval_ms": cfg.block_interval_ms,
        "miners": [
            {"id": m.id, "hashrate_fraction": m.hashrate_fraction,
             "strategy": _strategy_dict(m.strategy), "focus": m.focus.value}
            for m in cfg.miners
        ],
        "nodes": [
            {"id": n.id, "miners": list(n.miners), "rule": None if n.rule is None else n.rule.value}
            for n in cfg.nodes
        ],
        "links": [{"from": l.src, "to": l.dst, "delay": _delay_dict(l.delay)} for l in cfg.links],
        "horizon_blocks": cfg.horizon_blocks,
        "seeds": f"{cfg.seeds[0]}..{cfg.seeds[1]}",
        "max_time_ms": cfg.max_time_ms,
        "drain": cfg.drain,
        "out_dir": cfg.out_dir,
    }
    return out


def dumps(cfg: SimConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, indent=2)
