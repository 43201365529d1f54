"""Per-run metric rows, aggregation, and CSV / JSONL output."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Dict, List, Optional, Sequence

from .analysis import measure_orphans
from .chaindag import Rule
from .entropy import ThresholdSpec, overtake_bound_difficulty, overtake_bound_entropy

COLUMNS = (
    "run_id", "seed", "rule", "m_t", "m_d", "blocks", "orphan_rate",
    "mean_fork_persistence", "max_reorg_depth", "attack_success", "min_overtake_k",
)
RATE_PLACES = Decimal("0.000001")


def fmt_rate(x: Optional[float | Decimal]) -> str:
    if x is None:
        return ""
    return str(Decimal(repr(x) if isinstance(x, float) else x).quantize(RATE_PLACES, rounding=ROUND_HALF_EVEN))


def min_overtake_k(rule: Rule, t: ThresholdSpec) -> int:
    if Rule(rule) is Rule.POEM:
        return overtake_bound_entropy(t).min_blocks
    return overtake_bound_difficulty(t).min_blocks


@dataclass
class MetricsRecord:
    run_id: str
    seed: str
    rule: str
    m_t: int
    m_d: int
    blocks: int
    orphan_rate: str
    mean_fork_persistence: str
    max_reorg_depth: int
    attack_success: str
    min_overtake_k: int

    def row(self) -> Dict[str, object]:
        return {c: getattr(self, c) for c in COLUMNS}


def record_for_run(result, run_id: Optional[str] = None) -> MetricsRecord:
    """Summarise a :class:`netsim.RunResult`."""
    cfg = result.config
    stats = measure_orphans(result.trace)
    revealed = [a for a in result.attacks if a.revealed_at is not None and a.adopted]
    success = None
    if revealed:
        success = sum(all(a.adopted.values()) for a in revealed) / len(revealed)
    return MetricsRecord(
        run_id=run_id or f"seed{result.seed}",
        seed=str(result.seed),
        rule=cfg.rule.value,
        m_t=cfg.m_t,
        m_d=cfg.m_d,
        blocks=stats.blocks,
        orphan_rate=fmt_rate(stats.orphan_rate),
        mean_fork_persistence=fmt_rate(stats.mean_fork_persistence),
        max_reorg_depth=stats.max_reorg_depth,
        attack_success=fmt_rate(success),
        min_overtake_k=min_overtake_k(cfg.rule, cfg.thresholds),
    )


def _mean(values: Sequence[str]) -> str:
    present = [Decimal(v) for v in values if v != ""]
    if not present:
        return ""
    return fmt_rate(sum(present) / len(present))


def aggregate(records: Sequence[MetricsRecord]) -> MetricsRecord:
    """Aggregate row computed from the emitted (rounded) per-run values.

    Rates and persistence are means, ``blocks`` is a total, reorg depth a max.
    """
    if not records:
        raise ValueError("nothing to aggregate")
    seeds = sorted(int(r.seed) for r in records)
    rules = sorted({r.rule for r in records})
    return MetricsRecord(
        run_id="aggregate",
        seed=f"{seeds[0]}..{seeds[-1]}",
        rule=rules[0] if len(rules) == 1 else "mixed",
        m_t=records[0].m_t,
        m_d=records[0].m_d,
        blocks=sum(r.blocks for r in records),
        orphan_rate=_mean([r.orphan_rate for r in records]),
        mean_fork_persistence=_mean([r.mean_fork_persistence for r in records]),
        max_reorg_depth=max(r.max_reorg_depth for r in records),
        attack_success=_mean([r.attack_success for r in records]),
        min_overtake_k=records[0].min_overtake_k,
    )


def provenance_line(version: str, config_digest: str, seeds: str) -> str:
    return f"# tool=poemlab version={version} config_sha256={config_digest} seeds={seeds}\n"


def to_csv(records: Sequence[MetricsRecord], provenance: str = "") -> str:
    buf = io.StringIO()
    buf.write(provenance)
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def to_jsonl(records: Sequence[MetricsRecord], provenance: Optional[dict] = None) -> str:
    lines = []
    if provenance is not None:
        lines.append(json.dumps(provenance, separators=(",", ":")))
    lines.extend(json.dumps(r.row(), separators=(",", ":")) for r in records)
    return "\n".join(lines) + "\n"


def read_csv(text: str) -> List[MetricsRecord]:
    body = "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))
    out = []
    for row in csv.DictReader(io.StringIO(body)):
        out.append(MetricsRecord(
            run_id=row["run_id"], seed=row["seed"], rule=row["rule"], m_t=int(row["m_t"]),
            m_d=int(row["m_d"]), blocks=int(row["blocks"]), orphan_rate=row["orphan_rate"],
            mean_fork_persistence=row["mean_fork_persistence"],
            max_reorg_depth=int(row["max_reorg_depth"]), attack_success=row["attack_success"],
            min_overtake_k=int(row["min_overtake_k"]),
        ))
    return out
