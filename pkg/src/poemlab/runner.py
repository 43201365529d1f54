"""Seed sweeps: run a config over many seeds and write traces plus a metrics table."""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from . import __version__
from .config import SimConfig
from .metrics import MetricsRecord, aggregate, provenance_line, record_for_run, to_csv, to_jsonl
from .netsim import run


@dataclass
class SeedOutput:
    seed: int
    trace_text: str
    record: MetricsRecord


def trace_to_text(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(row, separators=(",", ":")) + "\n" for row in rows)


def run_seed(cfg: SimConfig, seed: int) -> SeedOutput:
    result = run(cfg, seed)
    return SeedOutput(seed, trace_to_text(result.trace), record_for_run(result))


def sweep(cfg: SimConfig, seeds: Sequence[int], workers: int = 1) -> List[SeedOutput]:
    """Run every seed; output order is by seed regardless of worker count."""
    seeds = sorted(seeds)
    if workers <= 1 or len(seeds) <= 1:
        outputs = [run_seed(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run_seed, [cfg] * len(seeds), seeds))
    return sorted(outputs, key=lambda o: o.seed)


def write_outputs(cfg: SimConfig, outputs: Sequence[SeedOutput], out_dir: os.PathLike | str,
                  fmt: str = "csv") -> List[Path]:
    """Write one trace per seed and a metrics file with an aggregate row."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for o in outputs:
        path = out / f"trace_seed{o.seed}.jsonl"
        path.write_text(o.trace_text, encoding="utf-8")
        written.append(path)
    records = [o.record for o in outputs]
    rows = records + [aggregate(records)]
    seeds = f"{outputs[0].seed}..{outputs[-1].seed}" if outputs else ""
    digest = cfg.digest()
    if fmt == "csv":
        path = out / "metrics.csv"
        path.write_text(to_csv(rows, provenance_line(__version__, digest, seeds)), encoding="utf-8")
    elif fmt == "jsonl":
        path = out / "metrics.jsonl"
        meta = {"tool": "poemlab", "version": __version__, "config_sha256": digest, "seeds": seeds}
        path.write_text(to_jsonl(rows, meta), encoding="utf-8")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    written.append(path)
    return written


def run_and_write(cfg: SimConfig, seeds: Optional[Sequence[int]] = None, out_dir: os.PathLike | str = "out",
                  workers: int = 1, fmt: str = "csv") -> List[Path]:
    seeds = list(seeds) if seeds is not None else cfg.seed_list()
    return write_outputs(cfg, sweep(cfg, seeds, workers), out_dir, fmt)
