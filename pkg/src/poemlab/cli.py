"""``poemlab`` command line: bounds, run, paper-suite, tie-rate."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .chaindag import Rule
from .entropy import ConfigError, FieldSpec, ThresholdSpec, overtake_bound_difficulty, overtake_bound_entropy
from .experiments import paper_suite, tie_rate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_ACCEPTANCE = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    return f"{float(x):.6g}" if x.denominator != 1 else str(x.numerator)


def cmd_bounds(args) -> int:
    t = ThresholdSpec(args.m_t, args.m_d)
    t.validate(FieldSpec(args.l))
    if args.m_t + args.m_d + args.extra >= args.l:
        raise ConfigError(f"extra: m_t + m_d + extra must be < l ({args.m_t + args.m_d + args.extra} >= {args.l})")
    print(f"l={args.l} m_t={args.m_t} m_d={args.m_d} extra={args.extra}")
    print(f"{'rule':<26}{'bound':>14}{'min_blocks':>12}")
    rows = [
        ("difficulty (hcr)", overtake_bound_difficulty(t)),
        ("entropy (poem)", overtake_bound_entropy(t)),
    ]
    if args.extra:
        rows += [
            (f"difficulty +{args.extra} bits", overtake_bound_difficulty(t, args.extra)),
            (f"entropy +{args.extra} bits", overtake_bound_entropy(t, args.extra)),
        ]
    for name, b in rows:
        print(f"{name:<26}{_fmt(b.bound):>14}{b.min_blocks:>12}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .config import load, parse_seeds
    from .runner import run_and_write

    cfg = load(args.config)
    if args.rule:
        cfg = cfg.with_rule(Rule(args.rule))
    if args.seeds is not None:
        cfg = replace(cfg, seeds=parse_seeds(args.seeds))
    elif args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed, args.seed))
    cfg = cfg.validate()
    out = args.out or cfg.out_dir or "out"
    paths = run_and_write(cfg, cfg.seed_list(), out, workers=args.workers, fmt=args.format)
    print(f"wrote {len(paths)} files to {Path(out)}")
    return EXIT_OK


def cmd_paper_suite(args) -> int:
    results = paper_suite(args.only)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.number}. {r.name}: {r.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print("failed criteria: " + ", ".join(str(r.number) for r in failed), file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_tie_rate(args) -> int:
    r = tie_rate(args.l, args.m_t, args.pairs, args.seed)
    print(f"l={r.l} m_t={r.m_t} pairs={r.pairs} ties={r.ties}")
    print(f"empirical     {r.empirical:.6f}")
    print(f"model 2^-{r.l - r.m_t:<4} {float(r.model_p):.6f}  (z={r.z:+.2f})")
    print(f"1/2^l figure  {float(r.full_field_p):.6f}")
    return EXIT_OK if abs(r.z) <= 3 else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poemlab", description="Proof-of-entropy-minima fork-choice lab.")
    p.add_argument("--version", action="version", version=f"poemlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bounds", help="overtake bounds for a threshold pair")
    b.add_argument("--m-t", type=int, default=20)
    b.add_argument("--m-d", type=int, default=5)
    b.add_argument("--extra", type=int, default=0, help="extra difficulty bits on the dominant block")
    b.add_argument("--l", type=int, default=256, help="hash field width in bits")
    b.set_defaults(func=cmd_bounds)

    r = sub.add_parser("run", help="simulate a config over one or more seeds")
    r.add_argument("--config", required=True, type=Path)
    seeds = r.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int)
    seeds.add_argument("--seeds", help="inclusive range A..B")
    r.add_argument("--rule", choices=[x.value for x in Rule])
    r.add_argument("--out", type=Path)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("paper-suite", help="run every acceptance experiment")
    s.add_argument("--only", type=int, nargs="+", metavar="N", help="criterion numbers to run")
    s.set_defaults(func=cmd_paper_suite)

    t = sub.add_parser("tie-rate", help="Monte Carlo rate of unresolvable POEM ties")
    t.add_argument("--l", type=int, default=12)
    t.add_argument("--m-t", type=int, default=4)
    t.add_argument("--pairs", type=int, default=1_000_000)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_tie_rate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"poemlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"poemlab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
