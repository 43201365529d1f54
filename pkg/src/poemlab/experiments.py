"""Named experiments that reproduce the analytic claims about POEM.

Each function returns plain measurements; :func:`paper_suite` turns them
into pass/fail lines.
"""
from __future__ import annotations

import math
import random
import tempfile
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import mpmath

from .analysis import check_latency_forks
from .chaindag import BlockRecord, ChainStore, Rule
from .config import FixedDelay, LinkSpec, NodeSpec, SimConfig
from .entropy import (
    ChainWeight,
    FieldSpec,
    HashValue,
    IntrinsicWeight,
    ThresholdSpec,
    accumulate,
    compare_poem,
    intrinsic_weight,
    overtake_bound_difficulty,
    overtake_bound_entropy,
    tie_probability,
    tie_probability_full_field,
)
from .minesim import (
    Level,
    LevelFocus,
    MinerSpec,
    MiningMode,
    ModeKind,
    WithholdDominant,
    classify_level,
    make_rng,
    sample_block_hash,
    sample_block_hashes,
)
from .netsim import run, run_attack

DEFAULT_M_T = 20
DEFAULT_M_D = 5
DEFAULT_L = 256


# -- configs -------------------------------------------------------------------

def latency_config(rule: Rule = Rule.POEM, delay_ms: float = 300.0, horizon: int = 100) -> SimConfig:
    """Two equal miners on two nodes joined by a fixed-delay link."""
    return SimConfig(
        field_bits=DEFAULT_L, m_t=DEFAULT_M_T, m_d=DEFAULT_M_D, rule=Rule(rule),
        mode=MiningMode(ModeKind.SAMPLED), block_interval_ms=1000.0,
        miners=(MinerSpec("a", 0.5), MinerSpec("b", 0.5)),
        nodes=(NodeSpec("n0", ("a",)), NodeSpec("n1", ("b",))),
        links=(LinkSpec("n0", "n1", FixedDelay(delay_ms)), LinkSpec("n1", "n0", FixedDelay(delay_ms))),
        horizon_blocks=horizon,
    ).validate()


def withholding_config(rule: Rule, reveal_after: int, mode: ModeKind = ModeKind.CLAMPED,
                       attacker_fraction: float = 0.1) -> SimConfig:
    """Honest subordinate miner against a dominant-only withholding attacker."""
    return SimConfig(
        field_bits=DEFAULT_L, m_t=DEFAULT_M_T, m_d=DEFAULT_M_D, rule=Rule(rule),
        mode=MiningMode(mode), block_interval_ms=1000.0,
        miners=(
            MinerSpec("honest", 1.0 - attacker_fraction, focus=LevelFocus.SUBORDINATE),
            MinerSpec("attacker", attacker_fraction, WithholdDominant(reveal_after), LevelFocus.DOMINANT),
        ),
        nodes=(NodeSpec("H", ("honest",)), NodeSpec("X", ("attacker",))),
        links=(LinkSpec("H", "X", FixedDelay(0.0)), LinkSpec("X", "H", FixedDelay(0.0))),
        horizon_blocks=1_000_000,
    ).validate()


# -- 1: overtake contrast ------------------------------------------------------

@dataclass
class OvertakeResult:
    hcr_first_exceeds: int
    hcr_tie_at: Optional[int]
    poem_first_exceeds: int
    hcr_tip_switch_at: int
    poem_tip_switch_at: int
    difficulty_bound: Fraction
    entropy_bound: Fraction
    seconds: float


def _clamped_id(rng, field: FieldSpec, bits: int, used: set) -> HashValue:
    while True:
        h = sample_block_hash(rng, field, bits)
        if h.value not in used:
            used.add(h.value)
            return h


def overtake_contrast(m_t: int = DEFAULT_M_T, m_d: int = DEFAULT_M_D, l: int = DEFAULT_L,
                      max_k: int = 64, seed: int = 0) -> OvertakeResult:
    """One clamped dominant block against a growing clamped subordinate branch.

    The dominant block is delivered first, so HCR keeps it on a tie.
    """
    start = time.perf_counter()
    field, t = FieldSpec(l), ThresholdSpec(m_t, m_d)
    rng = make_rng(seed)
    used = {0}
    stores = {rule: ChainStore(field, t, rule=rule) for rule in (Rule.HCR, Rule.POEM)}
    genesis = stores[Rule.HCR].genesis.id
    dom = BlockRecord(_clamped_id(rng, field, t.dominant_bits, used), genesis, Level.DOMINANT, 1,
                      miner="dominant", sub_tip_ref=genesis,
                      n=IntrinsicWeight.from_bits(t.dominant_bits), clamped=True)
    for store in stores.values():
        store.insert_block(dom)

    first: Dict[Rule, Optional[int]] = {Rule.HCR: None, Rule.POEM: None}
    switch: Dict[Rule, Optional[int]] = {Rule.HCR: None, Rule.POEM: None}
    tie_at = None
    parent = genesis
    for k in range(1, max_k + 1):
        sub = BlockRecord(_clamped_id(rng, field, m_t, used), parent, Level.SUBORDINATE, k,
                          miner="sub", n=IntrinsicWeight.from_bits(m_t), clamped=True)
        parent = sub.id
        for rule, store in stores.items():
            store.insert_block(sub)
            cmp = store.prefer(sub.id, dom.id, rule)
            if cmp == 0 and rule is Rule.HCR and tie_at is None:
                tie_at = k
            if cmp > 0 and first[rule] is None:
                first[rule] = k
            if switch[rule] is None and store.best_tip(rule).best_tip == sub.id:
                switch[rule] = k
        if all(v is not None for v in switch.values()):
            break
    return OvertakeResult(
        hcr_first_exceeds=first[Rule.HCR], hcr_tie_at=tie_at, poem_first_exceeds=first[Rule.POEM],
        hcr_tip_switch_at=switch[Rule.HCR], poem_tip_switch_at=switch[Rule.POEM],
        difficulty_bound=overtake_bound_difficulty(t).bound, entropy_bound=overtake_bound_entropy(t).bound,
        seconds=time.perf_counter() - start,
    )


# -- 2: finite finalization -----------------------------------------------------

@dataclass
class FinalizationResult:
    samples: int
    min_seen: int
    max_seen: int
    out_of_range: List[Tuple[int, int, int]]
    seconds: float


def finalization_bound(samples: int = 10_000, l: int = DEFAULT_L, seed: int = 0) -> FinalizationResult:
    """Entropy overtake depth over random valid (m_t, m_d, extra) with m_t + m_d + extra < l."""
    start = time.perf_counter()
    r = random.Random(seed)
    triples = [(1, l - 2, 0), (l - 1, 0, 0), (1, 0, 0), (1, 0, l - 2)]
    while len(triples) < samples:
        m_t = r.randint(1, l - 1)
        m_d = r.randint(0, l - 1 - m_t)
        extra = r.randint(0, l - 1 - m_t - m_d)
        triples.append((m_t, m_d, extra))
    ks, bad = [], []
    for m_t, m_d, extra in triples:
        assert m_t + m_d + extra < l
        k = overtake_bound_entropy(ThresholdSpec(m_t, m_d), extra).min_blocks
        ks.append(k)
        if not 1 < k <= l:
            bad.append((m_t, m_d, extra))
    return FinalizationResult(len(triples), min(ks), max(ks), bad, time.perf_counter() - start)


# -- 3: latency forks -----------------------------------------------------------

@dataclass
class LatencyForkResult:
    rule: Rule
    runs: int
    forks: int
    isolated: int
    violations: List[str]
    persisted: int  # isolated equal-weight forks still split once every node holds every sibling
    contested: int  # isolated equal-weight forks seen in different orders
    lags: List[float] = field(default_factory=list)
    seconds: float = 0.0


def latency_forks(rule: Rule, seeds: range = range(100), delay_ms: float = 300.0,
                  horizon: int = 100) -> LatencyForkResult:
    start = time.perf_counter()
    cfg = latency_config(rule, delay_ms, horizon)
    res = LatencyForkResult(Rule(rule), 0, 0, 0, [], 0, 0)
    for seed in seeds:
        result = run(cfg, seed)
        res.runs += 1
        for chk in check_latency_forks(result.trace, Rule(rule).value):
            res.forks += 1
            if not chk.isolated:
                continue
            res.isolated += 1
            if chk.violation:
                res.violations.append(f"seed {seed}: {chk.violation} ({','.join(chk.siblings)})")
            if chk.equal_hcr and chk.mixed_order:
                res.contested += 1
                if len(chk.sides_at_all_hold) > 1:
                    res.persisted += 1
            if chk.agreement_lag is not None:
                res.lags.append(chk.agreement_lag)
    res.seconds = time.perf_counter() - start
    return res


# -- 4: tie rate ----------------------------------------------------------------

@dataclass
class TieRateResult:
    l: int
    m_t: int
    pairs: int
    ties: int
    model_p: Fraction
    full_field_p: Fraction
    seconds: float

    @property
    def empirical(self) -> float:
        return self.ties / self.pairs

    @property
    def sigma(self) -> float:
        p = float(self.model_p)
        return math.sqrt(p * (1 - p) / self.pairs)

    @property
    def z(self) -> float:
        return (self.empirical - float(self.model_p)) / self.sigma


def tie_rate(l: int = 12, m_t: int = 4, pairs: int = 1_000_000, seed: int = 0) -> TieRateResult:
    """Same-parent block pairs that POEM cannot order (identical weight and hash)."""
    start = time.perf_counter()
    field = FieldSpec(l)
    rng = make_rng(seed, 7)
    parent = ChainWeight.from_bits(m_t)  # any shared parent weight
    span = 1 << (l - m_t)
    view = [(accumulate(parent, intrinsic_weight(HashValue(h), field)), HashValue(h)) for h in range(span)]
    a = sample_block_hashes(rng, field, m_t, pairs).tolist()
    b = sample_block_hashes(rng, field, m_t, pairs).tolist()
    ties = sum(1 for x, y in zip(a, b) if compare_poem(view[x], view[y]) == 0)
    return TieRateResult(l, m_t, pairs, ties, tie_probability(field, m_t), tie_probability_full_field(field),
                         time.perf_counter() - start)


# -- 5: withholding sweep -------------------------------------------------------

@dataclass
class WithholdRow:
    rule: Rule
    reveal_after: int
    success: bool
    reorg_depth: int
    honest_seen: int


@dataclass
class WithholdingResult:
    rows: List[WithholdRow]
    seconds: float

    def successes(self, rule: Rule) -> Dict[int, bool]:
        return {r.reveal_after: r.success for r in self.rows if r.rule is rule}

    def first_failure(self, rule: Rule) -> Optional[int]:
        fails = [k for k, ok in sorted(self.successes(rule).items()) if k > 0 and not ok]
        return fails[0] if fails else None

    def contrast_row(self) -> Dict[str, Optional[int]]:
        """Honest sub-blocks after which withholding stops paying: HCR vs POEM."""
        return {"hcr": self.first_failure(Rule.HCR), "poem": self.first_failure(Rule.POEM)}


def withholding_sweep(reveal_range: range = range(1, 35), mode: ModeKind = ModeKind.CLAMPED,
                      seed: int = 0) -> WithholdingResult:
    start = time.perf_counter()
    rows = []
    for rule in (Rule.HCR, Rule.POEM):
        for k in reveal_range:
            result = run_attack(withholding_config(rule, k, mode), seed)
            attack = result.attacks[0]
            rows.append(WithholdRow(rule, k, all(attack.adopted.values()), max(attack.reorg.values()),
                                    attack.honest_seen))
    return WithholdingResult(rows, time.perf_counter() - start)


# -- 6: arithmetic fidelity -----------------------------------------------------

@dataclass
class FidelityResult:
    max_log_error: Dict[int, float]
    samples_per_field: int
    dag_blocks: int
    dag_mismatches: int
    seconds: float


def log_accuracy(l: int, samples: int, seed: int = 0) -> float:
    """Largest |fixed-point n - (l - log2 h)| against a 300-bit mpmath oracle."""
    r = random.Random(seed * 1000 + l)
    worst = mpmath.mpf(0)
    with mpmath.workprec(300):
        scale = mpmath.mpf(2) ** -64
        for _ in range(samples):
            h = r.randrange(1, 1 << l)
            n = intrinsic_weight(HashValue(h), FieldSpec(l))
            err = abs(n.raw * scale - (l - mpmath.log(h, 2)))
            if err > worst:
                worst = err
        return float(worst)


def random_dag(blocks: int, seed: int = 0, l: int = 64, m_t: int = 6, m_d: int = 3,
               window: int = 40) -> Tuple[FieldSpec, ThresholdSpec, List[BlockRecord]]:
    """Random merge-mined DAG in insertion order, including off-lineage dominant parents."""
    field, t = FieldSpec(l), ThresholdSpec(m_t, m_d)
    rng = make_rng(seed, 3)
    pick = random.Random(seed)
    used = {0}
    records: List[BlockRecord] = []
    lineage_h: Dict[int, int] = {0: 0}
    dom_h: Dict[int, int] = {0: 0}
    dominants = [HashValue(0)]
    last_dom: Dict[int, HashValue] = {0: HashValue(0)}
    recent = [HashValue(0)]
    while len(records) < blocks:
        h = sample_block_hash(rng, field, m_t)
        if h.value in used:
            continue
        used.add(h.value)
        base = pick.choice(recent[-window:])
        level = classify_level(h, t, field)
        if level is Level.DOMINANT:
            parent = last_dom[base.value] if pick.random() < 0.8 else pick.choice(dominants)
            rec = BlockRecord(h, parent, level, dom_h[parent.value] + 1, sub_tip_ref=base)
            dominants.append(h)
            dom_h[h.value] = rec.height
            last_dom[h.value] = h
        else:
            rec = BlockRecord(h, base, level, lineage_h[base.value] + 1)
            last_dom[h.value] = last_dom[base.value]
        lineage_h[h.value] = lineage_h[base.value] + 1
        records.append(rec)
        recent.append(h)
    return field, t, records


def brute_force_weights(field: FieldSpec, t: ThresholdSpec, records: List[BlockRecord]) -> Dict[int, Tuple[int, int]]:
    """POEM raw weight and HCR weight of every block, each from a fresh closure walk."""
    by_id = {r.id.value: r for r in records}
    out = {}
    for rec in records:
        seen = set()
        stack = [rec.id.value]
        poem = hcr = 0
        while stack:
            v = stack.pop()
            if v in seen or v == 0:
                continue
            seen.add(v)
            b = by_id[v]
            poem += intrinsic_weight(b.id, field).raw
            hcr += 1 << (t.dominant_bits if b.level is Level.DOMINANT else t.m_t)
            stack.append(b.parent.value)
            if b.sub_tip_ref is not None:
                stack.append(b.sub_tip_ref.value)
        out[rec.id.value] = (poem, hcr)
    return out


def arithmetic_fidelity(samples: int = 100_000, dag_blocks: int = 10_000, seed: int = 0,
                        fields: Tuple[int, ...] = (8, 16, 64, 256)) -> FidelityResult:
    start = time.perf_counter()
    errors = {l: log_accuracy(l, samples, seed) for l in fields}
    field, t, records = random_dag(dag_blocks, seed)
    store = ChainStore(field, t)
    for rec in records:
        store.insert_block(rec)
    expected = brute_force_weights(field, t, records)
    mismatches = sum(
        1 for rec in records
        if (store.weight_of(rec.id, Rule.POEM).raw, store.weight_of(rec.id, Rule.HCR)) != expected[rec.id.value]
    )
    return FidelityResult(errors, samples, len(records), mismatches, time.perf_counter() - start)


# -- 7: determinism -------------------------------------------------------------

@dataclass
class DeterminismResult:
    files_compared: int
    mismatched: List[str]
    seconds: float


def determinism(seeds: range = range(10), workers: int = 1) -> DeterminismResult:
    """Run the suite's simulation configs twice per seed and byte-compare every output file."""
    from .runner import run_and_write

    start = time.perf_counter()
    configs = {
        "latency-poem": latency_config(Rule.POEM, horizon=50),
        "latency-hcr": latency_config(Rule.HCR, horizon=50),
        "withhold-poem": replace(withholding_config(Rule.POEM, 2), horizon_blocks=60),
        "withhold-hcr": replace(withholding_config(Rule.HCR, 32), horizon_blocks=60),
    }
    compared, bad = 0, []
    with tempfile.TemporaryDirectory() as tmp:
        for name, cfg in configs.items():
            dirs = [Path(tmp) / name / rep for rep in ("a", "b")]
            for d in dirs:
                run_and_write(cfg, list(seeds), d, workers=workers)
            for f in sorted(dirs[0].iterdir()):
                compared += 1
                if f.read_bytes() != (dirs[1] / f.name).read_bytes():
                    bad.append(f"{name}/{f.name}")
    return DeterminismResult(compared, bad, time.perf_counter() - start)


# -- suite ----------------------------------------------------------------------

@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float


def _criterion(number: int, name: str, fn: Callable[[], Tuple[bool, str]]) -> CriterionResult:
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing experiment is a failed criterion
        ok, detail = False, f"error: {exc!r}"
    return CriterionResult(number, name, ok, detail, time.perf_counter() - start)


def check_overtake() -> Tuple[bool, str]:
    r = overtake_contrast()
    ok = (r.hcr_first_exceeds == 33 and r.hcr_tie_at == 32 and r.poem_first_exceeds == 2
          and r.hcr_tip_switch_at == 33 and r.poem_tip_switch_at == 2 and r.seconds < 1.0)
    return ok, (f"HCR exceeds at k={r.hcr_first_exceeds} (tie at {r.hcr_tie_at}), "
                f"POEM at k={r.poem_first_exceeds}; {r.seconds:.3f}s")


def check_finalization() -> Tuple[bool, str]:
    r = finalization_bound()
    ok = not r.out_of_range and r.seconds < 1.0
    return ok, f"{r.samples} triples, min_blocks in [{r.min_seen}, {r.max_seen}]; {r.seconds:.3f}s"


def check_latency() -> Tuple[bool, str]:
    poem = latency_forks(Rule.POEM)
    hcr = latency_forks(Rule.HCR)
    ok = (not poem.violations and not hcr.violations and poem.isolated > 0
          and hcr.contested > 0 and hcr.persisted == hcr.contested
          and poem.seconds + hcr.seconds < 60)
    return ok, (f"POEM: {poem.isolated} isolated forks, {len(poem.violations)} violations; "
                f"HCR: {hcr.persisted}/{hcr.contested} contested forks persisted; "
                f"{poem.seconds + hcr.seconds:.1f}s")


def check_tie_rate() -> Tuple[bool, str]:
    r = tie_rate()
    ok = abs(r.z) <= 3 and r.seconds < 60
    return ok, (f"empirical {r.empirical:.6f} vs model {float(r.model_p):.6f} (z={r.z:+.2f}); "
                f"full-field figure 1/2^{r.l} = {float(r.full_field_p):.6f}; {r.seconds:.1f}s")


def check_withholding() -> Tuple[bool, str]:
    r = withholding_sweep()
    hcr, poem = r.successes(Rule.HCR), r.successes(Rule.POEM)
    ok = (all(hcr[k] for k in range(1, 32)) and not hcr[32] and not hcr[33]
          and poem[1] and all(not poem[k] for k in range(2, 35))
          and r.contrast_row() == {"hcr": 32, "poem": 2} and r.seconds < 60)
    return ok, (f"withholding stops paying at {r.contrast_row()['hcr']} sub-blocks (HCR) "
                f"vs {r.contrast_row()['poem']} (POEM); {r.seconds:.1f}s")


def check_fidelity() -> Tuple[bool, str]:
    r = arithmetic_fidelity()
    worst = max(r.max_log_error.values())
    ok = worst <= 2.0 ** -60 and r.dag_mismatches == 0 and r.seconds < 60
    return ok, (f"max |error| = 2^{math.log2(worst) if worst else float('-inf'):.1f}; "
                f"{r.dag_mismatches}/{r.dag_blocks} DAG weight mismatches; {r.seconds:.1f}s")


def check_determinism() -> Tuple[bool, str]:
    r = determinism()
    return not r.mismatched, f"{r.files_compared} files byte-compared, {len(r.mismatched)} differ; {r.seconds:.1f}s"


CRITERIA: List[Tuple[int, str, Callable[[], Tuple[bool, str]]]] = [
    (1, "overtake contrast", check_overtake),
    (2, "finite finalization bound", check_finalization),
    (3, "latency-fork resolution", check_latency),
    (4, "tie rate", check_tie_rate),
    (5, "withholding tolerance sweep", check_withholding),
    (6, "arithmetic fidelity", check_fidelity),
    (7, "determinism", check_determinism),
]


def paper_suite(only: Optional[List[int]] = None) -> List[CriterionResult]:
    return [_criterion(n, name, fn) for n, name, fn in CRITERIA if only is None or n in only]
