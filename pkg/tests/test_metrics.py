from decimal import Decimal

from poemlab.experiments import latency_config
from poemlab.metrics import aggregate, fmt_rate, read_csv, to_csv
from poemlab.runner import sweep


def test_fmt_rate_half_even():
    assert fmt_rate(0.0000005) == "0.000000"
    assert fmt_rate(0.0000015) == "0.000002"
    assert fmt_rate(None) == ""
    assert fmt_rate(1) == "1.000000"


def test_aggregate_recomputes_from_rows():
    outputs = sweep(latency_config(horizon=20), range(6), workers=1)
    rows = [o.record for o in outputs]
    text = to_csv(rows + [aggregate(rows)])
    parsed = read_csv(text)
    per_run, agg = parsed[:-1], parsed[-1]
    mean = sum(Decimal(r.orphan_rate) for r in per_run) / len(per_run)
    assert agg.orphan_rate == fmt_rate(mean)
    assert agg.blocks == sum(r.blocks for r in per_run)
    assert agg.max_reorg_depth == max(r.max_reorg_depth for r in per_run)
    assert agg.seed == "0..5"


def test_parallel_sweep_matches_serial():
    cfg = latency_config(horizon=15)
    a = sweep(cfg, [3, 1, 2], workers=1)
    b = sweep(cfg, [3, 1, 2], workers=3)
    assert [o.seed for o in a] == [1, 2, 3]
    assert [(o.trace_text, o.record) for o in a] == [(o.trace_text, o.record) for o in b]
