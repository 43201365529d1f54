from dataclasses import replace

import pytest

from poemlab.analysis import measure_orphans
from poemlab.chaindag import Rule
from poemlab.config import FixedDelay, LinkSpec, NodeSpec, SimConfig
from poemlab.experiments import latency_config, withholding_config
from poemlab.minesim import MinerSpec, MiningMode
from poemlab.netsim import Simulation, run, run_attack, withholding_attack
from poemlab.runner import trace_to_text


def solo_config(rule=Rule.POEM):
    return SimConfig(
        field_bits=64, m_t=8, m_d=3, rule=rule, mode=MiningMode(),
        miners=(MinerSpec("m", 1.0),), nodes=(NodeSpec("a", ("m",)), NodeSpec("b", ())),
        links=(LinkSpec("a", "b", FixedDelay(200.0)), LinkSpec("b", "a", FixedDelay(200.0))),
        horizon_blocks=60,
    ).validate()


@pytest.mark.parametrize("rule", list(Rule))
def test_single_miner_has_no_orphans(rule):
    stats = measure_orphans(run(solo_config(rule), 4).trace)
    assert stats.orphaned == 0 and stats.orphan_rate == 0.0
    assert stats.blocks >= 60


def test_block_accounting_is_conserved():
    for seed in range(5):
        stats = measure_orphans(run(latency_config(Rule.HCR, horizon=40), seed).trace)
        assert stats.canonical + stats.orphaned + stats.in_flight == stats.blocks


def test_same_seed_same_trace_text():
    cfg = latency_config(Rule.POEM, horizon=30)
    assert trace_to_text(run(cfg, 8).trace) == trace_to_text(run(cfg, 8).trace)
    assert trace_to_text(run(cfg, 8).trace) != trace_to_text(run(cfg, 9).trace)


def test_trace_header_records_rng_and_seed():
    header = run(latency_config(horizon=5), 3).trace[0]
    assert header["event"] == "header"
    assert header["seed"] == 3 and header["rng"] == "philox4x64"
    assert header["config_sha256"] == latency_config(horizon=5).digest()


def test_duplicate_delivery_not_relayed():
    sim = Simulation(latency_config(horizon=5), 0)
    node = sim.nodes[1]
    store0 = sim.nodes[0].store
    sim.now = 1.0
    block = sim._new_block(sim.miners[0])
    sim._insert(sim.nodes[0], block, None, "mined")
    assert sim.on_block_received(node, block, 0) is True
    queued = len(sim.queue)
    assert sim.on_block_received(node, block, 0) is False
    assert len(sim.queue) == queued
    assert block.id in store0


def test_all_nodes_agree_after_drain():
    for seed in range(5):
        result = run(latency_config(Rule.POEM, horizon=30), seed)
        assert len(set(result.final_tips.values())) == 1


@pytest.mark.parametrize("k,succeeds", [(1, True), (31, True), (32, False), (33, False)])
def test_hcr_withholding_boundary(k, succeeds):
    attack = run_attack(withholding_config(Rule.HCR, k), 0).attacks[0]
    assert all(attack.adopted.values()) is succeeds
    if succeeds:
        assert max(attack.reorg.values()) == k


@pytest.mark.parametrize("k,succeeds", [(1, True), (2, False), (5, False)])
def test_poem_withholding_boundary(k, succeeds):
    attack = run_attack(withholding_config(Rule.POEM, k), 0).attacks[0]
    assert all(attack.adopted.values()) is succeeds


def test_withholding_attack_metrics_record():
    rec = withholding_attack(withholding_config(Rule.HCR, 31), 0)
    assert rec.attack_success == "1.000000"
    rec = withholding_attack(withholding_config(Rule.POEM, 2), 0)
    assert rec.attack_success == "0.000000"


def test_invalid_config_names_field():
    with pytest.raises(ValueError, match="horizon_blocks"):
        replace(latency_config(), horizon_blocks=0).validate()
