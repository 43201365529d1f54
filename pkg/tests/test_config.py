import json

import pytest

from poemlab.chaindag import Rule
from poemlab.config import dumps, from_dict, loads, parse_seeds, to_dict
from poemlab.entropy import ConfigError
from poemlab.experiments import latency_config, withholding_config
from poemlab.minesim import PrivateChain


def minimal(**over):
    d = {
        "field_bits": 64, "m_t": 8, "m_d": 2,
        "miners": [{"id": "a", "hashrate_fraction": 1.0}],
        "nodes": [{"id": "n", "miners": ["a"]}],
    }
    d.update(over)
    return d


def test_round_trip():
    for cfg in (latency_config(), withholding_config(Rule.HCR, 3)):
        again = loads(dumps(cfg))
        assert again == cfg
        assert dumps(again) == dumps(cfg)


def test_missing_m_t_named():
    d = minimal()
    del d["m_t"]
    with pytest.raises(ConfigError, match="m_t"):
        from_dict(d)


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="delay_seconds"):
        from_dict(minimal(delay_seconds=3))


@pytest.mark.parametrize("over,field", [
    ({"m_t": 0}, "m_t"),
    ({"m_d": 56}, "m_d"),
    ({"miners": [{"id": "a", "hashrate_fraction": 0.9}]}, "hashrate"),
    ({"horizon_blocks": 0}, "horizon_blocks"),
    ({"rule": "longest"}, "rule"),
])
def test_validation_names_field(over, field):
    with pytest.raises(ConfigError, match=field):
        from_dict(minimal(**over))


def test_seed_forms():
    assert parse_seeds(7) == (7, 7)
    assert parse_seeds("1..10") == (1, 10)
    assert parse_seeds([2, 4]) == (2, 4)
    with pytest.raises(ConfigError):
        parse_seeds("x")


def test_links_must_connect_nodes():
    d = minimal(nodes=[{"id": "n", "miners": ["a"]}, {"id": "m", "miners": []}])
    with pytest.raises(ConfigError, match="links"):
        from_dict(d)
    d["links"] = [{"from": "n", "to": "m", "delay": {"fixed_ms": 5}, "bidirectional": True}]
    assert len(from_dict(d).links) == 2


def test_strategy_parsing():
    d = minimal(miners=[
        {"id": "a", "hashrate_fraction": 0.5},
        {"id": "x", "hashrate_fraction": 0.5, "strategy": {"private_chain": {"reveal_margin_bits": 1.5}}},
    ], nodes=[{"id": "n", "miners": ["a"]}, {"id": "m", "miners": ["x"]}],
        links=[{"from": "n", "to": "m", "delay": {"exponential_mean_ms": 50}, "bidirectional": True}])
    cfg = from_dict(d)
    assert isinstance(cfg.miners[1].strategy, PrivateChain)
    assert json.loads(dumps(cfg))["miners"][1]["strategy"] == to_dict(cfg)["miners"][1]["strategy"]
