from poemlab.analysis import TraceIndex, check_latency_forks, measure_orphans


def found(i, bid, parent, t):
    return {"event": "found", "time": t, "id": bid, "parent": parent, "sub_tip_ref": None,
            "level": "subordinate", "miner": "m" + bid}


def ins(event, node, bid, tip, t, outcome="new_tip", reorg=0, n_raw=1):
    return {"event": event, "time": t, "node": node, "id": bid, "outcome": outcome, "adopted": [],
            "tip": tip, "reorg_depth": reorg, "n_raw": n_raw, "hcr": "4"}


def fork_fixture():
    """A and B mine siblings a and b; c on a resolves it for B on the third delivery."""
    return [
        {"event": "header", "nodes": ["A", "B"], "honest_nodes": ["A", "B"], "reference_node": "A"},
        found(0, "a", "0", 1.0), ins("mined", "A", "a", "a", 1.0),
        found(0, "b", "0", 1.1), ins("mined", "B", "b", "b", 1.1),
        ins("deliver", "B", "a", "b", 1.3, outcome="side_branch"),
        ins("deliver", "A", "b", "a", 1.4, outcome="side_branch"),
        found(0, "c", "a", 2.0), ins("mined", "A", "c", "c", 2.0),
        ins("deliver", "B", "c", "c", 2.3, reorg=1),
        {"event": "end", "tips": {"A": "c", "B": "c"}},
    ]


def test_fork_persistence_hand_count():
    stats = measure_orphans(fork_fixture())
    assert stats.forks == 1
    assert stats.mean_fork_persistence == 3
    assert stats.orphaned == 1 and stats.canonical == 2
    assert stats.reorg_histogram == {1: 1}


def test_trace_index_graph():
    idx = TraceIndex(fork_fixture())
    assert idx.depth("c") == 2
    assert idx.descends_from("c", "a") and not idx.descends_from("c", "b")
    assert idx.closure("c") == {"c", "a", "0"}
    assert idx.fork_groups() == [["a", "b"]]


def test_hcr_contested_fork_persists():
    checks = check_latency_forks(fork_fixture(), "hcr")
    (chk,) = checks
    assert chk.isolated and chk.mixed_order and chk.equal_hcr
    assert len(chk.sides_at_all_hold) == 2
    assert chk.violation is None


def test_poem_violation_detected():
    # equal n, so the smaller hash "a" wins; B keeping "b" is a violation
    checks = check_latency_forks(fork_fixture(), "poem")
    assert checks[0].winner == "a"
    assert checks[0].violation is not None
