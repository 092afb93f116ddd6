from conftest import static_sim
from scenarios import check_many, suppression_violations


def test_checker_flags_a_double_send():
    events = [
        {"t_us": 0, "kind": "TxStart", "node": 2, "packet": [1, 0], "detail": {}},
        {"t_us": 5, "kind": "TxStart", "node": 2, "packet": [1, 0], "detail": {}},
    ]
    assert suppression_violations(events, "bpf")


def test_checker_flags_a_send_after_duplicate():
    events = [
        {"t_us": 0, "kind": "BackoffScheduled", "node": 2, "packet": [1, 0], "detail": {"fire_at_us": 900}},
        {"t_us": 500, "kind": "RxComplete", "node": 2, "packet": [1, 0], "detail": {}},
        {"t_us": 900, "kind": "TxStart", "node": 2, "packet": [1, 0], "detail": {}},
    ]
    assert suppression_violations(events, "slotted-1")
    assert not suppression_violations(events, "weighted-p")


def test_duplicate_exactly_at_expiry_does_not_count():
    events = [
        {"t_us": 0, "kind": "BackoffScheduled", "node": 2, "packet": [1, 0], "detail": {"fire_at_us": 900}},
        {"t_us": 900, "kind": "RxComplete", "node": 2, "packet": [1, 0], "detail": {}},
        {"t_us": 900, "kind": "TxStart", "node": 2, "packet": [1, 0], "detail": {}},
    ]
    assert not suppression_violations(events, "bpf")


def test_first_forward_suppresses_slower_relays():
    # relays at x = 450/250/100 hear the source at 751 us and back off
    # 250/1250/2000 us; node 2's forward (1001 us) ends at 1752 us, before
    # node 3 (2001 us) or node 4 (2751 us) fires
    positions = [(900.0, 0.0), (0.0, 0.0), (450.0, 0.0), (250.0, 0.0), (100.0, 0.0)]
    events = []
    sim = static_sim(positions, "bpf", [1], trace=events.append)
    t0 = sim.phases[1]
    sim.run()
    assert not suppression_violations(events, "bpf")
    assert [e["node"] for e in events if e["kind"] == "TxStart"] == [1, 2]
    assert sorted((e["t_us"] - t0, e["node"]) for e in events if e["kind"] == "Suppress") == [
        (1752, 3), (1752, 4)]


def test_duplicate_does_not_unqueue_a_frame_already_at_the_mac():
    # twelve relays 5 m apart fire within 55 us of each other, well inside one
    # airtime: each has handed its frame to the MAC before any copy completes
    positions = [(900.0, 0.0), (0.0, 0.0)] + [(400.0 + 5 * i, 10.0) for i in range(12)]
    events = []
    sim = static_sim(positions, "bpf", [1], trace=events.append)
    sim.run()
    assert not suppression_violations(events, "bpf")
    relays = [e["node"] for e in events if e["kind"] == "TxStart"][1:]
    assert sorted(relays) == list(range(2, 14))
    assert not any(e["kind"] == "Suppress" for e in events)


def test_random_scenarios_smoke():
    failures, stats = check_many(60, seed=7)
    assert failures == []
    assert stats["suppressions"] > 0
