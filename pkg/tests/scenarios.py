"""Random small static scenarios and trace-based checks of the suppression rules."""

from collections import defaultdict

import numpy as np

from bpfsim.simulation import Simulation

from conftest import static_config

VARIANTS = ("bpf", "weighted-p", "slotted-1", "slotted-p")


def random_scenario(rng: np.random.Generator):
    """Positions, sources and config overrides for one small random scenario."""
    n = int(rng.integers(3, 9))
    span = float(rng.choice([600.0, 1000.0, 1500.0]))
    pts = rng.uniform(0.0, span, size=(n, 2))
    n_src = int(rng.integers(1, min(3, n - 1) + 1))
    sources = sorted(int(s) for s in rng.choice(np.arange(1, n), size=n_src, replace=False))
    variant = VARIANTS[int(rng.integers(len(VARIANTS)))]
    overrides = {
        "channel.deterministic": bool(rng.random() < 0.5),
        "mac.cw_slots": int(rng.choice([0, 3, 15])),
        "app.rate_pps": float(rng.choice([5.0, 20.0, 50.0])),
        "duration_s": 0.3,
        "drain_s": 0.5,
        "protocol.slotted_uses_wait_time": bool(rng.random() < 0.7),
        "protocol.wp_uses_wait_time": bool(rng.random() < 0.7),
        "master_seed": int(rng.integers(1, 2**31)),
    }
    return [tuple(p) for p in pts], sources, variant, overrides


def run_traced(positions, sources, variant, overrides):
    events = []
    cfg = static_config(len(positions), variant, len(sources), **overrides)
    sim = Simulation(cfg, 0, positions=positions, sources=sources, trace=events.append)
    sim.run()
    return events


def suppression_violations(events, variant):
    """Return human-readable violations found in one trace.

    * no node starts transmitting the same packet twice;
    * for bpf and the slotted variants, a node that decoded a copy after
      scheduling its forward and strictly before that forward's due time
      never transmits the packet.
    """
    problems = []
    tx = defaultdict(int)
    open_windows = defaultdict(list)    # (node, key) -> fire times of scheduled forwards
    heard_in_window = set()
    for e in events:
        kind = e["kind"]
        if e["packet"] is None:
            continue
        k = (e["node"], tuple(e["packet"]))
        if kind == "TxStart":
            tx[k] += 1
            if tx[k] > 1:
                problems.append(f"node {k[0]} sent {k[1]} twice (t={e['t_us']})")
            if k in heard_in_window:
                problems.append(f"node {k[0]} sent {k[1]} at {e['t_us']} after a duplicate")
        elif kind == "BackoffScheduled":
            open_windows[k].append(e["detail"]["fire_at_us"])
        elif kind == "RxComplete" and variant != "weighted-p":
            if any(e["t_us"] < f for f in open_windows.get(k, ())):
                heard_in_window.add(k)
    return problems


def check_many(count: int, seed: int = 20240601):
    rng = np.random.default_rng(seed)
    failures = []
    stats = defaultdict(int)
    for i in range(count):
        positions, sources, variant, overrides = random_scenario(rng)
        events = run_traced(positions, sources, variant, overrides)
        stats["transmissions"] += sum(e["kind"] == "TxStart" for e in events)
        stats["suppressions"] += sum(e["kind"] == "Suppress" for e in events)
        for p in suppression_violations(events, variant):
            failures.append(f"scenario {i} ({variant}): {p}")
    return failures, dict(stats)
