"""The compiled event loop must reproduce the reference engine exactly."""

import pytest

from bpfsim.config import ScenarioConfig
from bpfsim.simulation import Simulation

VARIANTS = ["bpf", "weighted-p", "slotted-1", "slotted-p"]

SHORT = {"duration_s": 2.0, "drain_s": 1.0, "runs": 1}


def both(cfg, run_index=0, **kwargs):
    ref = Simulation(cfg, run_index, **kwargs)
    r1 = ref.run(keep_records=True, backend="reference")
    comp = Simulation(cfg, run_index, **kwargs)
    r2 = comp.run(keep_records=True, backend="compiled")
    return (ref, r1), (comp, r2)


def assert_identical(a, b):
    (sa, ra), (sb, rb) = a, b
    assert ra.to_dict(with_records=True) == rb.to_dict(with_records=True)
    assert sa.forwarder.cancelled == sb.forwarder.cancelled
    assert sa.medium.drops == sb.medium.drops


@pytest.mark.parametrize("variant", VARIANTS)
def test_default_scenario(variant):
    cfg = ScenarioConfig().with_overrides({**SHORT, "protocol.variant": variant})
    assert_identical(*both(cfg))


@pytest.mark.parametrize("variant,overrides", [
    ("bpf", {"nodes.density_per_km": 2.4, "master_seed": 9}),
    ("bpf", {"protocol.c1_weight": 0.5, "sources.count": 30}),
    ("weighted-p", {"protocol.wp_uses_wait_time": False, "sources.count": 40}),
    ("slotted-1", {"protocol.slotted_uses_wait_time": False, "nodes.density_per_km": 4.8}),
    ("slotted-p", {"protocol.p": 0.8, "mac.queue_limit": 2, "sources.count": 60}),
    ("bpf", {"channel.deterministic": True, "sources.placement": "random"}),
    ("slotted-1", {"channel.sense_margin_db": 10.0, "app.rate_pps": 20.0}),
    ("weighted-p", {"mac.cw_slots": 0, "protocol.R": 400.0}),
])
def test_varied_scenarios(variant, overrides):
    cfg = ScenarioConfig().with_overrides({**SHORT, "protocol.variant": variant, **overrides})
    assert_identical(*both(cfg, run_index=3))


@pytest.mark.parametrize("variant", VARIANTS)
def test_static_topology(variant):
    positions = [(850.0, 500.0), (0.0, 500.0), (400.0, 500.0), (300.0, 800.0), (300.0, 200.0),
                 (600.0, 450.0)]
    cfg = ScenarioConfig().with_overrides({**SHORT, "nodes.total": 6, "sources.count": 2,
                                           "protocol.variant": variant, "app.rate_pps": 50.0})
    assert_identical(*both(cfg, positions=positions, sources=[1, 3]))


def test_compiled_rejects_tracing():
    cfg = ScenarioConfig().with_overrides(SHORT)
    with pytest.raises(ValueError):
        Simulation(cfg, trace=lambda e: None).run(backend="compiled")


def test_unknown_backend():
    with pytest.raises(ValueError):
        Simulation(ScenarioConfig().with_overrides(SHORT)).run(backend="gpu")
