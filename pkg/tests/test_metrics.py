import math

import numpy as np
import pytest

from bpfsim.config import ScenarioConfig
from bpfsim.metrics import METRICS, MetricsCollector, RunReport, UnknownPacket, aggregate, mean_ci
from bpfsim.simulation import Simulation


class TestCollector:
    def test_definitions(self):
        m = MetricsCollector()
        for seq, t in enumerate((0, 100, 200, 300)):
            m.record_generation((5, seq), t)
        for _ in range(3):
            m.record_transmission((5, 0))
        assert m.record_delivery((5, 0), 1_100, 3) is True
        assert m.record_delivery((5, 0), 1_500, 2) is False
        assert m.record_delivery((5, 0), 1_900, 4) is False
        assert m.record_delivery((5, 2), 2_200, 1) is True
        r = m.report()
        assert r.pdr_percent == 50.0
        assert r.mean_delay_s == pytest.approx((1_100e-6 + 2_000e-6) / 2)
        assert r.mean_hops == 2.0          # hop count of the first copy only
        assert r.replicas_per_delivered == 1.0
        assert r.total_network_transmissions == 3
        assert (r.generated_count, r.delivered_count) == (4, 2)

    def test_nothing_generated(self):
        r = MetricsCollector().report()
        assert r.pdr_percent is None and r.mean_delay_s is None
        assert r.replicas_per_delivered is None

    def test_unknown_packets(self):
        m = MetricsCollector()
        with pytest.raises(UnknownPacket):
            m.record_delivery((1, 1), 5, 1)
        with pytest.raises(UnknownPacket):
            m.record_transmission((1, 1))

    def test_report_round_trip(self):
        m = MetricsCollector()
        m.record_generation((1, 0), 0)
        m.record_delivery((1, 0), 9, 1)
        r = m.report(run_index=4, keep_records=True)
        assert RunReport.from_dict(r.to_dict(with_records=True)) == r


class TestConfidenceInterval:
    def test_two_point_example(self):
        s = mean_ci([0.0, 100.0])
        # t(0.975, 1) = 12.7062; sample sd = 70.7107; half-width = t * sd / sqrt(2)
        assert s.mean == 50.0
        assert s.ci95_halfwidth == pytest.approx(12.706205 * 70.710678 / math.sqrt(2), rel=1e-6)

    def test_single_and_empty(self):
        assert mean_ci([3.0]).ci95_halfwidth is None
        assert mean_ci([3.0]).mean == 3.0
        assert mean_ci([]).mean is None
        assert mean_ci([None, 2.0, 4.0]).n == 2

    def test_coverage(self):
        rng = np.random.default_rng(17)
        hits = 0
        reps = 4000
        for _ in range(reps):
            s = mean_ci(rng.normal(3.0, 2.0, size=10))
            hits += abs(s.mean - 3.0) <= s.ci95_halfwidth
        se = math.sqrt(0.95 * 0.05 / reps)
        assert abs(hits / reps - 0.95) < 4 * se

    def test_aggregate_needs_reports(self):
        with pytest.raises(ValueError):
            aggregate([])


SHORT = {"duration_s": 1.0, "drain_s": 1.0, "runs": 1}


def test_zero_duration_generates_nothing():
    cfg = ScenarioConfig().with_overrides({**SHORT, "duration_s": 0.0})
    r = Simulation(cfg).run()
    assert r.generated_count == 0 and r.pdr_percent is None


def test_single_run_aggregate_has_no_interval():
    cfg = ScenarioConfig().with_overrides(SHORT)
    agg = aggregate([Simulation(cfg).run(backend="compiled")])
    assert agg.runs == 1
    assert all(agg.halfwidth(m) is None for m in METRICS)


def test_delay_is_generation_to_first_delivery():
    cfg = ScenarioConfig().with_overrides(SHORT)
    sim = Simulation(cfg)
    rep = sim.run(keep_records=True)
    delivered = [r for r in rep.records if r.first_delivery_at is not None]
    assert delivered
    assert rep.mean_delay_s == pytest.approx(
        sum(r.first_delivery_at - r.created_at for r in delivered) / len(delivered) / 1e6)
    assert rep.generated_count == len(rep.records) == sum(sim._seq.values())


def test_paired_runs_share_trajectories_and_generation_times():
    base = ScenarioConfig().with_overrides(SHORT)
    sims = [Simulation(base.with_overrides({"protocol.variant": v}), 2)
            for v in ("bpf", "weighted-p", "slotted-1", "slotted-p")]
    ref = sims[0]
    for s in sims[1:]:
        assert s.sources == ref.sources and s.phases == ref.phases
        for t in (0, 400_000, 1_700_000):
            assert np.array_equal(s.mobility.positions(t), ref.mobility.positions(t))
