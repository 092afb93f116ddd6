"""Per-run delivery measurements and cross-run confidence intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

from scipy import stats

METRICS = (
    "pdr_percent",
    "mean_delay_s",
    "mean_hops",
    "replicas_per_delivered",
    "total_network_transmissions",
    "mac_drops",
)


class UnknownPacket(RuntimeError):
    """A delivery or transmission refers to a packet that was never generated."""


@dataclass
class PacketRecord:
    origin: int
    sequence: int
    created_at: int
    first_delivery_at: int | None = None
    hop_count_at_first_delivery: int | None = None
    replica_count: int = 0
    transmissions: int = 0

    @property
    def delay_us(self) -> int | None:
        if self.first_delivery_at is None:
            return None
        return self.first_delivery_at - self.created_at


@dataclass
class RunReport:
    pdr_percent: float | None
    mean_delay_s: float | None
    mean_hops: float | None
    replicas_per_delivered: float | None
    total_network_transmissions: int
    mac_drops: int
    generated_count: int
    delivered_count: int = 0
    run_index: int = 0
    records: list[PacketRecord] = field(default_factory=list, repr=False)

    def metric(self, name: str):
        return getattr(self, name)

    def to_dict(self, with_records: bool = False) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "records"}
        if with_records:
            d["records"] = [asdict(r) for r in self.records]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunReport:
        d = dict(d)
        records = [PacketRecord(**r) for r in d.pop("records", [])]
        return cls(**d, records=records)


class MetricsCollector:
    def __init__(self):
        self.records: dict[tuple[int, int], PacketRecord] = {}
        self.total_transmissions = 0
        self.mac_drops = 0

    def record_generation(self, key: tuple[int, int], t: int) -> PacketRecord:
        rec = PacketRecord(key[0], key[1], t)
        self.records[key] = rec
        return rec

    def record_transmission(self, key: tuple[int, int]) -> None:
        rec = self.records.get(key)
        if rec is None:
            raise UnknownPacket(f"transmission of unknown packet {key}")
        rec.transmissions += 1
        self.total_transmissions += 1

    def record_drop(self) -> None:
        self.mac_drops += 1

    def record_delivery(self, key: tuple[int, int], t: int, hops: int) -> bool:
        """Register a copy arriving at the sink; returns True for the first copy."""
        rec = self.records.get(key)
        if rec is None:
            raise UnknownPacket(f"delivery of unknown packet {key}")
        if rec.first_delivery_at is None:
            rec.first_delivery_at = t
            rec.hop_count_at_first_delivery = hops
            return True
        rec.replica_count += 1
        return False

    def report(self, run_index: int = 0, keep_records: bool = False) -> RunReport:
        recs = list(self.records.values())
        delivered = [r for r in recs if r.first_delivery_at is not None]
        gen = len(recs)
        nd = len(delivered)
        return RunReport(
            pdr_percent=100.0 * nd / gen if gen else None,
            mean_delay_s=(sum(r.delay_us for r in delivered) / nd / 1e6) if nd else None,
            mean_hops=(sum(r.hop_count_at_first_delivery for r in delivered) / nd) if nd else None,
            replicas_per_delivered=(sum(r.replica_count for r in delivered) / nd) if nd else None,
            total_network_transmissions=self.total_transmissions,
            mac_drops=self.mac_drops,
            generated_count=gen,
            delivered_count=nd,
            run_index=run_index,
            records=recs if keep_records else [],
        )


@dataclass
class MetricSummary:
    mean: float | None
    ci95_halfwidth: float | None
    n: int


@dataclass
class AggregateReport:
    runs: int
    metrics: dict[str, MetricSummary]

    def mean(self, name: str) -> float | None:
        return self.metrics[name].mean

    def halfwidth(self, name: str) -> float | None:
        return self.metrics[name].ci95_halfwidth

    def to_dict(self) -> dict:
        return {"runs": self.runs, "metrics": {k: asdict(v) for k, v in self.metrics.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> AggregateReport:
        return cls(d["runs"], {k: MetricSummary(**v) for k, v in d["metrics"].items()})


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> MetricSummary:
    """Sample mean and Student-t confidence half-width (None below two samples)."""
    xs = [float(v) for v in values if v is not None]
    n = len(xs)
    if n == 0:
        return MetricSummary(None, None, 0)
    mean = math.fsum(xs) / n
    if n < 2:
        return MetricSummary(mean, None, n)
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    t = stats.t.ppf(0.5 + confidence / 2.0, n - 1)
    return MetricSummary(mean, float(t * math.sqrt(var / n)), n)


def aggregate(reports: Sequence[RunReport]) -> AggregateReport:
    if not reports:
        raise ValueError("aggregate needs at least one report")
    return AggregateReport(
        runs=len(reports),
        metrics={m: mean_ci([r.metric(m) for r in reports]) for m in METRICS},
    )
