"""One deterministic simulation run: mobility + medium + forwarding + metrics."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .channel import Medium
from .config import ScenarioConfig
from .engine import US_PER_S, Engine, EventKind, RngStreams, to_us
from .metrics import MetricsCollector, RunReport
from .mobility import ManhattanFleet, SpeedModel, StaticPositions, build_grid, place_nodes
from .protocols import Forwarder, PacketHeader

SINK = 0
STATS_INTERVAL_US = 1_000_000


def select_sources(positions: np.ndarray, count: int, sink: int = SINK,
                   placement: str = "max-spread", rng: np.random.Generator | None = None) -> list[int]:
    """Pick source vehicles.

    ``max-spread`` greedily adds the vehicle farthest (by minimum distance)
    from the sink and the sources chosen so far; ties go to the lower id.
    """
    candidates = [i for i in range(len(positions)) if i != sink]
    if count > len(candidates):
        raise ValueError(f"cannot pick {count} sources from {len(candidates)} vehicles")
    if placement == "random":
        picked = rng.choice(candidates, size=count, replace=False)
        return sorted(int(i) for i in picked)
    cand = np.array(candidates)
    pts = positions[cand]
    mind = np.hypot(*(pts - positions[sink]).T)
    chosen: list[int] = []
    alive = np.ones(len(cand), dtype=bool)
    for _ in range(count):
        score = np.where(alive, mind, -np.inf)
        k = int(np.argmax(score))
        chosen.append(int(cand[k]))
        alive[k] = False
        mind = np.minimum(mind, np.hypot(*(pts - pts[k]).T))
    return chosen


class Simulation:
    """Build and run one scenario instance.

    ``positions`` replaces the Manhattan fleet with fixed node positions
    (node 0 is the sink); ``sources`` overrides source selection;
    ``protocol_rng`` overrides the generator behind the forwarding coins.
    ``trace`` receives one dict per simulator event of interest.
    """

    def __init__(self, cfg: ScenarioConfig, run_index: int = 0, *,
                 positions: Sequence[tuple[float, float]] | None = None,
                 sources: Sequence[int] | None = None,
                 protocol_rng=None,
                 trace: Callable[[dict], None] | None = None,
                 node_trace_interval_s: float | None = None):
        self.cfg = cfg
        self.run_index = run_index
        self.engine = Engine()
        self.streams = RngStreams(cfg.master_seed, run_index)
        self.grid = build_grid(cfg.grid.blocks_x, cfg.grid.blocks_y, cfg.grid.extent_m)
        speeds = SpeedModel(cfg.mobility.min_speed, cfg.mobility.max_speed)

        if positions is not None:
            self.mobility = StaticPositions(positions)
            self.sink_pos = tuple(float(v) for v in self.mobility.positions(0)[SINK])
        else:
            n = cfg.node_count
            states = place_nodes(n, self.grid, self.streams["mobility/placement"], speeds,
                                 sink=cfg.sink)
            rngs = [self.streams[f"mobility/node/{i}"] for i in range(n)]
            self.mobility = ManhattanFleet(self.grid, states, rngs, speeds,
                                           horizon_us=to_us(cfg.duration_s + cfg.drain_s))
            self.sink_pos = (float(cfg.sink[0]), float(cfg.sink[1]))
        self.n = self.mobility.n

        if sources is None:
            sources = select_sources(self.mobility.positions(0), cfg.sources.count, SINK,
                                     cfg.sources.placement, self.streams["app/sources"])
        self.sources = list(sources)

        self.metrics = MetricsCollector()
        self.medium = Medium(
            self.n, self.engine, self.mobility, cfg.channel, cfg.mac,
            self.streams["channel/fading"],
            self.streams["mac/contention"],
        )
        self.forwarder = Forwarder(
            self.n, SINK, cfg.protocol, self.engine, self.mobility,
            send=self._send,
            rng=protocol_rng if protocol_rng is not None else self.streams["protocol/decisions"],
            deliver=self._deliver,
        )
        self.medium.on_tx_start = self._on_tx_start
        self.medium.on_receive = self._on_receive
        self.medium.on_drop = self._on_drop

        self.trace = trace
        if trace is not None:
            self.forwarder.on_suppress = self._trace_suppress
            self.forwarder.on_schedule = self._trace_schedule
        self.transmissions: list[tuple[int, int, tuple[int, int], int]] = []
        self._node_trace_us = (to_us(node_trace_interval_s)
                               if node_trace_interval_s else None)
        self.node_samples: list[tuple[int, np.ndarray]] = []

        self._interval = max(1, int(round(US_PER_S / cfg.app.rate_pps)))
        self._gen_end = to_us(cfg.duration_s)
        self._seq = {s: 0 for s in self.sources}
        # first generation time of each source, uniform over one period
        self.phases = {s: int(self.streams[f"app/node/{s}"].integers(0, self._interval))
                       for s in self.sources}
        self.engine.on(EventKind.APP_GENERATE, self._app_generate)
        self.engine.on(EventKind.STATS_SAMPLE, self._stats)

    # -- wiring ----------------------------------------------------------

    def _emit(self, kind: str, node, packet, detail=None) -> None:
        self.trace({"t_us": self.engine.now, "kind": kind, "node": node,
                    "packet": list(packet) if packet is not None else None, "detail": detail})

    def _send(self, node: int, header: PacketHeader) -> None:
        self.medium.broadcast(node, header, self.cfg.app.packet_bytes)

    def _deliver(self, header: PacketHeader, t: int) -> None:
        first = self.metrics.record_delivery(header.key, t, header.hop_count)
        if self.trace is not None:
            self._emit("Deliver", SINK, header.key, {"first": first, "hops": header.hop_count})

    def _on_tx_start(self, node: int, frame) -> None:
        key = frame.header.key
        self.metrics.record_transmission(key)
        self.transmissions.append((self.engine.now, node, key, frame.header.hop_count))
        if self.trace is not None:
            self._emit("TxStart", node, key, {"frame": frame.frame_id, "hop_count": frame.header.hop_count,
                                              "airtime_us": frame.airtime})

    def _on_receive(self, frame, receivers: np.ndarray, now: int) -> None:
        if self.trace is not None:
            self._emit("TxEnd", frame.src, frame.header.key, {"frame": frame.frame_id})
            for r in receivers.tolist():
                self._emit("RxComplete", r, frame.header.key,
                           {"frame": frame.frame_id, "from": frame.src})
        self.forwarder.receive(receivers, frame.header, now)

    def _on_drop(self, node: int, header) -> None:
        self.metrics.record_drop()
        if self.trace is not None:
            self._emit("MacDrop", node, header.key)

    def _trace_suppress(self, node: int, key, t: int) -> None:
        self._emit("Suppress", node, key)

    def _trace_schedule(self, node: int, key, fire_at: int) -> None:
        self._emit("BackoffScheduled", node, key, {"fire_at_us": fire_at})

    # -- application -----------------------------------------------------

    def _app_generate(self, src: int) -> None:
        now = self.engine.now
        seq = self._seq[src]
        self._seq[src] = seq + 1
        header = PacketHeader(src, seq, self.mobility.position(src, now), self.sink_pos, 1, now)
        self.metrics.record_generation(header.key, now)
        if self.trace is not None:
            self._emit("AppGenerate", src, header.key)
        self.forwarder.originate(src, header)
        nxt = now + self._interval
        if nxt < self._gen_end:
            self.engine.schedule(EventKind.APP_GENERATE, nxt, src)

    def _stats(self, _payload) -> None:
        now = self.engine.now
        self.forwarder.purge(now)
        if self._node_trace_us and now % self._node_trace_us == 0:
            self.node_samples.append((now, self.mobility.positions(now).copy()))
        self.engine.schedule(EventKind.STATS_SAMPLE, now + self._sample_step, None)

    @property
    def _sample_step(self) -> int:
        if self._node_trace_us:
            return math.gcd(STATS_INTERVAL_US, self._node_trace_us)
        return STATS_INTERVAL_US

    # -- driver ------------------------------------------------------------

    def start(self) -> None:
        self.mobility.start(self.engine)
        for s in self.sources:
            if self.phases[s] < self._gen_end:
                self.engine.schedule(EventKind.APP_GENERATE, self.phases[s], s)
        self.engine.schedule(EventKind.STATS_SAMPLE, 0, None)

    def run(self, keep_records: bool = False, backend: str = "reference") -> RunReport:
        """Run to the end of the drain tail.

        ``backend="compiled"`` runs the same scenario through the compiled
        loop; it yields the same report but supports no trace hooks.
        """
        t_end = to_us(self.cfg.duration_s + self.cfg.drain_s)
        if backend == "compiled":
            from ._core import run_compiled
            run_compiled(self, t_end)
        elif backend == "reference":
            self.start()
            self.engine.run_until(t_end)
        else:
            raise ValueError(f"unknown backend {backend!r}; expected 'reference' or 'compiled'")
        return self.report(keep_records)

    def report(self, keep_records: bool = False) -> RunReport:
        rep = self.metrics.report(self.run_index, keep_records)
        rep.mac_drops = self.medium.drops
        return rep


def run_once(cfg: ScenarioConfig, run_index: int = 0, backend: str = "reference",
             **kwargs) -> RunReport:
    return Simulation(cfg, run_index, **kwargs).run(backend=backend)
