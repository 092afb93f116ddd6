"""Broadcast medium: Nakagami-m reception, frame airtime, carrier sense and collisions.

Mean received power follows log-distance path loss. The decode threshold
is calibrated so that a frame sent from the nominal range ``R`` is decoded
with probability one half. Under Nakagami-m fading the received power is
gamma distributed with shape ``m``, so the success probability at distance
``d`` is the regularized upper incomplete gamma ``Q(m, q (d/R)^n)`` where
``q`` is the median of a unit-scale gamma variate of shape ``m``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaincc, gammainccinv

from . import _kernels as _k
from .engine import Engine, EventKind

# success probability below which a receiver is not worth considering
DECODE_FLOOR = 1e-6


@dataclass(frozen=True)
class ChannelConfig:
    nakagami_m: float = 1.55
    pathloss_exponent: float = 2.8
    reference_distance: float = 1.0
    data_rate: float = 6e6
    nominal_range: float = 500.0
    sense_margin_db: float = 3.0
    # unit-disk reception (p = 1 inside R, 0 outside); used for hand-checked schedules
    deterministic: bool = False

    def __post_init__(self):
        if not self.nakagami_m > 0.5:
            raise ValueError("nakagami_m must exceed 0.5")
        if not self.nominal_range > 0:
            raise ValueError("nominal_range must be positive")
        if not self.data_rate > 0:
            raise ValueError("data_rate must be positive")
        if not self.pathloss_exponent > 0:
            raise ValueError("pathloss_exponent must be positive")
        if not 0 < self.reference_distance <= self.nominal_range:
            raise ValueError("reference_distance must lie in (0, nominal_range]")

    @property
    def median_gain(self) -> float:
        """``q`` with ``Q(m, q) = 1/2``."""
        return float(gammainccinv(self.nakagami_m, 0.5))

    @property
    def decode_threshold(self) -> float:
        """Decode threshold in units of the mean received power at ``R``."""
        return self.median_gain / self.nakagami_m

    @property
    def audible_range(self) -> float:
        """Distance at which mean power falls ``sense_margin_db`` below the decode threshold."""
        if self.deterministic:
            return self.nominal_range
        margin = 10.0 ** (self.sense_margin_db / 10.0)
        return self.nominal_range * (margin / self.decode_threshold) ** (1.0 / self.pathloss_exponent)

    @property
    def decode_reach(self) -> float:
        """Distance past which an isolated frame decodes with probability below ``DECODE_FLOOR``.

        Never shorter than the audible range.
        """
        if self.deterministic:
            return self.nominal_range
        level = float(gammainccinv(self.nakagami_m, DECODE_FLOOR))
        reach = self.nominal_range * (level / self.median_gain) ** (1.0 / self.pathloss_exponent)
        return max(reach, self.audible_range)


def mean_power(d, cfg: ChannelConfig):
    """Mean received power relative to the mean power at ``R``."""
    d = np.maximum(np.asarray(d, dtype=float), cfg.reference_distance)
    return (cfg.nominal_range / d) ** cfg.pathloss_exponent


def fading_threshold(d, cfg: ChannelConfig):
    """Gamma(m, 1) level a fading draw must reach for a frame to decode at ``d``."""
    d = np.maximum(np.asarray(d, dtype=float), cfg.reference_distance)
    return cfg.median_gain * (d / cfg.nominal_range) ** cfg.pathloss_exponent


def reception_probability(d, cfg: ChannelConfig = ChannelConfig()):
    """Probability that an isolated frame sent from distance ``d`` (m) is decoded."""
    if np.any(np.asarray(d) < 0):
        raise ValueError("distance must be non-negative")
    if cfg.deterministic:
        p = (np.asarray(d, dtype=float) <= cfg.nominal_range).astype(float)
    else:
        p = gammaincc(cfg.nakagami_m, fading_threshold(d, cfg))
    return float(p) if np.ndim(p) == 0 else p


def airtime(nbytes: int, data_rate: float = 6e6, overhead_us: int = 68) -> int:
    """Frame duration in whole microseconds: payload bits rounded up plus PHY overhead."""
    if nbytes <= 0:
        raise ValueError("frame must carry at least one byte")
    bits = 8 * int(nbytes)
    rate = int(data_rate)
    return -(-bits * 1_000_000 // rate) + int(overhead_us)


@dataclass(frozen=True)
class MacConfig:
    slot_us: int = 13
    cw_slots: int = 15
    queue_limit: int = 64
    phy_overhead_us: int = 68
    # time for a new frame to become detectable by carrier sense
    cca_us: int = 4

    def __post_init__(self):
        if self.slot_us < 0 or self.cw_slots < 0 or self.cca_us < 0:
            raise ValueError("MAC timings must be non-negative")
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be at least 1")


class Frame:
    __slots__ = ("frame_id", "src", "header", "nbytes", "airtime", "start",
                 "audible", "distance", "far")

    def __init__(self, frame_id: int, src: int, header, nbytes: int, airtime_us: int):
        self.frame_id = frame_id
        self.src = src
        self.header = header
        self.nbytes = nbytes
        self.airtime = airtime_us
        self.start = -1
        self.audible = None
        self.distance = None
        self.far = None

    def __repr__(self):
        return f"Frame({self.frame_id}, src={self.src}, {self.header!r})"


IDLE, CONTENDING, TRANSMITTING = 0, 1, 2


_NEVER = _k.NEVER


class Medium:
    """CSMA broadcast MAC sharing one channel among ``n`` nodes.

    A node transmits only when it senses the medium idle, after a uniform
    contention backoff of ``0..cw_slots`` slots; a node that finds the
    medium busy waits for it to clear and draws a fresh backoff. Broadcast
    frames are never acknowledged or retried. At a receiver, a frame
    decodes iff no other audible frame (or the receiver's own transmission)
    overlapped it and its fading draw clears the decode threshold for the
    distance at transmission start. Receivers beyond the audible range can
    still decode on a strong fade; such a frame is too weak to occupy their
    medium or to collide with anything else there.

    Pending channel-access attempts live in ``attempt_at``; a single
    TX_START event is armed at the earliest one.
    """

    def __init__(self, n: int, engine: Engine, mobility, channel: ChannelConfig,
                 mac: MacConfig, fading_rng: np.random.Generator,
                 contention_rng: np.random.Generator):
        self.n = n
        self.engine = engine
        self.mobility = mobility
        self.channel = channel
        self.mac = mac
        # backoffs in microseconds, fading levels as Gamma(m, 1) variates
        self._backoffs = _k.DrawPool(
            lambda k: contention_rng.integers(0, mac.cw_slots + 1, size=k) * mac.slot_us,
            dtype=np.int64)
        self._fades = _k.DrawPool(lambda k: fading_rng.gamma(channel.nakagami_m, size=k))
        self._aud2 = channel.audible_range ** 2
        self._reach2 = channel.decode_reach ** 2
        self._q = channel.median_gain
        self._all = np.arange(n, dtype=np.int64)
        self.busy_until = np.zeros(n, dtype=np.int64)
        self.busy_since = np.zeros(n, dtype=np.int64)
        self.last_overlap = np.full(n, -1, dtype=np.int64)
        self.attempt_at = np.full(n, _NEVER, dtype=np.int64)
        self.queues: list[deque] = [deque() for _ in range(n)]
        self.state = [IDLE] * n
        self.current: list[Frame | None] = [None] * n
        self.drops = 0
        self.tx_count = np.zeros(n, dtype=np.int64)
        self._next_frame_id = 0
        self._armed: object | None = None
        self.on_tx_start: Callable[[int, Frame], None] | None = None
        self.on_receive: Callable[[Frame, np.ndarray, int], None] | None = None
        self.on_drop: Callable[[int, object], None] | None = None
        engine.on(EventKind.TX_START, self._contention_due)
        engine.on(EventKind.TX_END, self._tx_end)

    def airtime(self, nbytes: int) -> int:
        return airtime(nbytes, self.channel.data_rate, self.mac.phy_overhead_us)

    def make_frame(self, src: int, header, nbytes: int) -> Frame:
        f = Frame(self._next_frame_id, src, header, nbytes, self.airtime(nbytes))
        self._next_frame_id += 1
        return f

    def broadcast(self, node: int, header, nbytes: int) -> bool:
        """Queue a frame for broadcast. Returns False if the queue was full."""
        q = self.queues[node]
        if len(q) >= self.mac.queue_limit:
            self.drops += 1
            if self.on_drop is not None:
                self.on_drop(node, header)
            return False
        q.append(self.make_frame(node, header, nbytes))
        if self.state[node] == IDLE:
            self.state[node] = CONTENDING
            self._contend(node)
        return True

    def sensed_busy(self, node: int, now: int) -> bool:
        return bool(self.busy_until[node] > now and self.busy_since[node] + self.mac.cca_us <= now)

    def _backoff(self) -> int:
        return self._backoffs.take() if self.mac.cw_slots else 0

    def _arm(self, t: int) -> None:
        ev = self._armed
        if ev is not None and not ev.dispatched and not ev.cancelled:
            if ev.fire_at <= t:
                return
            self.engine.cancel(ev)
        self._armed = self.engine.schedule(EventKind.TX_START, t, None)

    def _rearm(self) -> None:
        t = int(_k.earliest(self.attempt_at))
        if t != _NEVER:
            self._arm(t)

    def _contend(self, node: int) -> None:
        now = self.engine.now
        start = int(self.busy_until[node]) if self.sensed_busy(node, now) else now
        t = start + self._backoff()
        self.attempt_at[node] = t
        self._arm(t)

    def _contention_due(self, _payload) -> None:
        now = self.engine.now
        self._armed = None
        mac = self.mac
        pool = self._backoffs
        pool.ensure(self.n)
        go = _k.due_attempts(self.attempt_at, self.busy_until, self.busy_since, now,
                             mac.cca_us, mac.cw_slots, pool.buf, pool.cur)
        for node in go.tolist():
            self._transmit(node, now)
        self._rearm()

    def _transmit(self, node: int, now: int) -> None:
        frame = self.queues[node].popleft()
        end = now + frame.airtime
        mac = self.mac
        pool = self._backoffs
        pool.ensure(self.n)
        frame.audible, frame.distance, frame.far = _k.start_frame(
            self.mobility.positions(now), node, self._all, now, end, self._aud2, self._reach2,
            self.busy_until, self.busy_since, self.last_overlap, self.attempt_at,
            mac.cca_us, mac.cw_slots, pool.buf, pool.cur)
        frame.start = now
        self.state[node] = TRANSMITTING
        self.current[node] = frame
        self.tx_count[node] += 1
        if self.on_tx_start is not None:
            self.on_tx_start(node, frame)
        self.engine.schedule(EventKind.TX_END, end, node)

    def _tx_end(self, node: int) -> None:
        now = self.engine.now
        frame = self.current[node]
        self.current[node] = None
        fades = self._fades
        fades.ensure(len(frame.audible))
        ch = self.channel
        receivers = _k.finish_frame(frame.audible, frame.distance, frame.far, self.last_overlap,
                                    self.busy_since, frame.start, fades.buf, fades.cur, ch.deterministic, ch.nominal_range,
                                    self._q, ch.pathloss_exponent, ch.reference_distance)
        if self.queues[node]:
            self.state[node] = CONTENDING
            self._contend(node)
        else:
            self.state[node] = IDLE
        if self.on_receive is not None:
            self.on_receive(frame, receivers, now)
