"""Per-hop forwarding: BPF and the three broadcast-suppression baselines.

Every receiver of a data frame decides on its own whether and when to
rebroadcast, using only the header (previous-hop and destination
positions) and its own position:

* ``bpf``: backoff proportional to a destination-aware score; a duplicate
  heard before the backoff expires cancels the forward.
* ``weighted-p``: rebroadcast with probability ``D_ij / R``.
* ``slotted-1``: rebroadcast in a distance-derived time slot unless a
  duplicate arrives first.
* ``slotted-p``: as ``slotted-1`` but the rebroadcast happens only with
  probability ``p``.

The baselines can first hold the packet for ``wait_time``
(``wp_uses_wait_time`` and ``slotted_uses_wait_time``). Weighted-p uses
that window to collect copies and decides with the nearest transmitter
heard; the slotted variants keep the first copy's slot, counted from the
end of the window, and any duplicate heard before the slot cancels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as _k
from .engine import Engine, EventKind

VARIANTS = ("bpf", "weighted-p", "slotted-1", "slotted-p")

UNSEEN, PENDING, DONE = 0, 1, 2


@dataclass(frozen=True, slots=True)
class PacketHeader:
    origin: int
    sequence: int
    prev_hop: tuple[float, float]
    dest: tuple[float, float]
    hop_count: int
    created_at: int

    @property
    def key(self) -> tuple[int, int]:
        return (self.origin, self.sequence)

    def forwarded_by(self, position: tuple[float, float]) -> PacketHeader:
        return PacketHeader(self.origin, self.sequence, (float(position[0]), float(position[1])),
                            self.dest, self.hop_count + 1, self.created_at)

    def to_dict(self) -> dict:
        return {
            "origin": self.origin, "sequence": self.sequence,
            "prev_hop": list(self.prev_hop), "dest": list(self.dest),
            "hop_count": self.hop_count, "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PacketHeader:
        try:
            prev = tuple(float(v) for v in d["prev_hop"])
            dest = tuple(float(v) for v in d["dest"])
            if len(prev) != 2 or len(dest) != 2:
                raise ValueError("positions must have two coordinates")
            hdr = cls(int(d["origin"]), int(d["sequence"]), prev, dest,
                      int(d["hop_count"]), int(d["created_at"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedHeader(f"cannot decode header {d!r}: {exc}") from exc
        if hdr.hop_count < 0 or hdr.created_at < 0:
            raise MalformedHeader(f"negative field in header {d!r}")
        return hdr


class MalformedHeader(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    variant: str = "bpf"
    c1_weight: float = 0.0
    p: float = 0.5
    R: float = 500.0
    wait_time_us: int = 5000
    backoff_scale_us: int = 5000
    slots: int = 5
    tau_us: int | None = None
    wp_uses_wait_time: bool = True
    slotted_uses_wait_time: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown protocol {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 <= self.c1_weight <= 1.0:
            raise ValueError("c1_weight must lie in [0, 1]")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.slots < 1:
            raise ValueError("slots must be at least 1")
        if self.backoff_scale_us <= 0:
            raise ValueError("backoff_scale_us must be positive")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if self.wait_time_us < 0 or (self.tau_us is not None and self.tau_us < 0):
            raise ValueError("delays must be non-negative")

    @property
    def collects_duplicates(self) -> bool:
        if self.variant == "weighted-p":
            return self.wp_uses_wait_time
        if self.variant.startswith("slotted"):
            return self.slotted_uses_wait_time
        return False

    @property
    def tau(self) -> int:
        return self.wait_time_us // self.slots if self.tau_us is None else self.tau_us


# -- scoring formulas -------------------------------------------------------
# All accept scalars or numpy arrays.

def _ret(v):
    return float(v) if np.ndim(v) == 0 else v


def compute_c1(D_ij, R):
    """Progress score from the previous hop: 0 at the range edge, 1 on top of it."""
    D = np.minimum(np.asarray(D_ij, dtype=float), R)
    return _ret(1.0 - D / R)


def compute_c2(d_j, d_i, R):
    """Destination score: 0 for a full range of progress, 1 for a full range of regress."""
    v = 1.0 + (np.asarray(d_j, dtype=float) - np.asarray(d_i, dtype=float) - R) / (2.0 * R)
    return _ret(np.clip(v, 0.0, 1.0))


def backoff_value(D_ij, d_j, d_i, R, c1_weight=0.0):
    c2 = compute_c2(d_j, d_i, R)
    if c1_weight == 0.0:
        return c2
    v = c1_weight * np.asarray(compute_c1(D_ij, R)) + (1.0 - c1_weight) * np.asarray(c2)
    return _ret(np.clip(v, 0.0, 1.0))


def _dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def bpf_backoff(header: PacketHeader, my_position, cfg: ProtocolConfig) -> int:
    """Routing backoff in microseconds for one receiver."""
    D_ij = _dist(my_position, header.prev_hop)
    d_j = _dist(my_position, header.dest)
    d_i = _dist(header.prev_hop, header.dest)
    v = backoff_value(D_ij, d_j, d_i, cfg.R, cfg.c1_weight)
    return int(round(v * cfg.backoff_scale_us))


def wp_forward_probability(D_ij, R):
    return _ret(np.minimum(np.asarray(D_ij, dtype=float) / R, 1.0))


def slot_number(D_ij, R, Ns):
    D = np.asarray(D_ij, dtype=float)
    s = np.where(D <= R, np.floor(Ns * (1.0 - np.minimum(D, R) / R) + 1e-9), 0)
    s = s.astype(np.int64)
    return int(s) if np.ndim(s) == 0 else s


def slot_delay(slot, tau):
    """Start of the given slot in microseconds."""
    s = np.asarray(slot, dtype=np.int64)
    if np.any(s < 0):
        raise ValueError("slot must be non-negative")
    return int(s) * int(tau) if s.ndim == 0 else s * int(tau)


# -- forwarding state machine ------------------------------------------------

class _PacketState:
    """Per-node view of one packet.

    ``fire_at`` holds the time of a node's pending event (forward or end of
    collection); ``nearest`` holds the nearest transmitter distance for nodes
    still collecting copies and NaN otherwise.
    """

    __slots__ = ("status", "fire_at", "nearest", "pending", "created_at")

    def __init__(self, n: int, created_at: int):
        self.status = np.zeros(n, dtype=np.int8)
        self.fire_at = np.full(n, _k.NEVER, dtype=np.int64)
        self.nearest = np.full(n, np.nan)
        self.pending: dict[int, object] = {}
        self.created_at = created_at


class Forwarder:
    """Network-wide duplicate table plus the receive/expire handlers.

    ``status[node]`` for a packet is UNSEEN, PENDING (a forward or decision
    event is scheduled) or DONE (forwarded, suppressed, or declined).
    """

    cache_lifetime_us = 10_000_000

    def __init__(self, n: int, sink: int, cfg: ProtocolConfig, engine: Engine, mobility,
                 send: Callable[[int, PacketHeader], None], rng,
                 deliver: Callable[[PacketHeader, int], None]):
        self.n = n
        self.sink = sink
        self.cfg = cfg
        self.engine = engine
        self.mobility = mobility
        self.send = send
        self.rng = rng
        # uniform [0, 1) coins for the probabilistic variants
        self._coins = _k.DrawPool(lambda k: np.asarray(rng.random(k), dtype=float), block=1024)
        self.deliver = deliver
        self.packets: dict[tuple[int, int], _PacketState] = {}
        self.cancelled = 0
        self.on_suppress: Callable[[int, tuple[int, int], int], None] | None = None
        self.on_schedule: Callable[[int, tuple[int, int], int], None] | None = None
        engine.on(EventKind.BACKOFF_EXPIRE, self._expire)

    def state(self, key, created_at: int | None = None) -> _PacketState:
        st = self.packets.get(key)
        if st is None:
            st = _PacketState(self.n, self.engine.now if created_at is None else created_at)
            self.packets[key] = st
        return st

    def originate(self, node: int, header: PacketHeader) -> None:
        """Mark the source as having handled its own packet and send it."""
        st = self.state(header.key, header.created_at)
        st.status[node] = DONE
        self.send(node, header)

    def purge(self, now: int) -> int:
        horizon = now - self.cache_lifetime_us
        stale = [k for k, st in self.packets.items() if st.created_at < horizon and not st.pending]
        for k in stale:
            del self.packets[k]
        return len(stale)

    def _draw(self, size: int) -> np.ndarray:
        self._coins.ensure(size)
        pos = int(self._coins.cur[0])
        self._coins.cur[0] = pos + size
        return self._coins.buf[pos:pos + size]

    def on_receive(self, node: int, header: PacketHeader, rx_time: int | None = None) -> None:
        self.receive(np.array([node]), header, self.engine.now if rx_time is None else rx_time)

    def receive(self, nodes: np.ndarray, header: PacketHeader, rx_time: int) -> None:
        """Handle one decoded frame at every node in ``nodes``."""
        st = self.packets.get(header.key)
        if st is None:
            st = self.state(header.key, header.created_at)
        cfg = self.cfg
        pos_all = self.mobility.positions(rx_time)
        px, py = header.prev_hop
        sink_hit, cancel, new, D = _k.split_receivers(
            nodes, st.status, st.fire_at, st.nearest, pos_all, px, py, self.sink,
            rx_time, cfg.variant != "weighted-p")
        if sink_hit:
            self.deliver(header, rx_time)
        for node in cancel.tolist():
            self.engine.cancel(st.pending.pop(node))
            self.cancelled += 1
            if self.on_suppress is not None:
                self.on_suppress(node, header.key, rx_time)

        if not len(new):
            return
        variant = cfg.variant
        go = None
        if cfg.collects_duplicates:
            delays = np.full(len(new), cfg.wait_time_us, dtype=np.int64)
            st.nearest[new] = D
        elif variant == "bpf":
            dx, dy = header.dest
            delays = _k.bpf_delays(pos_all, new, D, px, py, dx, dy, cfg.R,
                                   cfg.c1_weight, cfg.backoff_scale_us)
        elif variant == "weighted-p":
            delays = np.zeros(len(new), dtype=np.int64)
            go = self._draw(len(new)) < wp_forward_probability(D, cfg.R)
        else:
            delays = _k.slot_delays(D, cfg.R, cfg.slots, cfg.tau)
            if variant == "slotted-p":
                go = self._draw(len(new)) < cfg.p

        st.status[new] = PENDING
        key = header.key
        for i, (node, delay) in enumerate(zip(new.tolist(), delays.tolist())):
            if go is not None and not go[i]:
                st.status[node] = DONE
                continue
            self._schedule(st, node, key, header, rx_time + delay)

    def _schedule(self, st: _PacketState, node: int, key, header: PacketHeader, fire_at: int) -> None:
        st.pending[node] = self.engine.schedule(EventKind.BACKOFF_EXPIRE, fire_at, (node, key, header))
        st.fire_at[node] = fire_at
        if self.on_schedule is not None:
            self.on_schedule(node, key, fire_at)

    def _expire(self, payload) -> None:
        node, key, header = payload
        self.on_forward_expire(node, key, header)

    def on_forward_expire(self, node: int, key, header: PacketHeader) -> None:
        st = self.packets[key]
        del st.pending[node]
        st.fire_at[node] = _k.NEVER
        cfg = self.cfg
        D = float(st.nearest[node])
        if not math.isnan(D):
            # end of the collection window: decide using the nearest transmitter
            st.nearest[node] = math.nan
            if cfg.variant == "weighted-p":
                if not self._draw(1)[0] < wp_forward_probability(D, cfg.R):
                    st.status[node] = DONE
                    return
            else:
                if cfg.variant == "slotted-p" and not self._draw(1)[0] < cfg.p:
                    st.status[node] = DONE
                    return
                delay = int(_k.slot_of(D, cfg.R, cfg.slots)) * cfg.tau
                if delay > 0:
                    self._schedule(st, node, key, header, self.engine.now + delay)
                    return
        st.status[node] = DONE
        pos = self.mobility.position(node, self.engine.now)
        self.send(node, header.forwarded_by(pos))
