"""Compiled inner loops for the medium and fleet.

Each transmission touches every node once or twice; doing that work in a
handful of numpy calls costs more in call overhead than in arithmetic for
networks of a few hundred nodes, so the per-frame loops live here.
Random variates reach the kernels through a ``DrawPool``: a block of
draws taken in order from one named generator, consumed through a cursor.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from numba import njit

NEVER = np.iinfo(np.int64).max

_HERE = Path(__file__).resolve().parent
_COMPILED_SOURCES = ("_kernels.py", "_core.py")


def _install_cache_locator() -> None:
    """Key numba's on-disk cache on the contents of every compiled module.

    Numba only checks the modification stamp of the file that defines a
    cached function, so the event loop in ``_core`` would keep running stale
    copies of kernels edited here. Stamping with a hash of both files makes
    any edit to either one recompile both.
    """
    try:
        from numba.core import caching
    except ImportError:  # pragma: no cover - numba without the caching module
        return

    digest = hashlib.sha256()
    for name in _COMPILED_SOURCES:
        digest.update((_HERE / name).read_bytes())
    stamp = ("bpfsim", digest.hexdigest())

    class _Stamped:
        def get_source_stamp(self):
            return stamp

        @classmethod
        def from_function(cls, py_func, py_file):
            if Path(py_file).resolve().parent != _HERE:
                return None
            return super().from_function(py_func, py_file)

    in_tree = type("BpfsimInTreeLocator", (_Stamped, caching.InTreeCacheLocator), {})
    user_wide = type("BpfsimUserWideLocator", (_Stamped, caching.UserWideCacheLocator), {})
    classes = caching.CacheImpl._locator_classes
    if not any(c.__name__ == in_tree.__name__ for c in classes):
        classes[0:0] = [in_tree, user_wide]


_install_cache_locator()


class DrawPool:
    """Pre-drawn variates from ``draw(size)`` with a cursor shared with the kernels."""

    def __init__(self, draw, block: int = 8192, dtype=np.float64):
        self._draw = draw
        self._block = block
        self.buf = np.empty(0, dtype=dtype)
        self.cur = np.zeros(1, dtype=np.int64)

    def ensure(self, k: int) -> None:
        pos = int(self.cur[0])
        if len(self.buf) - pos < k:
            fresh = self._draw(max(self._block, k))
            self.buf = np.concatenate([self.buf[pos:], fresh.astype(self.buf.dtype)])
            self.cur[0] = 0

    def take(self):
        self.ensure(1)
        pos = int(self.cur[0])
        self.cur[0] = pos + 1
        return self.buf[pos].item()


@njit(cache=True)
def _next(buf, cur):
    v = buf[cur[0]]
    cur[0] += 1
    return v


@njit(cache=True)
def trajectory_positions(offsets, t0, x0, y0, vx, vy, cursor, stamp, nodes, t_us, hi_x, hi_y, out):
    """Write the positions of ``nodes`` at ``t_us`` into ``out``.

    ``cursor`` holds each node's current run and ``stamp`` the time its row
    of ``out`` was computed for; rows already at ``t_us`` are left alone.
    """
    for idx in range(nodes.shape[0]):
        i = nodes[idx]
        if stamp[i] == t_us:
            continue
        k = cursor[i]
        if t_us < stamp[i]:
            k = offsets[i]
        last = offsets[i + 1] - 1
        while k < last and t0[k + 1] <= t_us:
            k += 1
        cursor[i] = k
        stamp[i] = t_us
        dt = (t_us - t0[k]) / 1e6
        x = x0[k] + vx[k] * dt
        y = y0[k] + vy[k] * dt
        out[i, 0] = min(max(x, 0.0), hi_x)
        out[i, 1] = min(max(y, 0.0), hi_y)


@njit(cache=True)
def start_frame(pos, node, cands, now, end, aud2, reach2, busy_until, busy_since, last_overlap,
                attempt_at, cca_us, cw_slots, bo_buf, bo_cur):
    """Mark the medium busy around ``node`` and return its potential receivers.

    The result is (receivers, their distances, far flags). Nodes within
    ``aud2`` (squared sense range) hear the frame: their medium turns busy
    and contenders that will sense it before their attempt are pushed past
    its end with a fresh backoff. Nodes beyond it but within ``reach2`` are
    flagged far: they leave no trace on the medium but may still catch a
    lucky fade. A far node that is already busy gets an infinite distance,
    so it cannot decode.

    ``cands`` lists, in ascending order, every node that may lie within
    reach (all nodes will do); only their rows of ``pos`` are read.
    """
    m = cands.shape[0]
    sx = pos[node, 0]
    sy = pos[node, 1]
    aud = np.empty(m, dtype=np.int64)
    dist = np.empty(m, dtype=np.float64)
    far = np.zeros(m, dtype=np.bool_)
    k = 0
    for c in range(m):
        j = cands[c]
        if j == node:
            continue
        dx = pos[j, 0] - sx
        dy = pos[j, 1] - sy
        d2 = dx * dx + dy * dy
        if d2 > reach2:
            continue
        aud[k] = j
        dist[k] = np.sqrt(d2)
        if d2 > aud2:
            far[k] = True
            if busy_until[j] > now:
                dist[k] = np.inf
            k += 1
            continue
        k += 1
        if busy_until[j] > now:
            last_overlap[j] = now
        else:
            busy_since[j] = now
        if end > busy_until[j]:
            busy_until[j] = end
        a = attempt_at[j]
        if a != NEVER and a >= now + cca_us and a < busy_until[j]:
            b = _next(bo_buf, bo_cur) if cw_slots > 0 else 0
            attempt_at[j] = busy_until[j] + b
    # half duplex: whatever the transmitter was receiving is lost
    last_overlap[node] = now
    if busy_until[node] <= now:
        busy_since[node] = now
    if end > busy_until[node]:
        busy_until[node] = end
    return aud[:k], dist[:k], far[:k]


@njit(cache=True)
def due_attempts(attempt_at, busy_until, busy_since, now, cca_us, cw_slots, bo_buf, bo_cur):
    """Nodes whose access attempt is due and who find the medium idle.

    Due nodes that sense a busy medium are rescheduled after it clears.
    Returned nodes have their attempt cleared.
    """
    n = attempt_at.shape[0]
    go = np.empty(n, dtype=np.int64)
    k = 0
    for j in range(n):
        if attempt_at[j] > now:
            continue
        if busy_until[j] > now and busy_since[j] + cca_us <= now:
            b = _next(bo_buf, bo_cur) if cw_slots > 0 else 0
            attempt_at[j] = busy_until[j] + b
        else:
            attempt_at[j] = NEVER
            go[k] = j
            k += 1
    return go[:k]


@njit(cache=True)
def finish_frame(aud, dist, far, last_overlap, busy_since, start, g_buf, g_cur,
                 deterministic, nominal_range, q, exponent, ref_dist):
    """Receivers that decode a frame: no overlap since ``start`` and a good enough channel.

    A far receiver never marked itself busy for this frame, so any busy
    period that began at ``start`` or later means something it can hear
    overlapped the frame.

    With ``deterministic`` set a receiver needs only to lie within
    ``nominal_range``; otherwise its Gamma(m, 1) fading draw must reach the
    level required at its distance ``dist``.
    """
    out = np.empty(aud.shape[0], dtype=np.int64)
    k = 0
    for i in range(aud.shape[0]):
        j = aud[i]
        if last_overlap[j] >= start or (far[i] and busy_since[j] >= start):
            continue
        d = dist[i]
        if deterministic:
            ok = d <= nominal_range
        else:
            ok = _next(g_buf, g_cur) >= q * (max(d, ref_dist) / nominal_range) ** exponent
        if ok:
            out[k] = j
            k += 1
    return out[:k]


@njit(cache=True)
def earliest(a):
    best = NEVER
    for v in a:
        if v < best:
            best = v
    return best


@njit(cache=True)
def split_receivers(nodes, status, fire_at, nearest, pos, px, py, sink, rx_time, suppresses):
    """Apply one decoded frame to a packet's per-node state.

    Returns (sink among receivers, nodes whose pending forward is now
    suppressed, first-time receivers, their distances to the previous hop
    at ``(px, py)``). With ``suppresses`` set, any copy that beats a node's
    pending event cancels it, including a collection window; otherwise
    nodes still collecting copies (``nearest`` not NaN) only lower their
    nearest-transmitter distance. Suppressed nodes are
    marked done here; first-time receivers are left for the caller.
    """
    m = nodes.shape[0]
    cancel = np.empty(m, dtype=np.int64)
    new = np.empty(m, dtype=np.int64)
    d_new = np.empty(m, dtype=np.float64)
    a = 0
    b = 0
    hit = False
    for i in range(m):
        j = nodes[i]
        if j == sink:
            hit = True
            continue
        d = np.hypot(pos[j, 0] - px, pos[j, 1] - py)
        if status[j] == 0:
            new[b] = j
            d_new[b] = d
            b += 1
        elif suppresses and status[j] == 1 and rx_time < fire_at[j]:
            status[j] = 2
            fire_at[j] = NEVER
            nearest[j] = np.nan
            cancel[a] = j
            a += 1
        elif not np.isnan(nearest[j]):
            if d < nearest[j]:
                nearest[j] = d
    return hit, cancel[:a], new[:b], d_new[:b]


@njit(cache=True)
def bpf_delays(pos, nodes, D, px, py, dx, dy, R, c1_weight, scale):
    """Routing backoff (µs) of each node in ``nodes`` for a frame sent from ``(px, py)``."""
    d_i = np.hypot(px - dx, py - dy)
    out = np.empty(nodes.shape[0], dtype=np.int64)
    for i in range(nodes.shape[0]):
        j = nodes[i]
        d_j = np.hypot(pos[j, 0] - dx, pos[j, 1] - dy)
        v = min(max(1.0 + (d_j - d_i - R) / (2.0 * R), 0.0), 1.0)
        if c1_weight != 0.0:
            c1 = 1.0 - min(D[i], R) / R
            v = min(max(c1_weight * c1 + (1.0 - c1_weight) * v, 0.0), 1.0)
        out[i] = np.int64(np.rint(v * scale))
    return out


@njit(cache=True)
def slot_of(D, R, slots):
    if D > R:
        return 0
    return np.int64(np.floor(slots * (1.0 - min(D, R) / R) + 1e-9))


@njit(cache=True)
def slot_delays(D, R, slots, tau):
    out = np.empty(D.shape[0], dtype=np.int64)
    for i in range(D.shape[0]):
        out[i] = slot_of(D[i], R, slots) * tau
    return out
