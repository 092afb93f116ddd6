"""Compiled event loop for batch runs.

``Simulation`` wires Python objects together and dispatches through
``Engine``; that path is easy to trace and to hook into, but pays Python
call overhead on every frame. This module runs the same scenario as one
compiled loop over flat arrays. Handlers here follow the reference
handlers step for step, share their kernels and draw from the same
pools in the same order, so both paths produce identical transmissions
and reports (checked by the test suite).

All loop state lives in a ``CoreState`` of numpy arrays, so the loop can
stop and resume: when a draw pool runs low or a table fills up it returns
a status code, the driver refills or grows, and calls it again.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

from . import _kernels as _k
from .engine import EventKind, SchedulingError

NEVER = _k.NEVER

# registers
NOW, SEQ, HSIZE, ARMED, NFREE_EV, NGEN, TOTAL_TX, DROPS, NFREE_SLOT, NLOG, CANCELLED, BUCKET_T = range(12)
N_REGS = 12

# status codes returned by ``run``
DONE, NEED_DRAWS, NEED_EVENTS, NEED_SLOTS, NEED_LOG, PAST_EVENT = range(6)

# protocol variants
V_BPF, V_WP, V_S1, V_SP = range(4)

IDLE, CONTENDING, TRANSMITTING = 0, 1, 2
UNSEEN, PENDING, DONE_ST = 0, 1, 2

K_APP = int(EventKind.APP_GENERATE)
K_TX_START = int(EventKind.TX_START)
K_TX_END = int(EventKind.TX_END)
K_BACKOFF = int(EventKind.BACKOFF_EXPIRE)
K_STATS = int(EventKind.STATS_SAMPLE)

PURGE_AGE_US = 10_000_000

# spatial index: cell edge (m) and how long (µs) a bucketing is reused
CELL_M = 250.0
REBUCKET_US = 1_000_000


class CoreParams(NamedTuple):
    n: int
    sink: int
    dest_x: float
    dest_y: float
    variant: int
    collects: bool
    R: float
    c1_weight: float
    backoff_scale: int
    slots: int
    tau: int
    wait_time: int
    p: float
    airtime: int
    aud2: float
    reach2: float
    cca_us: int
    cw_slots: int
    queue_limit: int
    deterministic: bool
    nominal_range: float
    median_gain: float
    exponent: float
    ref_dist: float
    hi_x: float
    hi_y: float
    interval: int
    gen_end: int
    stats_step: int
    draw_reserve: int
    log_tx: bool
    ncx: int
    ncy: int
    vmax: float


class CoreState(NamedTuple):
    regs: np.ndarray
    # engine: heap of (time, seq, id) and the event table
    h_time: np.ndarray
    h_seq: np.ndarray
    h_id: np.ndarray
    ev_kind: np.ndarray
    ev_fire: np.ndarray
    ev_node: np.ndarray
    ev_pkt: np.ndarray
    ev_hop: np.ndarray
    ev_cancel: np.ndarray
    ev_free: np.ndarray
    # mobility
    tr_off: np.ndarray
    tr_t0: np.ndarray
    tr_x0: np.ndarray
    tr_y0: np.ndarray
    tr_vx: np.ndarray
    tr_vy: np.ndarray
    tr_cursor: np.ndarray
    tr_stamp: np.ndarray
    all_nodes: np.ndarray
    pos: np.ndarray
    # spatial index over positions at regs[BUCKET_T]: cell c holds
    # cell_nodes[cell_start[c]:cell_start[c + 1]]
    cell_start: np.ndarray
    cell_nodes: np.ndarray
    mark: np.ndarray
    # medium
    busy_until: np.ndarray
    busy_since: np.ndarray
    last_overlap: np.ndarray
    attempt_at: np.ndarray
    mac_state: np.ndarray
    tx_count: np.ndarray
    q_pkt: np.ndarray
    q_hop: np.ndarray
    q_px: np.ndarray
    q_py: np.ndarray
    q_head: np.ndarray
    q_len: np.ndarray
    cur_pkt: np.ndarray
    cur_hop: np.ndarray
    cur_start: np.ndarray
    cur_px: np.ndarray
    cur_py: np.ndarray
    cur_aud: np.ndarray
    cur_dist: np.ndarray
    cur_far: np.ndarray
    cur_naud: np.ndarray
    # draw pools
    bo_buf: np.ndarray
    bo_cur: np.ndarray
    fd_buf: np.ndarray
    fd_cur: np.ndarray
    cn_buf: np.ndarray
    cn_cur: np.ndarray
    # application and per-packet metrics, indexed by generation order
    app_seq: np.ndarray
    pkt_origin: np.ndarray
    pkt_seq: np.ndarray
    pkt_created: np.ndarray
    pkt_first: np.ndarray
    pkt_hops: np.ndarray
    pkt_rep: np.ndarray
    pkt_tx: np.ndarray
    pkt_slot: np.ndarray
    # per-packet forwarding state slots
    sl_status: np.ndarray
    sl_fire: np.ndarray
    sl_near: np.ndarray
    sl_ev: np.ndarray
    sl_pending: np.ndarray
    sl_created: np.ndarray
    sl_pkt: np.ndarray
    sl_live: np.ndarray
    sl_free: np.ndarray
    # transmission log rows: (time, node, packet, hop_count)
    log: np.ndarray


# -- main loop ---------------------------------------------------------------
#
# Passing the state tuple to a compiled function costs a reference-count
# round trip per member array, which dwarfs the work in small helpers. The
# handlers are therefore inner functions of ``run`` over its local names;
# numba inlines them, so the helpers below cost nothing to call.

@njit(cache=True)
def run(s, p, t_end):
    """Dispatch events up to ``t_end``; returns DONE or the reason it paused."""
    n = p.n
    regs = s.regs
    h_time, h_seq, h_id = s.h_time, s.h_seq, s.h_id
    ev_kind, ev_fire, ev_node, ev_pkt, ev_hop = s.ev_kind, s.ev_fire, s.ev_node, s.ev_pkt, s.ev_hop
    ev_cancel, ev_free = s.ev_cancel, s.ev_free
    busy_until, busy_since, last_overlap, attempt_at = (s.busy_until, s.busy_since,
                                                        s.last_overlap, s.attempt_at)
    mac_state, tx_count = s.mac_state, s.tx_count
    q_pkt, q_hop, q_px, q_py, q_head, q_len = s.q_pkt, s.q_hop, s.q_px, s.q_py, s.q_head, s.q_len
    cur_pkt, cur_hop, cur_start, cur_px, cur_py = (s.cur_pkt, s.cur_hop, s.cur_start,
                                                   s.cur_px, s.cur_py)
    cur_aud, cur_dist, cur_far, cur_naud = s.cur_aud, s.cur_dist, s.cur_far, s.cur_naud
    bo_buf, bo_cur, fd_buf, fd_cur, cn_buf, cn_cur = (s.bo_buf, s.bo_cur, s.fd_buf, s.fd_cur,
                                                      s.cn_buf, s.cn_cur)
    app_seq = s.app_seq
    pkt_origin, pkt_seq, pkt_created, pkt_first = s.pkt_origin, s.pkt_seq, s.pkt_created, s.pkt_first
    pkt_hops, pkt_rep, pkt_tx, pkt_slot = s.pkt_hops, s.pkt_rep, s.pkt_tx, s.pkt_slot
    sl_status, sl_fire, sl_near, sl_ev = s.sl_status, s.sl_fire, s.sl_near, s.sl_ev
    sl_pending, sl_created, sl_pkt, sl_live, sl_free = (s.sl_pending, s.sl_created, s.sl_pkt,
                                                        s.sl_live, s.sl_free)
    log = s.log
    tr_off, tr_t0, tr_x0, tr_y0, tr_vx, tr_vy = s.tr_off, s.tr_t0, s.tr_x0, s.tr_y0, s.tr_vx, s.tr_vy
    tr_cursor, tr_stamp, all_nodes, pos_buf = s.tr_cursor, s.tr_stamp, s.all_nodes, s.pos
    cell_start, cell_nodes, mark = s.cell_start, s.cell_nodes, s.mark
    ncx, ncy = p.ncx, p.ncy
    reach = np.sqrt(p.reach2)
    variant = p.variant
    cca_us, cw_slots, queue_limit = p.cca_us, p.cw_slots, p.queue_limit
    R, slots, tau = p.R, p.slots, p.tau

    # -- engine --

    def less(a, b):
        ta = h_time[a]
        tb = h_time[b]
        return ta < tb or (ta == tb and h_seq[a] < h_seq[b])

    def swap(a, b):
        h_time[a], h_time[b] = h_time[b], h_time[a]
        h_seq[a], h_seq[b] = h_seq[b], h_seq[a]
        h_id[a], h_id[b] = h_id[b], h_id[a]

    def schedule(kind, fire_at, node, pkt, hop):
        if fire_at < regs[NOW]:
            return -1
        regs[NFREE_EV] -= 1
        eid = ev_free[regs[NFREE_EV]]
        ev_kind[eid] = kind
        ev_fire[eid] = fire_at
        ev_node[eid] = node
        ev_pkt[eid] = pkt
        ev_hop[eid] = hop
        ev_cancel[eid] = False
        i = regs[HSIZE]
        regs[HSIZE] = i + 1
        h_time[i] = fire_at
        h_seq[i] = regs[SEQ]
        h_id[i] = eid
        regs[SEQ] += 1
        while i > 0:
            parent = (i - 1) >> 1
            if not less(i, parent):
                break
            swap(i, parent)
            i = parent
        return eid

    def pop():
        eid = h_id[0]
        last = regs[HSIZE] - 1
        regs[HSIZE] = last
        if last > 0:
            h_time[0] = h_time[last]
            h_seq[0] = h_seq[last]
            h_id[0] = h_id[last]
            i = 0
            while True:
                l = 2 * i + 1
                if l >= last:
                    break
                c = l
                if l + 1 < last and less(l + 1, l):
                    c = l + 1
                if not less(c, i):
                    break
                swap(i, c)
                i = c
        return eid

    def release(eid):
        ev_free[regs[NFREE_EV]] = eid
        regs[NFREE_EV] += 1

    # -- helpers --

    def locate(nodes, t):
        # rows of ``pos_buf`` are valid only for nodes located at ``t``
        _k.trajectory_positions(tr_off, tr_t0, tr_x0, tr_y0, tr_vx, tr_vy, tr_cursor, tr_stamp,
                                nodes, t, p.hi_x, p.hi_y, pos_buf)
        return pos_buf

    def cell_index(x, y):
        cx = min(int(x / CELL_M), ncx - 1) if ncx > 1 else 0
        cy = min(int(y / CELL_M), ncy - 1) if ncy > 1 else 0
        return cx * ncy + cy

    def rebucket(now):
        pos = locate(all_nodes, now)
        cell_start[:] = 0
        for j in range(n):
            cell_start[cell_index(pos[j, 0], pos[j, 1]) + 1] += 1
        for c in range(ncx * ncy):
            cell_start[c + 1] += cell_start[c]
        fill = cell_start[:-1].copy()
        for j in range(n):
            c = cell_index(pos[j, 0], pos[j, 1])
            cell_nodes[fill[c]] = j
            fill[c] += 1
        regs[BUCKET_T] = now

    def neighbours(node, now):
        """Ascending superset of the nodes within earshot of ``node`` at ``now``."""
        if ncx * ncy == 1:
            return all_nodes
        if regs[BUCKET_T] < 0 or now - regs[BUCKET_T] > REBUCKET_US:
            rebucket(now)
        pos = locate(np.array([node]), now)
        # nodes drift at most vmax from where they were bucketed
        r = reach + p.vmax * ((now - regs[BUCKET_T]) / 1e6) + 1.0
        x0 = max(int((pos[node, 0] - r) / CELL_M), 0)
        x1 = min(int((pos[node, 0] + r) / CELL_M), ncx - 1)
        y0 = max(int((pos[node, 1] - r) / CELL_M), 0)
        y1 = min(int((pos[node, 1] + r) / CELL_M), ncy - 1)
        count = 0
        for cx in range(x0, x1 + 1):
            for cy in range(y0, y1 + 1):
                c = cx * ncy + cy
                for i in range(cell_start[c], cell_start[c + 1]):
                    mark[cell_nodes[i]] = True
                count += cell_start[c + 1] - cell_start[c]
        out = np.empty(count, dtype=np.int64)
        k = 0
        for j in range(n):
            if mark[j]:
                mark[j] = False
                out[k] = j
                k += 1
        return out

    def coin():
        return _k._next(cn_buf, cn_cur)

    def alloc_slot(pkt, created_at):
        regs[NFREE_SLOT] -= 1
        sl = sl_free[regs[NFREE_SLOT]]
        sl_live[sl] = True
        sl_pending[sl] = 0
        sl_created[sl] = created_at
        sl_pkt[sl] = pkt
        sl_status[sl, :] = UNSEEN
        sl_fire[sl, :] = NEVER
        sl_near[sl, :] = np.nan
        pkt_slot[pkt] = sl
        return sl

    # -- medium --

    def arm(t):
        a = regs[ARMED]
        if a >= 0:
            if ev_fire[a] <= t:
                return True
            ev_cancel[a] = True
        eid = schedule(K_TX_START, t, -1, -1, 0)
        regs[ARMED] = eid
        return eid >= 0

    def contend(node, now):
        if busy_until[node] > now and busy_since[node] + cca_us <= now:
            start = busy_until[node]
        else:
            start = now
        b = _k._next(bo_buf, bo_cur) if cw_slots > 0 else 0
        t = start + b
        attempt_at[node] = t
        return arm(t)

    def broadcast(node, pkt, hop, px, py, now):
        if q_len[node] >= queue_limit:
            regs[DROPS] += 1
            return True
        k = (q_head[node] + q_len[node]) % queue_limit
        q_pkt[node, k] = pkt
        q_hop[node, k] = hop
        q_px[node, k] = px
        q_py[node, k] = py
        q_len[node] += 1
        if mac_state[node] == IDLE:
            mac_state[node] = CONTENDING
            return contend(node, now)
        return True

    def transmit(node, now):
        h = q_head[node]
        pkt = q_pkt[node, h]
        hop = q_hop[node, h]
        cur_px[node] = q_px[node, h]
        cur_py[node] = q_py[node, h]
        q_head[node] = (h + 1) % queue_limit
        q_len[node] -= 1
        end = now + p.airtime
        cands = neighbours(node, now)
        pos = locate(cands, now)
        aud, dist, far = _k.start_frame(pos, node, cands, now, end, p.aud2, p.reach2,
                                        busy_until, busy_since, last_overlap, attempt_at,
                                        cca_us, cw_slots, bo_buf, bo_cur)
        k = aud.shape[0]
        cur_aud[node, :k] = aud
        cur_dist[node, :k] = dist
        cur_far[node, :k] = far
        cur_naud[node] = k
        cur_pkt[node] = pkt
        cur_hop[node] = hop
        cur_start[node] = now
        mac_state[node] = TRANSMITTING
        tx_count[node] += 1
        pkt_tx[pkt] += 1
        regs[TOTAL_TX] += 1
        if p.log_tx:
            r = regs[NLOG]
            log[r, 0] = now
            log[r, 1] = node
            log[r, 2] = pkt
            log[r, 3] = hop
            regs[NLOG] = r + 1
        return schedule(K_TX_END, end, node, -1, 0) >= 0

    # -- forwarding --

    def schedule_forward(sl, node, pkt, hop, fire_at):
        eid = schedule(K_BACKOFF, fire_at, node, pkt, hop)
        sl_ev[sl, node] = eid
        sl_fire[sl, node] = fire_at
        sl_pending[sl] += 1
        return eid >= 0

    def receive(receivers, pkt, hop, px, py, now, pos):
        sl = pkt_slot[pkt]
        if sl < 0:
            sl = alloc_slot(pkt, pkt_created[pkt])
        hit, cancel, new, D = _k.split_receivers(
            receivers, sl_status[sl], sl_fire[sl], sl_near[sl], pos, px, py, p.sink,
            now, variant != V_WP)
        if hit:
            if pkt_first[pkt] < 0:
                pkt_first[pkt] = now
                pkt_hops[pkt] = hop
            else:
                pkt_rep[pkt] += 1
        for i in range(cancel.shape[0]):
            ev_cancel[sl_ev[sl, cancel[i]]] = True
            sl_pending[sl] -= 1
            regs[CANCELLED] += 1
        m = new.shape[0]
        if m == 0:
            return True
        go = np.ones(m, dtype=np.bool_)
        if p.collects:
            delays = np.full(m, p.wait_time, dtype=np.int64)
            for i in range(m):
                sl_near[sl, new[i]] = D[i]
        elif variant == V_BPF:
            delays = _k.bpf_delays(pos, new, D, px, py, p.dest_x, p.dest_y, R,
                                   p.c1_weight, p.backoff_scale)
        elif variant == V_WP:
            delays = np.zeros(m, dtype=np.int64)
            for i in range(m):
                go[i] = coin() < min(D[i] / R, 1.0)
        else:
            delays = _k.slot_delays(D, R, slots, tau)
            if variant == V_SP:
                for i in range(m):
                    go[i] = coin() < p.p
        for i in range(m):
            sl_status[sl, new[i]] = PENDING
        ok = True
        for i in range(m):
            j = new[i]
            if not go[i]:
                sl_status[sl, j] = DONE_ST
            elif not schedule_forward(sl, j, pkt, hop, now + delays[i]):
                ok = False
        return ok

    def expire(node, pkt, hop, now):
        sl = pkt_slot[pkt]
        sl_pending[sl] -= 1
        sl_fire[sl, node] = NEVER
        D = sl_near[sl, node]
        if not np.isnan(D):
            sl_near[sl, node] = np.nan
            if variant == V_WP:
                if not coin() < min(D / R, 1.0):
                    sl_status[sl, node] = DONE_ST
                    return True
            else:
                if variant == V_SP and not coin() < p.p:
                    sl_status[sl, node] = DONE_ST
                    return True
                delay = _k.slot_of(D, R, slots) * tau
                if delay > 0:
                    return schedule_forward(sl, node, pkt, hop, now + delay)
        sl_status[sl, node] = DONE_ST
        pos = locate(np.array([node]), now)
        return broadcast(node, pkt, hop + 1, pos[node, 0], pos[node, 1], now)

    def purge(now):
        horizon = now - PURGE_AGE_US
        for sl in range(sl_live.shape[0]):
            if sl_live[sl] and sl_created[sl] < horizon and sl_pending[sl] == 0:
                sl_live[sl] = False
                pkt_slot[sl_pkt[sl]] = -1
                sl_free[regs[NFREE_SLOT]] = sl
                regs[NFREE_SLOT] += 1

    # -- dispatch --

    while True:
        if regs[HSIZE] == 0 or h_time[0] > t_end:
            regs[NOW] = t_end
            return DONE
        if (bo_buf.shape[0] - bo_cur[0] < p.draw_reserve
                or fd_buf.shape[0] - fd_cur[0] < n
                or cn_buf.shape[0] - cn_cur[0] < n + 1):
            return NEED_DRAWS
        if regs[NFREE_EV] < 2 * n + 8:
            return NEED_EVENTS
        if regs[NFREE_SLOT] < 2:
            return NEED_SLOTS
        if p.log_tx and log.shape[0] - regs[NLOG] < n + 1:
            return NEED_LOG
        eid = pop()
        if ev_cancel[eid]:
            release(eid)
            continue
        now = ev_fire[eid]
        regs[NOW] = now
        kind = ev_kind[eid]
        node = ev_node[eid]
        pkt = ev_pkt[eid]
        hop = ev_hop[eid]
        release(eid)
        ok = True
        if kind == K_TX_START:
            regs[ARMED] = -1
            go = _k.due_attempts(attempt_at, busy_until, busy_since, now,
                                 cca_us, cw_slots, bo_buf, bo_cur)
            for i in range(go.shape[0]):
                if not transmit(go[i], now):
                    ok = False
            t = _k.earliest(attempt_at)
            if t != NEVER and not arm(t):
                ok = False
        elif kind == K_TX_END:
            k = cur_naud[node]
            receivers = _k.finish_frame(cur_aud[node, :k], cur_dist[node, :k], cur_far[node, :k],
                                        last_overlap, busy_since, cur_start[node], fd_buf, fd_cur,
                                        p.deterministic, p.nominal_range, p.median_gain,
                                        p.exponent, p.ref_dist)
            if q_len[node] > 0:
                mac_state[node] = CONTENDING
                ok = contend(node, now)
            else:
                mac_state[node] = IDLE
            pos = locate(receivers, now)
            if not receive(receivers, cur_pkt[node], cur_hop[node],
                           cur_px[node], cur_py[node], now, pos):
                ok = False
        elif kind == K_BACKOFF:
            ok = expire(node, pkt, hop, now)
        elif kind == K_APP:
            seq = app_seq[node]
            app_seq[node] = seq + 1
            g = regs[NGEN]
            regs[NGEN] = g + 1
            pkt_origin[g] = node
            pkt_seq[g] = seq
            pkt_created[g] = now
            pos = locate(np.array([node]), now)
            sl = alloc_slot(g, now)
            sl_status[sl, node] = DONE_ST
            ok = broadcast(node, g, 1, pos[node, 0], pos[node, 1], now)
            nxt = now + p.interval
            if nxt < p.gen_end and schedule(K_APP, nxt, node, -1, 0) < 0:
                ok = False
        elif kind == K_STATS:
            purge(now)
            ok = schedule(K_STATS, now + p.stats_step, -1, -1, 0) >= 0
        if not ok:
            return PAST_EVENT


@njit(cache=True)
def seed_event(s, kind, fire_at, node):
    """Push one event onto a fresh heap (driver use only)."""
    regs = s.regs
    regs[NFREE_EV] -= 1
    eid = s.ev_free[regs[NFREE_EV]]
    s.ev_kind[eid] = kind
    s.ev_fire[eid] = fire_at
    s.ev_node[eid] = node
    s.ev_pkt[eid] = -1
    s.ev_hop[eid] = 0
    s.ev_cancel[eid] = False
    i = regs[HSIZE]
    regs[HSIZE] = i + 1
    s.h_time[i] = fire_at
    s.h_seq[i] = regs[SEQ]
    s.h_id[i] = eid
    regs[SEQ] += 1
    while i > 0:
        parent = (i - 1) >> 1
        ta, tb = s.h_time[i], s.h_time[parent]
        if not (ta < tb or (ta == tb and s.h_seq[i] < s.h_seq[parent])):
            break
        s.h_time[i], s.h_time[parent] = s.h_time[parent], s.h_time[i]
        s.h_seq[i], s.h_seq[parent] = s.h_seq[parent], s.h_seq[i]
        s.h_id[i], s.h_id[parent] = s.h_id[parent], s.h_id[i]
        i = parent


# -- driver ------------------------------------------------------------------

_VARIANT_CODES = {"bpf": V_BPF, "weighted-p": V_WP, "slotted-1": V_S1, "slotted-p": V_SP}


def _grow(arr: np.ndarray, size: int, fill) -> np.ndarray:
    out = np.full((size,) + arr.shape[1:], fill, dtype=arr.dtype)
    out[: len(arr)] = arr
    return out


def _generations(phase: int, interval: int, gen_end: int) -> int:
    return 0 if phase >= gen_end else -(-(gen_end - phase) // interval)


def run_compiled(sim, t_end: int, log_tx: bool = False) -> None:
    """Run a freshly built ``Simulation`` to ``t_end`` in the compiled loop.

    Results land where the reference path leaves them: ``sim.metrics``,
    ``sim.medium.drops`` and ``tx_count``, ``sim.forwarder.cancelled`` and,
    when ``log_tx`` is set, ``sim.transmissions``.
    """
    if sim.trace is not None or sim._node_trace_us:
        raise ValueError("the compiled backend does not support traces; use backend='reference'")
    if sim.engine.now != 0 or sim.engine.dispatched:
        raise ValueError("simulation has already started")
    cfg = sim.cfg
    med, fwd = sim.medium, sim.forwarder
    pc, ch, mac = cfg.protocol, cfg.channel, cfg.mac
    n = sim.n
    tr = sim.mobility.trajectories
    reserve = n * (n + 2) + 8
    if np.isfinite(tr.hi_x) and np.isfinite(tr.hi_y):
        ncx = max(1, math.ceil(tr.hi_x / CELL_M))
        ncy = max(1, math.ceil(tr.hi_y / CELL_M))
    else:
        ncx = ncy = 1
    params = CoreParams(
        n=n, sink=sim.forwarder.sink, dest_x=float(sim.sink_pos[0]), dest_y=float(sim.sink_pos[1]),
        variant=_VARIANT_CODES[pc.variant], collects=pc.collects_duplicates, R=float(pc.R),
        c1_weight=float(pc.c1_weight), backoff_scale=int(pc.backoff_scale_us), slots=int(pc.slots),
        tau=int(pc.tau), wait_time=int(pc.wait_time_us), p=float(pc.p),
        airtime=med.airtime(cfg.app.packet_bytes), aud2=float(med._aud2), reach2=float(med._reach2),
        cca_us=int(mac.cca_us),
        cw_slots=int(mac.cw_slots), queue_limit=int(mac.queue_limit),
        deterministic=bool(ch.deterministic), nominal_range=float(ch.nominal_range),
        median_gain=float(med._q), exponent=float(ch.pathloss_exponent),
        ref_dist=float(ch.reference_distance), hi_x=tr.hi_x, hi_y=tr.hi_y,
        interval=int(sim._interval), gen_end=int(sim._gen_end), stats_step=int(sim._sample_step),
        draw_reserve=reserve, log_tx=bool(log_tx), ncx=ncx, ncy=ncy,
        vmax=float(np.hypot(tr.vx, tr.vy).max(initial=0.0)),
    )

    order = [s for s in sim.sources if sim.phases[s] < sim._gen_end]
    total = sum(_generations(sim.phases[s], sim._interval, sim._gen_end) for s in sim.sources)
    ev_cap = max(1024, 4 * n + 64)
    slot_cap = 64
    Q = params.queue_limit
    i64 = np.int64
    pools = (med._backoffs, med._fades, fwd._coins)
    for pool, k in zip(pools, (2 * reserve, 2 * n, 2 * n + 2)):
        pool.ensure(k)

    regs = np.zeros(N_REGS, dtype=i64)
    regs[ARMED] = -1
    regs[BUCKET_T] = -1
    regs[NFREE_EV] = ev_cap
    regs[NFREE_SLOT] = slot_cap
    st = CoreState(
        regs=regs,
        h_time=np.zeros(ev_cap, i64), h_seq=np.zeros(ev_cap, i64), h_id=np.zeros(ev_cap, i64),
        ev_kind=np.zeros(ev_cap, i64), ev_fire=np.zeros(ev_cap, i64),
        ev_node=np.zeros(ev_cap, i64), ev_pkt=np.zeros(ev_cap, i64), ev_hop=np.zeros(ev_cap, i64),
        ev_cancel=np.zeros(ev_cap, np.bool_), ev_free=np.arange(ev_cap, dtype=i64)[::-1].copy(),
        tr_off=tr.offsets, tr_t0=tr.t0, tr_x0=tr.x0, tr_y0=tr.y0, tr_vx=tr.vx, tr_vy=tr.vy,
        tr_cursor=tr.offsets[:-1].copy(), tr_stamp=np.full(n, -1, i64),
        all_nodes=np.arange(n, dtype=i64), pos=np.zeros((n, 2)),
        cell_start=np.zeros(ncx * ncy + 1, i64), cell_nodes=np.zeros(n, i64),
        mark=np.zeros(n, np.bool_),
        busy_until=med.busy_until, busy_since=med.busy_since, last_overlap=med.last_overlap,
        attempt_at=med.attempt_at, mac_state=np.zeros(n, i64), tx_count=med.tx_count,
        q_pkt=np.zeros((n, Q), i64), q_hop=np.zeros((n, Q), i64),
        q_px=np.zeros((n, Q)), q_py=np.zeros((n, Q)),
        q_head=np.zeros(n, i64), q_len=np.zeros(n, i64),
        cur_pkt=np.zeros(n, i64), cur_hop=np.zeros(n, i64), cur_start=np.zeros(n, i64),
        cur_px=np.zeros(n), cur_py=np.zeros(n),
        cur_aud=np.zeros((n, n), i64), cur_dist=np.zeros((n, n)),
        cur_far=np.zeros((n, n), np.bool_), cur_naud=np.zeros(n, i64),
        bo_buf=pools[0].buf, bo_cur=pools[0].cur, fd_buf=pools[1].buf, fd_cur=pools[1].cur,
        cn_buf=pools[2].buf, cn_cur=pools[2].cur,
        app_seq=np.zeros(n, i64),
        pkt_origin=np.zeros(total, i64), pkt_seq=np.zeros(total, i64),
        pkt_created=np.zeros(total, i64), pkt_first=np.full(total, -1, i64),
        pkt_hops=np.zeros(total, i64), pkt_rep=np.zeros(total, i64),
        pkt_tx=np.zeros(total, i64), pkt_slot=np.full(total, -1, i64),
        sl_status=np.zeros((slot_cap, n), np.int8), sl_fire=np.full((slot_cap, n), NEVER, i64),
        sl_near=np.full((slot_cap, n), np.nan), sl_ev=np.full((slot_cap, n), -1, i64),
        sl_pending=np.zeros(slot_cap, i64), sl_created=np.zeros(slot_cap, i64),
        sl_pkt=np.zeros(slot_cap, i64), sl_live=np.zeros(slot_cap, np.bool_),
        sl_free=np.arange(slot_cap, dtype=i64)[::-1].copy(),
        log=np.zeros((4096 if log_tx else 0, 4), i64),
    )
    for s in order:
        seed_event(st, K_APP, sim.phases[s], s)
    seed_event(st, K_STATS, 0, -1)

    while True:
        status = run(st, params, t_end)
        if status == DONE:
            break
        if status == NEED_DRAWS:
            for pool, k in zip(pools, (2 * reserve, 2 * n, 2 * n + 2)):
                pool.ensure(k)
            st = st._replace(bo_buf=pools[0].buf, fd_buf=pools[1].buf, cn_buf=pools[2].buf)
        elif status == NEED_EVENTS:
            st = _grow_events(st)
        elif status == NEED_SLOTS:
            st = _grow_slots(st, n)
        elif status == NEED_LOG:
            st = st._replace(log=_grow(st.log, 2 * len(st.log), 0))
        else:
            raise SchedulingError(f"an event was scheduled before the clock at {st.regs[NOW]}us")

    sim.engine.now = t_end
    _collect(sim, st)


def _grow_events(st: CoreState) -> CoreState:
    cap = len(st.ev_kind)
    new = 2 * cap
    nfree = int(st.regs[NFREE_EV])
    free = np.empty(new, dtype=np.int64)
    # the added ids go below the existing free stack so allocation order of old ids is kept
    free[: new - cap] = np.arange(new - 1, cap - 1, -1)
    free[new - cap: new - cap + nfree] = st.ev_free[:nfree]
    st.regs[NFREE_EV] = nfree + (new - cap)
    return st._replace(
        h_time=_grow(st.h_time, new, 0), h_seq=_grow(st.h_seq, new, 0), h_id=_grow(st.h_id, new, 0),
        ev_kind=_grow(st.ev_kind, new, 0), ev_fire=_grow(st.ev_fire, new, 0),
        ev_node=_grow(st.ev_node, new, 0), ev_pkt=_grow(st.ev_pkt, new, 0),
        ev_hop=_grow(st.ev_hop, new, 0), ev_cancel=_grow(st.ev_cancel, new, False),
        ev_free=free,
    )


def _grow_slots(st: CoreState, n: int) -> CoreState:
    cap = len(st.sl_pending)
    new = 2 * cap
    nfree = int(st.regs[NFREE_SLOT])
    free = np.empty(new, dtype=np.int64)
    free[: new - cap] = np.arange(new - 1, cap - 1, -1)
    free[new - cap: new - cap + nfree] = st.sl_free[:nfree]
    st.regs[NFREE_SLOT] = nfree + (new - cap)
    return st._replace(
        sl_status=_grow(st.sl_status, new, 0), sl_fire=_grow(st.sl_fire, new, NEVER),
        sl_near=_grow(st.sl_near, new, np.nan), sl_ev=_grow(st.sl_ev, new, -1),
        sl_pending=_grow(st.sl_pending, new, 0), sl_created=_grow(st.sl_created, new, 0),
        sl_pkt=_grow(st.sl_pkt, new, 0), sl_live=_grow(st.sl_live, new, False),
        sl_free=free,
    )


def _collect(sim, st: CoreState) -> None:
    from .metrics import PacketRecord

    g = int(st.regs[NGEN])
    records = sim.metrics.records
    origin, seq, created = st.pkt_origin.tolist(), st.pkt_seq.tolist(), st.pkt_created.tolist()
    first, hops = st.pkt_first.tolist(), st.pkt_hops.tolist()
    rep, txs = st.pkt_rep.tolist(), st.pkt_tx.tolist()
    for i in range(g):
        delivered = first[i] >= 0
        records[(origin[i], seq[i])] = PacketRecord(
            origin[i], seq[i], created[i],
            first[i] if delivered else None,
            hops[i] if delivered else None,
            rep[i], txs[i])
    sim.metrics.total_transmissions = int(st.regs[TOTAL_TX])
    sim.metrics.mac_drops = int(st.regs[DROPS])
    sim.medium.drops = int(st.regs[DROPS])
    sim.forwarder.cancelled = int(st.regs[CANCELLED])
    for s, k in zip(st.app_seq.tolist(), range(sim.n)):
        if k in sim._seq:
            sim._seq[k] = s
    if st.log.shape[0]:
        rows = st.log[: int(st.regs[NLOG])].tolist()
        sim.transmissions = [(t, node, (origin[p], seq[p]), hop) for t, node, p, hop in rows]
