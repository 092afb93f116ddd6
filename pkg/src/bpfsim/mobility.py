"""Manhattan-grid road topology and vehicle movement.

Vehicles move along streets at constant speed between intersections. At
each intersection a new heading is drawn uniformly among the non-reversing
directions that stay inside the area, and a new speed is drawn. Positions
are evaluated analytically between intersection events, so callers always
see exact positions at any microsecond.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as _k
from .engine import US_PER_S, Engine, EventKind

# +x, +y, -x, -y
HEADINGS = ((1, 0), (0, 1), (-1, 0), (0, -1))
_EPS = 1e-9


def reverse(heading: int) -> int:
    return (heading + 2) % 4


@dataclass(frozen=True)
class RoadGrid:
    blocks_x: int = 4
    blocks_y: int = 4
    extent_x: float = 2500.0
    extent_y: float = 2500.0

    def __post_init__(self):
        if self.blocks_x < 1 or self.blocks_y < 1:
            raise ValueError("grid needs at least one block per axis")
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise ValueError("grid extents must be positive")

    @property
    def spacing_x(self) -> float:
        return self.extent_x / self.blocks_x

    @property
    def spacing_y(self) -> float:
        return self.extent_y / self.blocks_y

    @property
    def center(self) -> tuple[float, float]:
        return (self.extent_x / 2, self.extent_y / 2)

    def intersections(self) -> list[tuple[float, float]]:
        return [
            (i * self.spacing_x, j * self.spacing_y)
            for j in range(self.blocks_y + 1)
            for i in range(self.blocks_x + 1)
        ]

    @property
    def road_length(self) -> float:
        """Total street length in metres (every grid line counts as a street)."""
        return (self.blocks_y + 1) * self.extent_x + (self.blocks_x + 1) * self.extent_y

    def distance_to_road(self, x: float, y: float) -> float:
        """Distance from a point to the nearest street segment."""
        gx = min(max(x, 0.0), self.extent_x)
        gy = min(max(y, 0.0), self.extent_y)
        # nearest vertical street
        vx = min(max(round(x / self.spacing_x), 0), self.blocks_x) * self.spacing_x
        dv = math.hypot(x - vx, y - gy)
        hy = min(max(round(y / self.spacing_y), 0), self.blocks_y) * self.spacing_y
        dh = math.hypot(x - gx, y - hy)
        return min(dv, dh)

    def intersection_index(self, x: float, y: float) -> tuple[int, int] | None:
        ix, iy = x / self.spacing_x, y / self.spacing_y
        rx, ry = round(ix), round(iy)
        if abs(ix - rx) < 1e-7 and abs(iy - ry) < 1e-7:
            return int(rx), int(ry)
        return None


def build_grid(blocks_x: int = 4, blocks_y: int = 4, extent_x: float = 2500.0,
               extent_y: float | None = None) -> RoadGrid:
    return RoadGrid(blocks_x, blocks_y, extent_x, extent_x if extent_y is None else extent_y)


@dataclass(frozen=True)
class SpeedModel:
    """Speeds uniform on ``[min_speed, max_speed]`` m/s; the mean is their midpoint."""

    min_speed: float = 3.0
    max_speed: float = 25.0

    def draw(self, rng: np.random.Generator) -> float:
        if self.max_speed == self.min_speed:
            return float(self.min_speed)
        return float(rng.uniform(self.min_speed, self.max_speed))

    @property
    def mean(self) -> float:
        return 0.5 * (self.min_speed + self.max_speed)


@dataclass(frozen=True)
class VehicleState:
    node_id: int
    x: float
    y: float
    heading: int
    speed: float


def permitted_headings(grid: RoadGrid, ix: int, iy: int, heading: int) -> list[int]:
    """Headings that leave intersection ``(ix, iy)`` without reversing or exiting the area."""
    options = []
    for h, (dx, dy) in enumerate(HEADINGS):
        if h == reverse(heading):
            continue
        if 0 <= ix + dx <= grid.blocks_x and 0 <= iy + dy <= grid.blocks_y:
            options.append(h)
    if not options:
        options.append(reverse(heading))
    return options


def choose_heading(grid: RoadGrid, ix: int, iy: int, heading: int,
                   rng: np.random.Generator) -> int:
    options = permitted_headings(grid, ix, iy, heading)
    if len(options) == 1:
        return options[0]
    return options[int(rng.integers(len(options)))]


def distance_to_next_intersection(grid: RoadGrid, x: float, y: float, heading: int) -> float:
    dx, dy = HEADINGS[heading]
    if dx:
        c, s, n = x, grid.spacing_x, grid.blocks_x
        step = dx
    else:
        c, s, n = y, grid.spacing_y, grid.blocks_y
        step = dy
    u = c / s
    k = math.floor(u + _EPS) + 1 if step > 0 else math.ceil(u - _EPS) - 1
    k = min(max(k, 0), n)
    return abs(k * s - c)


def _snap(grid: RoadGrid, x: float, y: float) -> tuple[float, float, int, int]:
    ix = int(round(x / grid.spacing_x))
    iy = int(round(y / grid.spacing_y))
    return ix * grid.spacing_x, iy * grid.spacing_y, ix, iy


def advance(v: VehicleState, dt: float, grid: RoadGrid, rng: np.random.Generator,
            speeds: SpeedModel = SpeedModel()) -> VehicleState:
    """Move a vehicle forward by ``dt`` seconds, turning at every intersection reached."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, heading, speed = v.x, v.y, v.heading, v.speed
    remaining = dt
    if speed <= 0:
        return v
    while True:
        idx = grid.intersection_index(x, y)
        if idx is not None and distance_to_next_intersection(grid, x, y, heading) < _EPS:
            # parked on an intersection facing the boundary
            heading = choose_heading(grid, idx[0], idx[1], heading, rng)
        dist = distance_to_next_intersection(grid, x, y, heading)
        dx, dy = HEADINGS[heading]
        travel = speed * remaining
        if travel < dist:
            x += dx * travel
            y += dy * travel
            break
        x += dx * dist
        y += dy * dist
        x, y, ix, iy = _snap(grid, x, y)
        remaining -= dist / speed
        heading = choose_heading(grid, ix, iy, heading, rng)
        speed = speeds.draw(rng)
        if remaining <= 0:
            break
    return replace(v, x=x, y=y, heading=heading, speed=speed)


def place_nodes(n: int, grid: RoadGrid, rng: np.random.Generator,
                speeds: SpeedModel = SpeedModel(),
                sink: tuple[float, float] | None = None) -> list[VehicleState]:
    """Node 0 is the static sink; nodes 1..n-1 are spread uniformly over the streets."""
    if n < 1:
        raise ValueError("need at least the sink node")
    sx, sy = grid.center if sink is None else sink
    nodes = [VehicleState(0, float(sx), float(sy), 0, 0.0)]
    horiz = (grid.blocks_y + 1) * grid.extent_x
    for i in range(1, n):
        u = rng.uniform(0.0, grid.road_length)
        if u < horiz:
            street, off = divmod(u, grid.extent_x)
            x, y = off, min(int(street), grid.blocks_y) * grid.spacing_y
            heading = 0 if rng.random() < 0.5 else 2
        else:
            street, off = divmod(u - horiz, grid.extent_y)
            x, y = min(int(street), grid.blocks_x) * grid.spacing_x, off
            heading = 1 if rng.random() < 0.5 else 3
        nodes.append(VehicleState(i, float(x), float(y), heading, speeds.draw(rng)))
    return nodes


class Trajectories:
    """Piecewise-linear paths: node ``i`` owns runs ``offsets[i]:offsets[i+1]``.

    A run starting at ``t0`` (µs) from ``(x0, y0)`` moves with velocity
    ``(vx, vy)`` m/s until the next run of the same node begins. Positions
    are clamped to ``[0, hi_x] x [0, hi_y]``.
    """

    def __init__(self, runs: Sequence[Sequence[tuple[int, float, float, float, float]]],
                 hi_x: float, hi_y: float):
        counts = [len(r) for r in runs]
        if min(counts, default=1) < 1:
            raise ValueError("every node needs at least one run")
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        flat = [seg for r in runs for seg in r]
        self.t0 = np.array([s[0] for s in flat], dtype=np.int64)
        self.x0 = np.array([s[1] for s in flat], dtype=float)
        self.y0 = np.array([s[2] for s in flat], dtype=float)
        self.vx = np.array([s[3] for s in flat], dtype=float)
        self.vy = np.array([s[4] for s in flat], dtype=float)
        self.hi_x = float(hi_x)
        self.hi_y = float(hi_y)
        self.n = len(runs)
        self._cursor = self.offsets[:-1].copy()
        self._stamp = np.full(self.n, -1, dtype=np.int64)
        self._all = np.arange(self.n, dtype=np.int64)
        self._cache = np.empty((self.n, 2))
        self._cache_t = -1

    @property
    def horizon(self) -> int:
        """Start of the latest run; positions past it extrapolate the last runs."""
        return int(self.t0.max()) if len(self.t0) else 0

    def positions(self, t_us: int) -> np.ndarray:
        if t_us != self._cache_t:
            _k.trajectory_positions(self.offsets, self.t0, self.x0, self.y0, self.vx, self.vy,
                                    self._cursor, self._stamp, self._all, t_us,
                                    self.hi_x, self.hi_y, self._cache)
            self._cache_t = t_us
        return self._cache


class StaticPositions:
    """Fixed node positions; used for hand-checkable topologies."""

    def __init__(self, positions: Sequence[tuple[float, float]]):
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        if not np.isfinite(pos).all() or (pos < 0).any():
            raise ValueError("static positions must be finite and non-negative")
        self.trajectories = Trajectories(
            [[(0, float(x), float(y), 0.0, 0.0)] for x, y in pos], np.inf, np.inf)

    @property
    def n(self) -> int:
        return self.trajectories.n

    def positions(self, t_us: int) -> np.ndarray:
        return self.trajectories.positions(0)

    def position(self, node: int, t_us: int) -> tuple[float, float]:
        p = self.positions(t_us)
        return float(p[node, 0]), float(p[node, 1])

    def start(self, engine: Engine) -> None:
        pass


class ManhattanFleet:
    """All nodes' trajectories over ``[0, horizon_us]``.

    Paths are laid out up front: each vehicle's straight runs between
    intersections, with the turn and speed draws made at each one from
    that vehicle's own stream. Positions at any time are then a pure
    lookup. ``start`` schedules a MOBILITY_TICK at every turn for
    observers (``on_turn``).
    """

    def __init__(self, grid: RoadGrid, states: Sequence[VehicleState],
                 rngs: Sequence[np.random.Generator], speeds: SpeedModel = SpeedModel(),
                 horizon_us: int = 0):
        self.grid = grid
        self.speeds = speeds
        self.horizon_us = int(horizon_us)
        runs = []
        self._turns: list[list[tuple[int, int, float]]] = []
        for st, rng in zip(states, rngs):
            r, turns = self._lay_out(st, rng)
            runs.append(r)
            self._turns.append(turns)
        self.trajectories = Trajectories(runs, grid.extent_x, grid.extent_y)
        self._engine: Engine | None = None
        self.on_turn = None

    def _lay_out(self, st: VehicleState, rng: np.random.Generator):
        """Straight runs ``(t0, x0, y0, vx, vy)`` and turns ``(t, heading, speed)`` of one vehicle."""
        grid = self.grid
        x, y, h, speed = st.x, st.y, st.heading, st.speed
        turns: list[tuple[int, int, float]] = []
        if speed <= 0:
            return [(0, x, y, 0.0, 0.0)], turns
        idx = grid.intersection_index(x, y)
        if idx is not None and distance_to_next_intersection(grid, x, y, h) < _EPS:
            h = choose_heading(grid, idx[0], idx[1], h, rng)
        t = 0
        runs = []
        while True:
            dx, dy = HEADINGS[h]
            vx, vy = dx * speed, dy * speed
            runs.append((t, x, y, vx, vy))
            dist = distance_to_next_intersection(grid, x, y, h)
            t_next = t + max(math.ceil(dist / speed * US_PER_S), 1)
            if t_next > self.horizon_us:
                return runs, turns
            dt = (t_next - t) / US_PER_S
            x, y, ix, iy = _snap(grid, x + vx * dt, y + vy * dt)
            h = choose_heading(grid, ix, iy, h, rng)
            speed = self.speeds.draw(rng)
            t = t_next
            turns.append((t, h, speed))

    @property
    def n(self) -> int:
        return self.trajectories.n

    def start(self, engine: Engine) -> None:
        self._engine = engine
        engine.on(EventKind.MOBILITY_TICK, self._on_tick)
        for i, turns in enumerate(self._turns):
            if turns:
                engine.schedule(EventKind.MOBILITY_TICK, turns[0][0], (i, 0))

    def _on_tick(self, payload) -> None:
        i, k = payload
        t, heading, speed = self._turns[i][k]
        if self.on_turn is not None:
            self.on_turn(i, heading, speed)
        if k + 1 < len(self._turns[i]):
            self._engine.schedule(EventKind.MOBILITY_TICK, self._turns[i][k + 1][0], (i, k + 1))

    def positions(self, t_us: int) -> np.ndarray:
        return self.trajectories.positions(t_us)

    def position(self, node: int, t_us: int) -> tuple[float, float]:
        p = self.positions(t_us)
        return float(p[node, 0]), float(p[node, 1])

    def state(self, node: int, t_us: int) -> VehicleState:
        """Position, heading and speed of ``node`` at ``t_us``."""
        tr = self.trajectories
        lo, hi = int(tr.offsets[node]), int(tr.offsets[node + 1])
        k = lo + int(np.searchsorted(tr.t0[lo:hi], t_us, side="right")) - 1
        vx, vy = float(tr.vx[k]), float(tr.vy[k])
        speed = math.hypot(vx, vy)
        heading = 0
        if speed > 0:
            heading = HEADINGS.index((int(np.sign(vx)), int(np.sign(vy))))
        x, y = self.position(node, t_us)
        return VehicleState(node, x, y, heading, speed)


def write_node_trace(path, samples: Iterable[tuple[int, np.ndarray]]) -> None:
    """Write ``(time_us, positions)`` samples as CSV ``time_s,node_id,x_m,y_m``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "node_id", "x_m", "y_m"])
        for t, pos in samples:
            for i, (x, y) in enumerate(pos):
                w.writerow([f"{t / US_PER_S:.6f}", i, f"{x:.3f}", f"{y:.3f}"])
