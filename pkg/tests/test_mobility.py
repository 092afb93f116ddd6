import math

import numpy as np
import pytest
from scipy import stats

from bpfsim.config import ScenarioConfig
from bpfsim.mobility import (HEADINGS, ManhattanFleet, RoadGrid, SpeedModel, StaticPositions,
                             VehicleState, advance, build_grid, choose_heading, permitted_headings,
                             place_nodes, reverse)
from bpfsim.engine import to_us


class TestGrid:
    def test_reference_grid_has_625m_spacing_and_25km_of_road(self):
        g = build_grid()
        assert (g.spacing_x, g.spacing_y) == (625.0, 625.0)
        xs = sorted({x for x, _ in g.intersections()})
        assert xs == [0.0, 625.0, 1250.0, 1875.0, 2500.0]
        assert g.road_length == 25_000.0
        assert g.intersection_index(1250.0, 1250.0) == (2, 2)

    def test_single_block(self):
        g = build_grid(1, 1, 1000.0)
        assert sorted(g.intersections()) == [(0.0, 0.0), (0.0, 1000.0), (1000.0, 0.0), (1000.0, 1000.0)]

    def test_six_streets_per_axis(self):
        assert build_grid(5, 5, 2500.0).road_length == 30_000.0

    @pytest.mark.parametrize("args", [(0, 5, 2500.0), (5, 5, 0.0), (5, -1, 100.0)])
    def test_bad_dimensions(self, args):
        with pytest.raises(ValueError):
            build_grid(*args)

    def test_distance_to_road(self):
        g = build_grid()
        assert g.distance_to_road(100.0, 625.0) == 0.0
        assert g.distance_to_road(100.0, 700.0) == pytest.approx(75.0)


@pytest.mark.parametrize("density,total", [(2.4, 61), (4.8, 121), (7.2, 181), (9.6, 241)])
def test_density_to_node_count(density, total):
    assert ScenarioConfig().with_overrides({"nodes.density_per_km": density}).node_count == total


class TestTurns:
    def test_interior_intersection_excludes_u_turn(self):
        g = build_grid()
        assert permitted_headings(g, 2, 2, 0) == [0, 1, 3]

    def test_corner_forces_a_single_way_out(self):
        g = build_grid()
        # heading +x into the (4, 0) corner: only +y remains
        assert permitted_headings(g, 4, 0, 0) == [1]

    def test_three_way_choice_is_uniform(self):
        g = build_grid()
        rng = np.random.default_rng(2024)
        n = 100_000
        picks = [choose_heading(g, 2, 2, 0, rng) for _ in range(n)]
        counts = np.array([picks.count(h) for h in (0, 1, 3)])
        assert counts.sum() == n
        assert stats.chisquare(counts, [n / 3] * 3).pvalue > 1e-3


class TestSpeeds:
    def test_mean_and_bounds(self):
        model = SpeedModel(3.0, 25.0)
        rng = np.random.default_rng(99)
        v = np.array([model.draw(rng) for _ in range(1_000_000)])
        assert abs(v.mean() - 14.0) < 0.2
        assert abs(v.mean() - 14.0) / 14.0 < 0.01
        assert v.min() >= 3.0 and v.max() <= 25.0
        assert model.mean == 14.0


class TestAdvance:
    def test_mid_segment_straight_line(self):
        g = build_grid()
        v = VehicleState(1, 100.0, 625.0, 0, 10.0)
        w = advance(v, 1.0, g, np.random.default_rng(0))
        assert (w.x, w.y, w.heading, w.speed) == (110.0, 625.0, 0, 10.0)

    def test_dt_must_be_positive(self):
        with pytest.raises(ValueError):
            advance(VehicleState(1, 0.0, 0.0, 0, 10.0), 0.0, build_grid(), np.random.default_rng(0))

    def test_positions_stay_on_streets(self):
        g = build_grid()
        rng = np.random.default_rng(5)
        states = place_nodes(40, g, rng)
        for _ in range(300):
            states = [advance(s, 0.7, g, rng) if s.node_id else s for s in states]
            for s in states:
                assert g.distance_to_road(s.x, s.y) < 1e-9
                assert 0.0 <= s.x <= 2500.0 and 0.0 <= s.y <= 2500.0
                assert s.node_id == 0 or 3.0 <= s.speed <= 25.0
                dx, dy = HEADINGS[s.heading]
                assert abs(dx) + abs(dy) == 1


class TestPlacement:
    def test_sink_and_uniform_spread(self):
        g = build_grid()
        states = place_nodes(4001, g, np.random.default_rng(1), sink=(1250.0, 1250.0))
        assert (states[0].x, states[0].y, states[0].speed) == (1250.0, 1250.0, 0.0)
        cars = states[1:]
        assert all(g.distance_to_road(s.x, s.y) < 1e-9 for s in cars)
        horizontal = sum(1 for s in cars if s.heading in (0, 2))
        # half the road length is horizontal
        assert abs(horizontal / len(cars) - 0.5) < 4 * math.sqrt(0.25 / len(cars))

    def test_needs_a_sink(self):
        with pytest.raises(ValueError):
            place_nodes(0, build_grid(), np.random.default_rng(0))


class TestFleet:
    def _fleet(self, n=30, seconds=60.0):
        g = build_grid()
        rng = np.random.default_rng(3)
        states = place_nodes(n, g, rng, sink=(1250.0, 1250.0))
        rngs = [np.random.default_rng(100 + i) for i in range(n)]
        return g, ManhattanFleet(g, states, rngs, SpeedModel(), horizon_us=to_us(seconds))

    def test_sink_never_moves(self):
        _, fleet = self._fleet()
        for t in range(0, 60_000_001, 7_000_000):
            assert tuple(fleet.positions(t)[0]) == (1250.0, 1250.0)

    def test_positions_on_streets_at_arbitrary_times(self):
        g, fleet = self._fleet()
        for t in np.linspace(0, 60e6, 97).astype(np.int64):
            for x, y in fleet.positions(int(t)):
                assert g.distance_to_road(x, y) < 1e-6

    def test_speed_between_samples_is_bounded(self):
        _, fleet = self._fleet()
        a = fleet.positions(10_000_000).copy()
        b = fleet.positions(10_100_000).copy()
        step = np.hypot(*(b - a).T)
        assert np.all(step <= 25.0 * 0.1 + 1e-9)

    def test_queries_out_of_order_agree(self):
        _, fleet = self._fleet()
        late = fleet.positions(50_000_000).copy()
        fleet.positions(1_000_000)
        assert np.array_equal(fleet.positions(50_000_000), late)


class TestStatic:
    def test_positions_are_fixed(self):
        s = StaticPositions([(0, 0), (10, 20)])
        assert s.n == 2
        assert s.position(1, 123) == (10.0, 20.0)

    @pytest.mark.parametrize("bad", [[(0, 0), (float("nan"), 1)], [(0, 0), (-1, 0)]])
    def test_rejects_bad_positions(self, bad):
        with pytest.raises(ValueError):
            StaticPositions(bad)


def test_reverse():
    assert [reverse(h) for h in range(4)] == [2, 3, 0, 1]
