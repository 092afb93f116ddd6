import numpy as np
import pytest

from bpfsim.engine import Engine, EventKind, RngStreams, SchedulingError, seconds, to_us


def _recording_engine():
    eng = Engine()
    log = []
    for kind in EventKind:
        eng.on(kind, lambda payload, kind=kind: log.append((eng.now, kind, payload)))
    return eng, log


def test_event_fires_at_its_time():
    eng, log = _recording_engine()
    eng.schedule_in(EventKind.BACKOFF_EXPIRE, 2500, "x")
    assert eng.run_until(10_000) == 1
    assert log == [(2500, EventKind.BACKOFF_EXPIRE, "x")]


def test_ties_dispatch_in_insertion_order():
    eng, log = _recording_engine()
    for tag in "abcde":
        eng.schedule(EventKind.TX_START, 100, tag)
    eng.schedule(EventKind.TX_END, 50, "first")
    eng.run_until(100)
    assert [p for _, _, p in log] == ["first", "a", "b", "c", "d", "e"]


def test_cancel_contract():
    eng, log = _recording_engine()
    h = eng.schedule(EventKind.BACKOFF_EXPIRE, 10, "gone")
    assert eng.cancel(h) is True
    assert eng.cancel(h) is False
    fired = eng.schedule(EventKind.BACKOFF_EXPIRE, 20, "kept")
    eng.run_until(100)
    assert log == [(20, EventKind.BACKOFF_EXPIRE, "kept")]
    assert eng.cancel(fired) is False
    assert eng.cancel(None) is False


def test_empty_queue_advances_clock():
    eng = Engine()
    assert eng.run_until(to_us(200)) == 0
    assert eng.now == 200_000_000


def test_scheduling_in_the_past_aborts():
    eng = Engine()

    def handler(_):
        eng.schedule(EventKind.TX_END, eng.now - 1)

    eng.on(EventKind.TX_START, handler)
    eng.schedule(EventKind.TX_START, 100)
    with pytest.raises(SchedulingError):
        eng.run_until(1000)


def test_run_until_is_inclusive_and_keeps_later_events():
    eng, log = _recording_engine()
    eng.schedule(EventKind.APP_GENERATE, 100, 1)
    eng.schedule(EventKind.APP_GENERATE, 101, 2)
    eng.run_until(100)
    assert len(log) == 1 and eng.pending() == 1
    eng.run_until(200)
    assert len(log) == 2


def test_dispatch_times_are_monotone_under_random_load():
    rng = np.random.default_rng(3)
    eng = Engine()
    seen = []

    def handler(payload):
        seen.append(eng.now)
        if payload > 0:
            for _ in range(2):
                eng.schedule_in(EventKind.BACKOFF_EXPIRE, int(rng.integers(0, 50)), payload - 1)

    eng.on(EventKind.BACKOFF_EXPIRE, handler)
    eng.schedule(EventKind.BACKOFF_EXPIRE, 0, 8)
    eng.run_until(10**9)
    assert len(seen) == 2**9 - 1
    assert all(a <= b for a, b in zip(seen, seen[1:]))


def test_time_conversions():
    assert to_us(0.005) == 5000
    assert to_us(200) == 200_000_000
    assert seconds(1_500_000) == 1.5


class TestRngStreams:
    def test_same_seed_same_draws(self):
        a = RngStreams(7, 2)["mobility/node/17"].random(5)
        b = RngStreams(7, 2)["mobility/node/17"].random(5)
        assert np.array_equal(a, b)

    def test_streams_are_independent_of_creation_order(self):
        s1 = RngStreams(7, 0)
        s1["channel/fading"].random(100)
        x1 = s1["protocol/decisions"].random(3)
        x2 = RngStreams(7, 0)["protocol/decisions"].random(3)
        assert np.array_equal(x1, x2)

    def test_names_runs_and_seeds_separate_streams(self):
        base = RngStreams(7, 0)["a"].random(4)
        assert not np.array_equal(base, RngStreams(7, 0)["b"].random(4))
        assert not np.array_equal(base, RngStreams(7, 1)["a"].random(4))
        assert not np.array_equal(base, RngStreams(8, 0)["a"].random(4))

    def test_get_returns_one_generator_per_name(self):
        s = RngStreams(1, 0)
        assert s.get("x") is s["x"]
