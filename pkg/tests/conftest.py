import numpy as np
import pytest

from bpfsim.config import ScenarioConfig
from bpfsim.simulation import Simulation

_VERDICTS = pytest.StashKey[dict]()


def static_config(n_nodes: int, variant: str, n_sources: int = 1, **overrides) -> ScenarioConfig:
    """Hand-checkable setup: unit-disk channel, no contention jitter, one packet per source."""
    base = {
        "nodes.total": n_nodes,
        "sources.count": n_sources,
        "protocol.variant": variant,
        "channel.deterministic": True,
        "mac.cw_slots": 0,
        "app.rate_pps": 1.0,
        "duration_s": 1.0,
        "drain_s": 2.0,
        "runs": 1,
    }
    base.update(overrides)
    return ScenarioConfig().with_overrides(base)


def static_sim(positions, variant, sources, coins=None, trace=None, **overrides) -> Simulation:
    cfg = static_config(len(positions), variant, len(sources), **overrides)
    rng = ScriptedCoins(coins) if coins is not None else None
    return Simulation(cfg, 0, positions=positions, sources=sources, protocol_rng=rng, trace=trace)


class ScriptedCoins:
    """Stand-in generator whose uniform draws are a fixed script, then ``pad``."""

    def __init__(self, values, pad: float = 0.0):
        self._values = list(values)
        self._pad = pad

    def random(self, size=None):
        k = 1 if size is None else int(size)
        head, self._values = self._values[:k], self._values[k:]
        out = np.array(head + [self._pad] * (k - len(head)), dtype=float)
        return out if size is not None else float(out[0])


@pytest.fixture
def criterion(request):
    """Record an acceptance verdict; all verdicts are listed at the end of the session."""

    def record(number: int, passed: bool, detail: str) -> None:
        verdicts = request.config.stash.setdefault(_VERDICTS, {})
        verdicts[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        passed, detail = verdicts[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
