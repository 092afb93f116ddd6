"""Experiment harness: independent runs, sweeps, caching and result files.

Runs share nothing but their immutable config, so sweeps may fan out over
processes; results are always collected in (sweep point, run_index) order.
Output files carry the resolved config of every point and a fingerprint of
the simulator source, and contain nothing else that varies between
invocations, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import ScenarioConfig, SweepSpec, scenario_from_dict
from .metrics import METRICS, AggregateReport, RunReport, aggregate
from .simulation import Simulation

log = logging.getLogger(__name__)

CSV_HEADER = ("protocol", "density_nodes_per_km", "sources", "metric", "mean",
              "ci95_halfwidth", "runs")
BACKENDS = ("compiled", "reference")


# modules that only drive runs or write files; editing them cannot change a result
_NOT_SIMULATION = {"harness.py", "cli.py", "__main__.py"}


def code_fingerprint() -> str:
    """Short hash over the package sources that determine simulation results."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.glob("*.py")):
        if path.name in _NOT_SIMULATION:
            continue
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def code_version() -> str:
    return f"bpfsim {__version__} (source {code_fingerprint()})"


def _canonical(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))


class ResultCache:
    """Run reports on disk, keyed by resolved config, run index and simulator source.

    Any edit to the package changes the key, so stale results are never
    served; old entries are simply left behind.
    """

    def __init__(self, directory):
        self.dir = Path(directory)
        self._code = code_fingerprint()

    def _path(self, cfg: ScenarioConfig, run_index: int) -> Path:
        key = hashlib.sha256(f"{self._code}|{run_index}|{_canonical(cfg)}".encode()).hexdigest()
        return self.dir / key[:2] / f"{key}.json"

    def get(self, cfg: ScenarioConfig, run_index: int) -> RunReport | None:
        path = self._path(cfg, run_index)
        try:
            return RunReport.from_dict(json.loads(path.read_text()))
        except (OSError, ValueError, TypeError):
            return None

    def put(self, cfg: ScenarioConfig, run_index: int, report: RunReport) -> None:
        path = self._path(cfg, run_index)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        tmp.write_text(json.dumps(report.to_dict()))
        tmp.replace(path)


def run_one(cfg: ScenarioConfig, run_index: int, backend: str = "compiled") -> RunReport:
    return Simulation(cfg, run_index).run(backend=backend)


def _run_task(args) -> tuple[str, object]:
    cfg_dict, run_index, backend = args
    try:
        return "ok", run_one(scenario_from_dict(cfg_dict), run_index, backend).to_dict()
    except Exception as exc:  # reported per sweep point
        return "error", f"{type(exc).__name__}: {exc}"


def _execute(tasks: list[tuple[ScenarioConfig, int]], backend: str, jobs: int,
             cache: ResultCache | None) -> list[tuple[str, object]]:
    """Run ``(cfg, run_index)`` tasks; results come back in task order."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    results: list[tuple[str, object] | None] = [None] * len(tasks)
    todo = []
    for i, (cfg, r) in enumerate(tasks):
        hit = cache.get(cfg, r) if cache is not None else None
        if hit is not None:
            results[i] = ("ok", hit)
        else:
            todo.append(i)
    payloads = [(tasks[i][0].to_dict(), tasks[i][1], backend) for i in todo]

    def settle(k, outcome):
        # cache each report as soon as it exists, so an interrupted sweep resumes
        i = todo[k]
        status, value = outcome
        if status == "ok":
            value = RunReport.from_dict(value)
            if cache is not None:
                cache.put(tasks[i][0], tasks[i][1], value)
        results[i] = (status, value)
        log.info("run %d/%d", k + 1, len(payloads))

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for k, outcome in enumerate(pool.map(_run_task, payloads)):
                settle(k, outcome)
    else:
        for k, payload in enumerate(payloads):
            settle(k, _run_task(payload))
    return results


def run_scenario(cfg: ScenarioConfig, backend: str = "compiled", jobs: int = 1,
                 cache: ResultCache | None = None) -> list[RunReport]:
    """``cfg.runs`` independent reports, run_index 0..runs-1."""
    out = []
    for status, value in _execute([(cfg, r) for r in range(cfg.runs)], backend, jobs, cache):
        if status != "ok":
            raise RuntimeError(value)
        out.append(value)
    return out


@dataclass
class SweepRow:
    """One sweep point: its overrides, resolved config and outcome."""

    point: dict
    config: ScenarioConfig
    reports: list[RunReport] = field(default_factory=list)
    error: str | None = None

    @property
    def protocol(self) -> str:
        return self.config.protocol.variant

    @property
    def density(self) -> float:
        return self.config.density

    @property
    def sources(self) -> int:
        return self.config.sources.count

    @property
    def summary(self) -> AggregateReport | None:
        return aggregate(self.reports) if self.reports and self.error is None else None

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "config": self.config.to_dict(),
            "error": self.error,
            "reports": [r.to_dict() for r in self.reports],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SweepRow:
        return cls(dict(d["point"]), scenario_from_dict(d["config"]),
                   [RunReport.from_dict(r) for r in d["reports"]], d.get("error"))


@dataclass
class SweepResult:
    rows: list[SweepRow]
    version: str = field(default_factory=code_version)

    def to_dict(self) -> dict:
        return {"version": self.version, "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> SweepResult:
        return cls([SweepRow.from_dict(r) for r in d["rows"]], d["version"])

    def row(self, **match) -> SweepRow:
        """The single row whose protocol/density/sources equal ``match``."""
        found = [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]
        if len(found) != 1:
            raise KeyError(f"{len(found)} rows match {match}")
        return found[0]


def run_sweep(spec: SweepSpec, jobs: int | None = None, backend: str = "compiled",
              cache: ResultCache | None = None) -> SweepResult:
    """Run every point of ``spec``; a failing run marks its point as errored."""
    configs = spec.scenarios()
    if not configs:
        raise ValueError("sweep spec has no points")
    tasks = [(cfg, r) for cfg in configs for r in range(cfg.runs)]
    outcomes = _execute(tasks, backend, jobs or spec.jobs, cache)
    rows = []
    k = 0
    for point, cfg in zip(spec.points, configs):
        mine = outcomes[k:k + cfg.runs]
        k += cfg.runs
        errors = [v for s, v in mine if s != "ok"]
        if errors:
            rows.append(SweepRow(dict(point), cfg, [], errors[0]))
        else:
            rows.append(SweepRow(dict(point), cfg, [v for _, v in mine]))
    return SweepResult(rows)


# -- output ------------------------------------------------------------------

def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    buf.write(f"# {result.version}\n")
    for i, row in enumerate(result.rows):
        buf.write(f"# point {i}: {json.dumps(row.point, sort_keys=True)} "
                  f"config {_canonical(row.config)}\n")
        if row.error is not None:
            buf.write(f"# error point {i}: {row.error}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in result.rows:
        summary = row.summary
        if summary is None:
            continue
        for m in METRICS:
            s = summary.metrics[m]
            w.writerow([row.protocol, _num(float(row.density)), row.sources, m, _num(s.mean),
                        _num(s.ci95_halfwidth), summary.runs])
    return buf.getvalue()


def results_json(result: SweepResult) -> str:
    return json.dumps(result.to_dict(), sort_keys=True, indent=1) + "\n"


def emit_results(result: SweepResult, path, fmt: str | None = None) -> Path:
    """Write ``result`` as CSV or JSON (chosen from the suffix unless ``fmt`` is given)."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}; expected 'csv' or 'json'")
    text = results_csv(result) if fmt == "csv" else results_json(result)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc
    return path


def load_results(path) -> SweepResult:
    return SweepResult.from_dict(json.loads(Path(path).read_text()))


def single_point(cfg: ScenarioConfig, overrides: dict | None = None) -> SweepSpec:
    return SweepSpec(cfg, (dict(overrides or {}),))


def paired_sweep(base: ScenarioConfig, axes: dict[str, Sequence]) -> SweepSpec:
    """Cartesian sweep over dotted-key axes, all sharing ``base.master_seed``."""
    keys = list(axes)
    points = tuple(dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys)))
    return SweepSpec(base, points)
