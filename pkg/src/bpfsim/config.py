"""Scenario and sweep configuration.

Config files are YAML mappings whose keys mirror the dataclass field names
below. Missing keys take defaults (which reproduce the reference scenario);
unknown keys are rejected with the dotted path of the offending field.
"""

from __future__ import annotations

import dataclasses
import itertools
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .channel import ChannelConfig, MacConfig
from .protocols import ProtocolConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@dataclass(frozen=True)
class GridConfig:
    # a "5x5" Manhattan grid here means five streets per axis: 4x4 blocks of
    # 625 m, 25 km of road in total
    blocks_x: int = 4
    blocks_y: int = 4
    extent_m: float = 2500.0
    # road length used to turn densities into node counts
    nominal_road_length_km: float = 25.0


@dataclass(frozen=True)
class NodesConfig:
    density_per_km: float | None = 9.6
    total: int | None = None


@dataclass(frozen=True)
class SourcesConfig:
    count: int = 8
    placement: str = "max-spread"


@dataclass(frozen=True)
class AppConfig:
    rate_pps: float = 5.0
    packet_bytes: int = 512


@dataclass(frozen=True)
class MobilityConfig:
    min_speed: float = 3.0
    max_speed: float = 25.0


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    nodes: NodesConfig = field(default_factory=NodesConfig)
    sink: tuple[float, float] = (1250.0, 1250.0)
    sources: SourcesConfig = field(default_factory=SourcesConfig)
    app: AppConfig = field(default_factory=AppConfig)
    duration_s: float = 200.0
    drain_s: float = 10.0
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    mac: MacConfig = field(default_factory=MacConfig)
    master_seed: int = 1
    runs: int = 10

    @property
    def node_count(self) -> int:
        if self.nodes.total is not None:
            return self.nodes.total
        return int(round(self.nodes.density_per_km * self.grid.nominal_road_length_km)) + 1

    @property
    def density(self) -> float:
        if self.nodes.total is None:
            return self.nodes.density_per_km
        return (self.nodes.total - 1) / self.grid.nominal_road_length_km

    def validate(self) -> ScenarioConfig:
        if (self.nodes.total is None) == (self.nodes.density_per_km is None):
            raise ConfigError("nodes", "set exactly one of density_per_km and total")
        if self.nodes.total is not None and self.nodes.total < 1:
            raise ConfigError("nodes.total", "must be at least 1")
        if self.nodes.density_per_km is not None and self.nodes.density_per_km < 0:
            raise ConfigError("nodes.density_per_km", "must be non-negative")
        if self.sources.count < 0 or self.sources.count > max(self.node_count - 1, 0):
            raise ConfigError("sources.count", f"must lie in [0, {self.node_count - 1}]")
        if self.sources.placement not in ("max-spread", "random"):
            raise ConfigError("sources.placement", "expected 'max-spread' or 'random'")
        if not self.app.rate_pps > 0:
            raise ConfigError("app.rate_pps", "must be positive")
        if self.app.packet_bytes < 1:
            raise ConfigError("app.packet_bytes", "must be positive")
        if self.duration_s < 0 or self.drain_s < 0:
            raise ConfigError("duration_s", "durations must be non-negative")
        if self.runs < 1:
            raise ConfigError("runs", "must be at least 1")
        if self.mobility.min_speed < 0 or self.mobility.max_speed < self.mobility.min_speed:
            raise ConfigError("mobility", "need 0 <= min_speed <= max_speed")
        if self.grid.blocks_x < 1 or self.grid.blocks_y < 1:
            raise ConfigError("grid", "blocks must be at least 1")
        if self.grid.extent_m <= 0:
            raise ConfigError("grid.extent_m", "must be positive")
        return self

    def to_dict(self) -> dict:
        return to_plain(self)

    def with_overrides(self, overrides: dict[str, Any]) -> ScenarioConfig:
        return apply_overrides(self, overrides)


def to_plain(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_plain(v) for v in obj]
    return obj


def _convert(value, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(value, inner[0], path)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(path, f"expected a list of {len(args)} numbers")
        return tuple(_convert(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data, path: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    kwargs = {}
    for name in names:
        if name in data:
            sub = f"{path}.{name}" if path else name
            kwargs[name] = _convert(data[name], hints[name], sub)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


def scenario_from_dict(data: dict) -> ScenarioConfig:
    data = dict(data or {})
    nodes = data.get("nodes")
    if isinstance(nodes, dict) and "total" in nodes and "density_per_km" not in nodes:
        data["nodes"] = {**nodes, "density_per_km": None}
    return from_dict(ScenarioConfig, data).validate()


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path} is not valid YAML: {exc}") from exc
    return data or {}


def load_scenario(path) -> ScenarioConfig:
    return scenario_from_dict(load_yaml(path))


def apply_overrides(cfg: ScenarioConfig, overrides: dict[str, Any]) -> ScenarioConfig:
    """Return a copy with dotted-path fields replaced, e.g. ``{"protocol.variant": "bpf"}``."""
    data = to_plain(cfg)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = data
        for i, part in enumerate(parts[:-1]):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(".".join(parts[: i + 1]), "unknown key")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(dotted, "unknown key")
        node[parts[-1]] = value
        if dotted == "nodes.density_per_km" and value is not None:
            data["nodes"]["total"] = None
        elif dotted == "nodes.total" and value is not None:
            data["nodes"]["density_per_km"] = None
    return from_dict(ScenarioConfig, data).validate()


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    points: tuple[dict, ...]
    jobs: int = 1

    def scenarios(self) -> list[ScenarioConfig]:
        return [self.base.with_overrides(p) for p in self.points]


def sweep_from_dict(data: dict) -> SweepSpec:
    if not isinstance(data, dict):
        raise ConfigError("", "sweep spec must be a mapping")
    unknown = set(data) - {"base", "axes", "points", "jobs"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    base = scenario_from_dict(data.get("base") or {})
    axes = data.get("axes") or {}
    if not isinstance(axes, dict):
        raise ConfigError("axes", "expected a mapping of dotted keys to lists")
    for k, v in axes.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"axes.{k}", "expected a non-empty list")
    explicit = data.get("points") or []
    if not isinstance(explicit, list):
        raise ConfigError("points", "expected a list of override mappings")
    points: list[dict] = []
    if axes:
        keys = list(axes)
        for combo in itertools.product(*(axes[k] for k in keys)):
            points.append(dict(zip(keys, combo)))
    for i, p in enumerate(explicit):
        if not isinstance(p, dict):
            raise ConfigError(f"points[{i}]", "expected a mapping")
        points.append(dict(p))
    if not points:
        raise ConfigError("", "sweep spec has no points")
    for i, p in enumerate(points):
        try:
            base.with_overrides(p)
        except ConfigError as exc:
            raise ConfigError(f"points[{i}].{exc.path}", str(exc)) from exc
    return SweepSpec(base, tuple(points), int(data.get("jobs", 1)))


def load_sweep(path) -> SweepSpec:
    return sweep_from_dict(load_yaml(path))
