"""Command line: ``bpfsim simulate | sweep | trace``."""

from __future__ import annotations

import json
import logging
import sys

import click

from . import harness
from .config import ConfigError, ScenarioConfig, load_scenario, load_sweep
from .mobility import write_node_trace
from .simulation import Simulation


def _scenario(path: str | None) -> ScenarioConfig:
    return load_scenario(path) if path else ScenarioConfig()


def _cache(path: str | None):
    return harness.ResultCache(path) if path else None


class _Errors(click.Group):
    """Turn config and I/O problems into one-line messages instead of tracebacks."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConfigError as exc:
            raise click.ClickException(f"invalid config: {exc}") from exc
        except OSError as exc:
            raise click.ClickException(str(exc)) from exc


@click.group(cls=_Errors)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Discrete-event simulator for back-off based per-hop forwarding in urban VANETs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Scenario YAML; defaults reproduce the reference setup.")
@click.option("--protocol", type=click.Choice(["bpf", "weighted-p", "slotted-1", "slotted-p"]))
@click.option("--density", type=float, help="Vehicles per km of road.")
@click.option("--sources", type=int, help="Number of source vehicles.")
@click.option("--runs", type=int)
@click.option("--seed", type=int, help="Master seed.")
@click.option("--duration", type=float, help="Traffic generation time in seconds.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
              help="Output format (default: from the --out suffix).")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--backend", type=click.Choice(harness.BACKENDS), default="compiled",
              show_default=True)
@click.option("--cache", "cache_dir", type=click.Path(file_okay=False),
              help="Reuse run reports stored in this directory.")
def simulate(config_path, protocol, density, sources, runs, seed, duration, out, fmt, jobs,
             backend, cache_dir):
    """Run one scenario for every run index and write its aggregate."""
    cfg = _scenario(config_path)
    overrides = {}
    if protocol is not None:
        overrides["protocol.variant"] = protocol
    if density is not None:
        overrides["nodes.density_per_km"] = density
    if sources is not None:
        overrides["sources.count"] = sources
    if runs is not None:
        overrides["runs"] = runs
    if seed is not None:
        overrides["master_seed"] = seed
    if duration is not None:
        overrides["duration_s"] = duration
    spec = harness.single_point(cfg, overrides)
    result = harness.run_sweep(spec, jobs=jobs, backend=backend, cache=_cache(cache_dir))
    harness.emit_results(result, out, fmt)
    row = result.rows[0]
    if row.error:
        raise click.ClickException(f"run failed: {row.error}")
    s = row.summary
    click.echo(f"{row.protocol} density={row.density:g} sources={row.sources} runs={s.runs} "
               f"pdr={s.mean('pdr_percent')} delay_s={s.mean('mean_delay_s')} -> {out}")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]))
@click.option("--jobs", type=int, help="Parallel runs (default: the spec's value).")
@click.option("--backend", type=click.Choice(harness.BACKENDS), default="compiled",
              show_default=True)
@click.option("--cache", "cache_dir", type=click.Path(file_okay=False))
def sweep(spec_path, out, fmt, jobs, backend, cache_dir):
    """Run every point of a sweep spec and write one row per point."""
    spec = load_sweep(spec_path)
    result = harness.run_sweep(spec, jobs=jobs, backend=backend, cache=_cache(cache_dir))
    harness.emit_results(result, out, fmt)
    failed = [r for r in result.rows if r.error]
    for r in failed:
        click.echo(f"point {r.point} failed: {r.error}", err=True)
    click.echo(f"{len(result.rows)} points ({len(failed)} failed) -> {out}")
    if failed:
        sys.exit(1)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--protocol", type=click.Choice(["bpf", "weighted-p", "slotted-1", "slotted-p"]))
@click.option("--duration", type=float, help="Traffic generation time in seconds.")
@click.option("--run-index", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="JSON-lines event trace.")
@click.option("--node-trace", type=click.Path(dir_okay=False),
              help="Also write vehicle positions as CSV (time_s,node_id,x_m,y_m).")
@click.option("--node-interval", type=float, default=1.0, show_default=True,
              help="Seconds between node-trace samples.")
def trace(config_path, protocol, duration, run_index, out, node_trace, node_interval):
    """Run once and log every simulator event of interest."""
    cfg = _scenario(config_path)
    overrides = {}
    if protocol is not None:
        overrides["protocol.variant"] = protocol
    if duration is not None:
        overrides["duration_s"] = duration
    cfg = cfg.with_overrides(overrides)
    try:
        fh = open(out, "w")
    except OSError as exc:
        raise click.ClickException(f"cannot write trace to {out}: {exc.strerror}") from exc
    with fh:
        def emit(rec: dict) -> None:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

        sim = Simulation(cfg, run_index, trace=emit,
                         node_trace_interval_s=node_interval if node_trace else None)
        report = sim.run()
    if node_trace:
        write_node_trace(node_trace, sim.node_samples)
    click.echo(f"pdr={report.pdr_percent} transmissions={report.total_network_transmissions} "
               f"-> {out}")


if __name__ == "__main__":
    main()
