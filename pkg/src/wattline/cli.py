"""Command-line entry points.

Workflow: `simulate` (optional, serves a synthetic plug), `meter`
(sample a plug into a session), `baseline` (record idle draw), `mark`
(label phase boundaries), then `analyze` / `carbon` / `estimate` /
`report` to turn the session into numbers and documents.

Exit codes are a stable contract: 0 success, 2 validation failure,
3 transport failure, 4 data lookup failure.
"""

from __future__ import annotations

import functools
import json
import sys
import threading
from pathlib import Path

import click

from . import __version__
from .analysis import EnergyQuantity, analyze_session, round_sig
from .carbon import (
    CarbonMass,
    EmissionFactor,
    OFFSET_TREE_KG_PER_YEAR,
    convert,
    equivalents,
    lifecycle_context,
    load_factors,
    load_lifecycle,
    offset_plan,
    regional_whatif,
)
from .clock import SystemClock
from .errors import (
    DataLookupError,
    TransportError,
    ValidationError,
    WattlineError,
)
from .estimator import (
    DEFAULT_OVERHEAD,
    FootprintEstimate,
    OverheadFactor,
    PipelineShape,
    event_footprint,
    sensitivity,
)
from .report import ReportBundle, build_checklist, file_digest, render
from .session import (
    BaselineRecord,
    PhaseMarker,
    SessionWriter,
    append_marker_file,
    ingest_markers,
    load_session,
)
from .simulator import TraceProfile, serve_simulated_plug
from .telemetry import (
    DEFAULT_INTERVAL_MS,
    FieldMapping,
    PlugClient,
    Sampler,
    estimate_clock_offset,
)

EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3
EXIT_LOOKUP = 4


def wattline_errors(fn):
    """Map toolkit errors onto the stable exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TransportError as exc:
            click.echo(f"transport error: {exc}", err=True)
            sys.exit(EXIT_TRANSPORT)
        except DataLookupError as exc:
            click.echo(f"lookup error: {exc}", err=True)
            sys.exit(EXIT_LOOKUP)
        except WattlineError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except FileNotFoundError as exc:
            click.echo(f"error: no such file: {exc.filename}", err=True)
            sys.exit(EXIT_VALIDATION)
        except (OSError, json.JSONDecodeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


session_dir_option = click.option(
    "--session",
    "session_dir",
    envvar="WATTLINE_SESSION_DIR",
    required=True,
    type=click.Path(file_okay=False),
    help="Session directory (or set WATTLINE_SESSION_DIR).",
)


@click.group()
@click.version_option(version=__version__, prog_name="wattline")
def main():
    """Wall-plug energy metering and carbon accounting."""


@main.command()
@click.option("--profile", "profile_path", required=True, type=click.Path(), help="Trace profile JSON.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8585, show_default=True)
@click.option(
    "--start-now/--keep-start",
    default=False,
    show_default=True,
    help="Rebase the profile to start at the current time instead of its start_ts_ms.",
)
@wattline_errors
def simulate(profile_path, host, port, start_now):
    """Serve a simulated plug from a trace profile until interrupted."""
    profile = TraceProfile.load(profile_path)
    if start_now:
        clock = SystemClock()
        profile = TraceProfile(
            segments=profile.segments,
            start_ts_ms=clock.now_ms() + profile.injected_offset_ms,
            injected_offset_ms=profile.injected_offset_ms,
        )
    server = serve_simulated_plug(profile, host=host, port=port)
    click.echo(f"simulated plug serving on {server.endpoint}/status (Ctrl-C to stop)")
    try:
        while True:
            threading.Event().wait(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    click.echo("simulated plug stopped")


def _parse_annotations(pairs: tuple[str, ...]) -> dict:
    annotations = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValidationError(f"--annotate expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        annotations[key.strip()] = value.strip()
    return annotations


@main.command()
@click.option("--endpoint", required=True, help="Plug base URL, e.g. http://192.168.1.5")
@session_dir_option
@click.option("--interval-ms", default=DEFAULT_INTERVAL_MS, show_default=True)
@click.option("--duration-s", type=float, default=None, help="Stop after this many seconds.")
@click.option("--adapter", "adapter_path", type=click.Path(), default=None, help="Vendor field-mapping JSON.")
@click.option("--sync/--no-sync", default=True, show_default=True, help="Estimate the plug clock offset first.")
@click.option("--probes", default=7, show_default=True, help="Offset probes when syncing.")
@click.option("--failure-limit", default=10, show_default=True)
@click.option("--annotate", "annotations", multiple=True, help="key=value session metadata (repeatable).")
@click.option("--session-id", default=None)
@wattline_errors
def meter(endpoint, session_dir, interval_ms, duration_s, adapter_path, sync, probes, failure_limit, annotations, session_id):
    """Sample a plug into the session until stopped."""
    mapping = FieldMapping.load(adapter_path) if adapter_path else None
    with SessionWriter(session_dir, session_id=session_id) as writer:
        writer.annotate("interval_ms", interval_ms)
        for key, value in _parse_annotations(annotations).items():
            writer.annotate(key, value)
        if sync:
            offset = estimate_clock_offset(endpoint, probes=probes, mapping=mapping)
            writer.set_clock_offset(offset)
            click.echo(
                f"clock offset: {offset.offset_ms:+.1f} ms (rtt {offset.rtt_ms:.1f} ms)"
            )
        client = PlugClient(endpoint, mapping=mapping)
        sampler = Sampler(
            client,
            writer,
            interval_ms=interval_ms,
            failure_limit=failure_limit,
        )
        duration_ms = None if duration_s is None else int(duration_s * 1000)
        try:
            stats = sampler.run(duration_ms=duration_ms)
        except KeyboardInterrupt:
            click.echo("stopped")
            return
        finally:
            client.close()
    click.echo(
        f"recorded {stats.samples_written} samples "
        f"({stats.polls_failed} failed polls)"
    )
    if stats.aborted:
        click.echo(f"sampler aborted: {stats.diagnostic}", err=True)
        sys.exit(EXIT_TRANSPORT)


class _ListSink:
    """In-memory sink for throwaway sampling runs (baseline windows)."""

    def __init__(self):
        self.samples = []
        self.annotations = {}

    def append_sample(self, sample):
        self.samples.append(sample)

    def annotate(self, key, value):
        self.annotations[key] = value


@main.command()
@click.option("--endpoint", required=True)
@session_dir_option
@click.option("--window-s", default=120.0, show_default=True, help="Measurement window.")
@click.option("--interval-ms", default=DEFAULT_INTERVAL_MS, show_default=True)
@click.option("--adapter", "adapter_path", type=click.Path(), default=None)
@wattline_errors
def baseline(endpoint, session_dir, window_s, interval_ms, adapter_path):
    """Record the idle power baseline (run with nothing else running)."""
    import statistics as stats_mod

    mapping = FieldMapping.load(adapter_path) if adapter_path else None
    sink = _ListSink()
    client = PlugClient(endpoint, mapping=mapping)
    sampler = Sampler(client, sink, interval_ms=interval_ms)
    try:
        result = sampler.run(duration_ms=int(window_s * 1000))
    finally:
        client.close()
    if result.aborted or len(sink.samples) < 2:
        click.echo("baseline run failed: not enough samples", err=True)
        sys.exit(EXIT_TRANSPORT)
    watts = [s.watts for s in sink.samples]
    record = BaselineRecord(
        mean_w=stats_mod.fmean(watts),
        stddev_w=stats_mod.stdev(watts),
        window_ms=int(window_s * 1000),
        sample_count=len(watts),
    )
    with SessionWriter(session_dir) as writer:
        writer.set_baseline(record)
    click.echo(
        f"baseline: {record.mean_w:.2f} W (stddev {record.stddev_w:.2f} W, "
        f"{record.sample_count} samples)"
    )


@main.command()
@session_dir_option
@click.option("--label", default=None, help="Phase label, e.g. training.")
@click.option("--kind", type=click.Choice(["begin", "end"]), default=None)
@click.option("--ts-ms", type=int, default=None, help="Override the host timestamp (post-hoc marking).")
@click.option("--from-file", "from_file", type=click.Path(), default=None, help="Ingest markers from an experiment-log JSONL file.")
@wattline_errors
def mark(session_dir, label, kind, ts_ms, from_file):
    """Append a phase marker (or ingest markers from a log file)."""
    Path(session_dir).mkdir(parents=True, exist_ok=True)
    if from_file:
        count = ingest_markers(session_dir, from_file)
        click.echo(f"ingested {count} markers from {from_file}")
        return
    if not label or not kind:
        raise ValidationError("mark needs --label and --kind (or --from-file)")
    marker = PhaseMarker(
        ts_ms=ts_ms if ts_ms is not None else SystemClock().now_ms(),
        label=label,
        kind=kind,
    )
    append_marker_file(session_dir, marker)
    click.echo(f"marked {kind} of {label!r} at {marker.ts_ms}")


@main.command()
@session_dir_option
@click.option("--out", default=None, type=click.Path(), help="Output path [default: <session>/analysis.json].")
@click.option("--use-baseline/--no-baseline", default=True, show_default=True)
@click.option("--labels", default=None, help="Comma-separated run labels [default: all].")
@click.option("--tol-ms", type=float, default=None, help="Marker tolerance [default: one sampling interval].")
@wattline_errors
def analyze(session_dir, out, use_baseline, labels, tol_ms):
    """Compute per-phase and per-run energy; write analysis.json."""
    session = load_session(session_dir)
    run_labels = [l.strip() for l in labels.split(",")] if labels else None
    payload = analyze_session(
        session, use_baseline=use_baseline, tol_ms=tol_ms, run_labels=run_labels
    )
    out = out or str(Path(session_dir) / "analysis.json")
    _emit(_dump_json(payload), out)
    run = payload["run"]
    click.echo(
        f"run total: {run['total_kwh']:g} kWh over {', '.join(run['labels'])}",
        err=True,
    )


def _resolve_factor(region, year, factor_value, factors_path):
    if factor_value is not None:
        return EmissionFactor(
            region=region or "custom",
            year=year,
            gco2e_per_kwh=factor_value,
            source="user-specified factor",
        )
    table = load_factors(factors_path)
    return table.lookup(region, year)


@main.command()
@click.option("--kwh", type=float, default=None, help="Energy to convert.")
@click.option("--analysis", "analysis_path", type=click.Path(), default=None, help="Use the run total from an analysis.json.")
@click.option("--region", default="world", show_default=True)
@click.option("--year", default=2023, show_default=True)
@click.option("--gco2e-per-kwh", "factor_value", type=float, default=None, help="Bypass the factor table with an explicit rate.")
@click.option("--factors", "factors_path", type=click.Path(), default=None, help="Alternative factors.csv.")
@click.option("--whatif", default=None, help="Comma-separated regions to compare.")
@click.option("--equivalents", "with_equivalents", is_flag=True, help="Add flight and tree-year equivalents.")
@click.option("--offset-trees", type=int, default=None, help="Add an offset plan for this many trees.")
@click.option("--tree-kg-per-year", type=float, default=OFFSET_TREE_KG_PER_YEAR, show_default=True)
@click.option("--lifecycle", "with_lifecycle", is_flag=True, help="Add lifecycle context for the factor used.")
@click.option("--out", default=None, type=click.Path())
@wattline_errors
def carbon(kwh, analysis_path, region, year, factor_value, factors_path, whatif, with_equivalents, offset_trees, tree_kg_per_year, with_lifecycle, out):
    """Convert energy to CO2-equivalents; write a carbon block."""
    if kwh is None and analysis_path is None:
        raise ValidationError("carbon needs --kwh or --analysis")
    if kwh is None:
        analysis = json.loads(Path(analysis_path).read_text())
        kwh = float(analysis["run"]["total_kwh"])
    energy = EnergyQuantity(kwh=kwh)
    factor = _resolve_factor(region, year, factor_value, factors_path)
    mass = convert(energy, factor)

    block: dict = {
        "energy_kwh": round_sig(energy.kwh),
        "region": factor.region,
        "year": factor.year,
        "gco2e_per_kwh": factor.gco2e_per_kwh,
        "factor_source": factor.source,
        "mass_g": round_sig(mass.grams),
        "mass_rendered": mass.render(),
        "notes": [],
    }
    if with_equivalents:
        eq = equivalents(mass)
        block["equivalents"] = {
            "flights": round_sig(eq.flights),
            "tree_years": round_sig(eq.tree_years),
        }
    if whatif:
        regions = [r.strip() for r in whatif.split(",") if r.strip()]
        table = load_factors(factors_path)
        rows = [table.lookup(r, year) for r in regions]
        result = regional_whatif(energy, rows)
        block["whatif"] = {
            "masses_g": {
                r: round_sig(m.grams) for r, m in sorted(result.masses.items())
            },
            "ratio": round_sig(result.max_min_ratio),
        }
    if offset_trees is not None:
        plan = offset_plan(mass, offset_trees, tree_kg_per_year)
        block["offset"] = {
            "trees": plan.trees,
            "tree_kg_per_year": plan.tree_kg_per_year,
            "months": round_sig(plan.months),
            "note": plan.note,
        }
        if plan.note:
            block["notes"].append(plan.note)
    if with_lifecycle:
        context = lifecycle_context(factor.gco2e_per_kwh, load_lifecycle())
        block["lifecycle"] = {
            "bracketing": [e.technology for e in context.bracketing],
            "dirtiest": context.dirtiest.technology,
            "cleanest": context.cleanest.technology,
            "dirtiest_to_cleanest": round_sig(context.dirtiest_to_cleanest),
        }
    _emit(_dump_json(block), out)
    if out:
        click.echo(f"{energy.kwh:g} kWh -> {mass.render()}")


@main.command()
@click.option("--models", type=int, default=None, help="Models per pipeline.")
@click.option("--datasets", type=int, default=None, help="Datasets per pipeline.")
@click.option("--configs", type=int, default=None, help="Hyperparameter configurations per model.")
@click.option("--per-run-kwh", type=float, default=None, help="Measured energy of one run.")
@click.option("--from-analysis", "analysis_path", type=click.Path(), default=None, help="Take per-run energy from an analysis.json run total.")
@click.option("--overhead", type=float, default=DEFAULT_OVERHEAD, show_default=True, help="Project overhead multiplier.")
@click.option("--factor", "factor_value", type=float, default=None, help="Emission factor in gCO2e/kWh.")
@click.option("--region", default="world", show_default=True)
@click.option("--year", default=2023, show_default=True)
@click.option("--factors", "factors_path", type=click.Path(), default=None)
@click.option("--submissions", type=int, default=1, show_default=True, help="Submissions at the event.")
@click.option("--out", default=None, type=click.Path())
@click.option("--sensitivity-overheads", default=None, help="Comma-separated overhead multipliers to scan.")
@click.option("--sensitivity-factors", default=None, help="Comma-separated gCO2e/kWh rates to scan.")
@click.option("--sensitivity-out", default=None, type=click.Path())
@wattline_errors
def estimate(models, datasets, configs, per_run_kwh, analysis_path, overhead, factor_value, region, year, factors_path, submissions, out, sensitivity_overheads, sensitivity_factors, sensitivity_out):
    """Extrapolate a per-run energy to pipeline, paper, and event scale."""
    if per_run_kwh is None and analysis_path is None:
        raise ValidationError("estimate needs --per-run-kwh or --from-analysis")
    if per_run_kwh is None:
        analysis = json.loads(Path(analysis_path).read_text())
        per_run_kwh = float(analysis["run"]["total_kwh"])
        per_run_source = f"measured run total from {Path(analysis_path).name}"
    else:
        per_run_source = "user-supplied per-run energy"
    if models is None or datasets is None or configs is None:
        raise ValidationError("estimate needs --models, --datasets and --configs")

    shape = PipelineShape(
        n_models=models,
        n_datasets=datasets,
        n_configs=configs,
        per_run=EnergyQuantity(per_run_kwh),
        per_run_source=per_run_source,
    )
    factor = _resolve_factor(region, year, factor_value, factors_path)
    result = event_footprint(
        shape, OverheadFactor(multiplier=overhead), factor, submissions
    )
    _emit(result.to_json(), out)
    click.echo(
        f"pipeline {result.pipeline.kwh:g} kWh; paper {result.paper.kwh:g} kWh; "
        f"per paper {result.per_paper_mass.render()}; "
        f"event {result.event_mass.render()}",
        err=True,
    )
    for note in result.notes:
        click.echo(f"note: {note}", err=True)

    if sensitivity_overheads or sensitivity_factors:
        overheads = (
            [float(v) for v in sensitivity_overheads.split(",")]
            if sensitivity_overheads
            else [overhead]
        )
        rates = (
            [float(v) for v in sensitivity_factors.split(",")]
            if sensitivity_factors
            else [factor.gco2e_per_kwh]
        )
        rows = sensitivity(
            shape,
            overheads,
            [
                EmissionFactor(region="scan", year=year, gco2e_per_kwh=r, source="sensitivity scan")
                for r in rates
            ],
            submissions,
        )
        payload = {"rows": [r.to_dict() for r in rows]}
        _emit(_dump_json(payload), sensitivity_out)
        for row in rows:
            click.echo(
                f"  overhead x{row.assumptions[4].value:g} @ "
                f"{row.assumptions[5].value:g} g/kWh -> {row.event_mass.render()}",
                err=True,
            )


@main.command()
@click.option("--session", "session_dir", envvar="WATTLINE_SESSION_DIR", type=click.Path(file_okay=False), default=None)
@click.option("--analysis", "analysis_path", type=click.Path(), default=None)
@click.option("--carbon", "carbon_path", type=click.Path(), default=None)
@click.option("--estimate", "estimate_path", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["md", "json", "csv"]), default="md", show_default=True)
@click.option("--out", default=None, type=click.Path())
@click.option("--timestamp", default=None, help="Generation timestamp to embed (kept out of the report when omitted, for reproducible output).")
@wattline_errors
def report(session_dir, analysis_path, carbon_path, estimate_path, fmt, out, timestamp):
    """Render analysis, carbon, and estimate artifacts into a report."""
    session_summary = None
    annotations = None
    if session_dir and (Path(session_dir) / "session.json").exists():
        session = load_session(session_dir)
        annotations = session.annotations
        session_summary = {
            "session_id": session.session_id,
            "n_samples": len(session.samples),
            "baseline_w": session.baseline.mean_w if session.baseline else None,
            "offset_ms": session.offset_ms(),
            "annotations": session.annotations,
        }

    inputs = {}
    analysis = carbon_block = estimate_payload = None
    if analysis_path:
        analysis = json.loads(Path(analysis_path).read_text())
        inputs[Path(analysis_path).name] = file_digest(analysis_path)
    if carbon_path:
        carbon_block = json.loads(Path(carbon_path).read_text())
        inputs[Path(carbon_path).name] = file_digest(carbon_path)
    if estimate_path:
        estimate_payload = FootprintEstimate.from_json(
            Path(estimate_path).read_text()
        ).to_dict()
        inputs[Path(estimate_path).name] = file_digest(estimate_path)

    checklist = build_checklist(
        annotations=annotations,
        analysis=analysis,
        carbon_block=carbon_block,
        estimate=estimate_payload,
    )
    bundle = ReportBundle(
        checklist=checklist,
        session_summary=session_summary,
        analysis=analysis,
        carbon=carbon_block,
        estimate=estimate_payload,
        metadata={
            "tool_version": __version__,
            "generated_at": timestamp,
            "inputs": inputs,
        },
    )
    document = render(bundle, fmt)
    if out:
        Path(out).write_bytes(document)
        click.echo(f"wrote {out}")
    else:
        click.echo(document.decode(), nl=False)


if __name__ == "__main__":
    main()
