"""Acceptance suite: one test per release criterion, with runtime budgets.

Each test prints a single pass line (visible with -s); a failed assert or
a blown time budget fails the criterion.
"""

from __future__ import annotations

import json
import math
import random
import time
from contextlib import contextmanager

import pytest
from click.testing import CliRunner

from helpers import (
    analytic_kwh_between,
    has_step_inside_gap,
    make_session,
    power_step_points,
    sample_ticks,
    step_error_bound_kwh,
)
from wattline.analysis import (
    EnergyQuantity,
    grouped_stats,
    phase_energy,
)
from wattline.carbon import (
    CarbonMass,
    convert,
    equivalents,
    era_ratio,
    lifecycle_context,
    load_factors,
    offset_plan,
    regional_whatif,
)
from wattline.cli import main as cli_main
from wattline.estimator import OverheadFactor, PipelineShape, event_footprint
from wattline.report import ReportBundle, build_checklist, render
from wattline.session import (
    MeterSession,
    Phase,
    PhaseMarker,
    SessionWriter,
    append_marker_file,
    load_session,
)
from wattline.telemetry import PowerSample, estimate_clock_offset, run_sampler
from wattline.simulator import TraceProfile
from wattline.units import format_ratio

TS0 = 1_700_000_000_000


@contextmanager
def criterion(name: str, budget_s: float):
    started = time.monotonic()
    yield
    elapsed = time.monotonic() - started
    assert elapsed < budget_s, f"{name}: {elapsed:.1f}s exceeded budget {budget_s}s"
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.2f}s)")


def reference_shape():
    return PipelineShape(7, 3, 16, EnergyQuantity(0.45))


def test_01_estimator_chain_exact():
    with criterion("01 estimator chain", 1.0):
        table = load_factors()
        estimate = event_footprint(
            reference_shape(),
            OverheadFactor(40.0),
            table.lookup("world", 2023),
            submissions=269,
        )
        assert estimate.pipeline.kwh == pytest.approx(151.2, abs=1e-9)
        assert estimate.paper.kwh == pytest.approx(6048.0, abs=1e-9)
        assert abs(estimate.per_paper_mass.grams - 2_909_088.0) < 1.0
        assert abs(estimate.event_mass.grams - 782_544_672.0) < 1.0
        assert estimate.per_paper_mass.render().startswith("2,909 kg")
        assert estimate.event_mass.render().startswith("782.5 t")


def test_02_regional_whatif_with_documented_deviation():
    with criterion("02 regional what-if", 1.0):
        table = load_factors()
        spread = regional_whatif(
            EnergyQuantity(1.0),
            [table.lookup("sweden", 2023), table.lookup("asia", 2023)],
        )
        assert 11.8 <= spread.max_min_ratio <= 12.0

        estimate = event_footprint(
            reference_shape(),
            OverheadFactor(40.0),
            table.lookup("sweden", 2023),
            submissions=269,
        )
        assert estimate.event_mass.tonnes == pytest.approx(73.2, abs=0.02)
        bundle = ReportBundle(
            checklist=build_checklist(estimate=estimate.to_dict()),
            estimate=estimate.to_dict(),
            metadata={"tool_version": "test", "inputs": {}},
        )
        text = render(bundle, "md").decode()
        assert "74" in text and "73.21" in text  # deviation note in the report


def test_03_offset_arithmetic():
    with criterion("03 offset arithmetic", 1.0):
        table = load_factors()
        mass = CarbonMass(
            convert(EnergyQuantity(6100.0), table.lookup("gothenburg", 2023)).grams
            + convert(EnergyQuantity(500.0), table.lookup("germany", 2023)).grams
        )
        assert mass.grams == 446_500.0  # exact
        plan = offset_plan(mass, trees=42, tree_kg_per_year=10.0)
        assert plan.months == pytest.approx(12.76, abs=0.01)
        assert plan.note is not None and "11 months" in plan.note


def test_04_equivalents_from_backcomputed_defaults():
    with criterion("04 equivalents", 1.0):
        table = load_factors()
        estimate = event_footprint(
            reference_shape(),
            OverheadFactor(40.0),
            table.lookup("world", 2023),
            submissions=269,
        )
        eq = equivalents(estimate.event_mass)
        assert eq.flights == pytest.approx(338.0, abs=0.5)
        assert eq.tree_years == pytest.approx(71_100.0, abs=0.5)


def _random_profile(rng: random.Random, trial: int) -> TraceProfile:
    n_segments = rng.randint(1, 20)
    total_ms = rng.randint(1_000, 120_000)
    if trial % 4 == 0:
        # align every power step to the 500 ms sampling grid
        ticks = max(2, total_ms // 500)
        cuts = sorted(rng.sample(range(1, ticks), min(n_segments - 1, ticks - 1)))
        bounds = [0] + [c * 500 for c in cuts] + [ticks * 500]
    else:
        cuts = sorted(rng.sample(range(1, total_ms), min(n_segments - 1, total_ms - 1)))
        bounds = [0] + cuts + [total_ms]
    segments = tuple(
        (b - a, round(rng.uniform(0, 600), 2)) for a, b in zip(bounds, bounds[1:])
    )
    offset = rng.choice([0, 0, 0, rng.randint(-100_000, 100_000)])
    return TraceProfile(segments=segments, start_ts_ms=TS0, injected_offset_ms=offset)


def test_05_measurement_oracle_suite(plug_env, tmp_path):
    rng = random.Random(20240501)
    with criterion("05 measurement oracle suite (200 traces)", 300.0):
        checked_phases = 0
        exact_phases = 0
        for trial in range(200):
            profile = _random_profile(rng, trial)
            segments = profile.segments
            total = profile.total_duration_ms
            offset = profile.injected_offset_ms
            clock = plug_env.mount(profile)

            session_dir = tmp_path / f"trial{trial}"
            with SessionWriter(session_dir, session_id=f"trial{trial}") as writer:
                writer.annotate("interval_ms", 500)
                sync = estimate_clock_offset(plug_env.endpoint, probes=3, clock=clock)
                assert abs(sync.offset_ms - offset) <= sync.rtt_ms / 2
                writer.set_clock_offset(sync)
                stats = run_sampler(
                    plug_env.endpoint,
                    writer,
                    interval_ms=500,
                    duration_ms=total + 600,
                    clock=clock,
                )
                assert not stats.aborted
                assert stats.samples_written >= 2

            # mark 1-3 phases, host-stamped exactly like the mark command
            n_phases = rng.randint(1, 3)
            windows = []
            for k in range(n_phases):
                a_dev = TS0 + rng.randint(0, total - 1)
                b_dev = TS0 + rng.randint(a_dev - TS0 + 1, total)
                if trial % 5 == 0:
                    a_dev = TS0 + (a_dev - TS0) // 500 * 500
                    b_dev = TS0 + -(-(b_dev - TS0) // 500) * 500
                    if a_dev == b_dev:
                        b_dev += 500
                windows.append((f"phase{k}", a_dev, b_dev))
                for dev_ts, kind in ((a_dev, "begin"), (b_dev, "end")):
                    append_marker_file(
                        session_dir,
                        PhaseMarker(ts_ms=dev_ts - offset, label=f"phase{k}", kind=kind),
                    )

            session = load_session(session_dir)
            phases = {p.label: p for p in session.phases()}
            assert len(phases) == n_phases
            for label, a_dev, b_dev in windows:
                phase = phases[label]
                assert (phase.start_ms, phase.end_ms) == (a_dev, b_dev)
                computed = phase_energy(session, phase).gross.kwh
                expected = analytic_kwh_between(segments, TS0, a_dev, b_dev)
                bound = step_error_bound_kwh(segments, TS0, a_dev, b_dev, 500)
                assert abs(computed - expected) <= bound + 1e-12, (
                    f"trial {trial} {label}: |{computed} - {expected}| > {bound}"
                )
                if not has_step_inside_gap(segments, TS0, TS0, 500):
                    assert abs(computed - expected) <= 1e-9
                    exact_phases += 1
                checked_phases += 1
        assert checked_phases >= 200
        assert exact_phases >= 20  # the aligned trials exercise the exact branch


def test_06_clock_offset_recovery_and_shift_invariance(plug_env):
    rng = random.Random(777)
    with criterion("06 clock-offset recovery", 60.0):
        for _ in range(100):
            skew = rng.randint(-1_000_000, 1_000_000)
            profile = TraceProfile(
                segments=((600_000, 42.0),), start_ts_ms=TS0, injected_offset_ms=skew
            )
            clock = plug_env.mount(profile, clock_start_ms=TS0)
            offset = estimate_clock_offset(plug_env.endpoint, probes=3, clock=clock)
            assert abs(offset.offset_ms - skew) <= offset.rtt_ms / 2

        # exact phase-energy invariance under global timestamp shifts
        segments = ((3_000, 120.0), (2_000, 480.0), (4_000, 60.0))
        base_samples = sample_ticks(segments, TS0)
        reference = None
        for shift in (0, 1, -1, 10**10, -(10**9), 123_456_789):
            samples = [
                PowerSample(s.ts_ms + shift, s.watts, s.wh_total) for s in base_samples
            ]
            session = MeterSession(
                session_id="shift",
                samples=samples,
                annotations={"interval_ms": 500},
                epochs=[0],
            )
            kwh = phase_energy(
                session, Phase("p", TS0 + 777 + shift, TS0 + 8_111 + shift)
            ).gross.kwh
            reference = kwh if reference is None else reference
            assert kwh == reference


def test_07_stats_oracle_and_reference_rows():
    rng = random.Random(4242)
    with criterion("07 stats oracle", 10.0):
        for _ in range(1000):
            values = [rng.uniform(0, 10) for _ in range(rng.randint(1, 60))]
            stats = grouped_stats(values)
            ordered = sorted(values)
            n = len(ordered)
            mid = n // 2
            median = ordered[mid] if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2
            mean = min(max(math.fsum(ordered) / n, ordered[0]), ordered[-1])
            assert stats.mean.kwh == mean
            assert stats.median.kwh == median
            assert stats.min.kwh == ordered[0]
            assert stats.max.kwh == ordered[-1]

        import csv
        from importlib import resources

        text = resources.files("wattline").joinpath("reference/paper_stats.csv").read_text()
        rows = {r["group"]: r for r in csv.DictReader(text.splitlines())}
        dgcf = rows["DGCF (RB)"]
        assert (
            float(dgcf["mean_kwh"]),
            float(dgcf["median_kwh"]),
            float(dgcf["min_kwh"]),
            float(dgcf["max_kwh"]),
        ) == (1.4553, 1.2913, 0.0046, 6.5861)
        yelp = rows["Yelp-2018"]
        assert (
            float(yelp["mean_kwh"]),
            float(yelp["median_kwh"]),
            float(yelp["min_kwh"]),
            float(yelp["max_kwh"]),
        ) == (1.3649, 0.5943, 0.0302, 6.5861)
        # every bundled row is a valid stats summary
        for row in rows.values():
            stats_ok = (
                float(row["min_kwh"])
                <= float(row["median_kwh"])
                <= float(row["max_kwh"])
            ) and (
                float(row["min_kwh"]) <= float(row["mean_kwh"]) <= float(row["max_kwh"])
            )
            assert stats_ok, row["group"]


def test_08_lifecycle_context():
    with criterion("08 lifecycle context", 1.0):
        context = lifecycle_context(481.0)
        assert context.dirtiest_to_cleanest == pytest.approx(74.5, abs=0.1)
        assert context.dirtiest.median_g == 820
        assert context.cleanest.median_g == 11


def test_09_era_ratio():
    rng = random.Random(9)
    with criterion("09 era ratio", 10.0):
        ratio = era_ratio(CarbonMass(7.09), CarbonMass(294.9))
        assert ratio == pytest.approx(41.6, abs=0.05)
        assert format_ratio(ratio) == "≈ 42×"
        for _ in range(1000):
            k = 2.0 ** rng.randint(-40, 40)
            assert era_ratio(CarbonMass(7.09 * k), CarbonMass(294.9 * k)) == ratio


def test_10_byte_identical_outputs(tmp_path):
    from wattline.session import save_session

    with criterion("10 determinism", 10.0):
        runner = CliRunner()
        session = make_session(
            ((5_000, 200.0), (5_000, 100.0)),
            start_ts_ms=TS0,
            markers=(
                (TS0 + 500, "training", "begin"),
                (TS0 + 4_500, "training", "end"),
                (TS0 + 5_500, "prediction", "begin"),
                (TS0 + 9_500, "prediction", "end"),
            ),
        )
        session_dir = tmp_path / "session"
        save_session(session, session_dir)

        outputs = {}
        for attempt in ("one", "two"):
            workdir = tmp_path / attempt
            workdir.mkdir()
            analysis = workdir / "analysis.json"
            estimate = workdir / "estimate.json"
            report_md = workdir / "report.md"
            assert (
                runner.invoke(
                    cli_main,
                    ["analyze", "--session", str(session_dir), "--out", str(analysis)],
                ).exit_code
                == 0
            )
            assert (
                runner.invoke(
                    cli_main,
                    [
                        "estimate",
                        "--models", "7", "--datasets", "3", "--configs", "16",
                        "--from-analysis", str(analysis),
                        "--factor", "481",
                        "--submissions", "269",
                        "--out", str(estimate),
                    ],
                ).exit_code
                == 0
            )
            assert (
                runner.invoke(
                    cli_main,
                    [
                        "report",
                        "--session", str(session_dir),
                        "--analysis", str(analysis),
                        "--estimate", str(estimate),
                        "--out", str(report_md),
                    ],
                ).exit_code
                == 0
            )
            outputs[attempt] = (
                analysis.read_bytes(),
                estimate.read_bytes(),
                report_md.read_bytes(),
            )
        assert outputs["one"] == outputs["two"]
