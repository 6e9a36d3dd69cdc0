"""Per-phase and per-run energy from a recorded session.

Phase energy comes from the plug's cumulative counter: the counter value
at each phase boundary is linearly interpolated between the two nearest
samples, and the difference is the energy. The counter is exact between
samples it passes through, so interpolation error is confined to the two
boundary gaps; for piecewise-constant loads the error is bounded by
sum(|power step| * sampling interval) over steps inside those gaps, and
the result is exact when no step falls inside a gap.

Trapezoidal integration of instantaneous watts is computed only as a
cross-check diagnostic; disagreement beyond 2% is flagged, usually
pointing at undersampled load spikes or a misbehaving counter.

All operations are pure over an immutable session snapshot.
"""

from __future__ import annotations

import bisect
import logging
import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    DegenerateFitError,
    InsufficientDataError,
    OutOfRangeError,
    PhaseLookupError,
    UndefinedSpreadError,
    UnmeasurablePhaseError,
    ValidationError,
)
from .session import BaselineRecord, MeterSession, Phase
from .telemetry import DEFAULT_INTERVAL_MS, PowerSample

logger = logging.getLogger(__name__)

KWH_PER_WS = 1.0 / 3_600_000.0  # kWh per watt-second

#: Counter-vs-trapezoid disagreement that triggers a diagnostic warning.
CROSS_CHECK_WARN_FRACTION = 0.02


@dataclass(frozen=True)
class EnergyQuantity:
    """A nonnegative amount of electrical energy in kWh."""

    kwh: float

    def __post_init__(self):
        if not (math.isfinite(self.kwh) and self.kwh >= 0):
            raise ValidationError(f"kwh must be finite and >= 0, got {self.kwh}")


@dataclass(frozen=True)
class PhaseEnergy:
    """Energy attributed to one phase.

    `gross` is the whole-machine draw over the phase (the headline
    figure); `net_of_idle` subtracts the idle baseline and clamps at zero.
    """

    phase: Phase
    gross: EnergyQuantity
    duration_s: float
    net_of_idle: EnergyQuantity | None = None

    def __post_init__(self):
        if self.duration_s < 0:
            raise ValidationError("duration_s must be >= 0")
        if self.net_of_idle is not None and self.net_of_idle.kwh > self.gross.kwh:
            raise ValidationError("net-of-idle energy cannot exceed gross")


@dataclass(frozen=True)
class EnergyStats:
    """Mean/median/min/max summary of a group of energies."""

    mean: EnergyQuantity
    median: EnergyQuantity
    min: EnergyQuantity
    max: EnergyQuantity
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("stats need n >= 1")
        if not (self.min.kwh <= self.median.kwh <= self.max.kwh):
            raise ValidationError("median outside [min, max]")
        if not (self.min.kwh <= self.mean.kwh <= self.max.kwh):
            raise ValidationError("mean outside [min, max]")

    def to_dict(self) -> dict:
        return {
            "mean_kwh": self.mean.kwh,
            "median_kwh": self.median.kwh,
            "min_kwh": self.min.kwh,
            "max_kwh": self.max.kwh,
            "n": self.n,
        }


@dataclass(frozen=True)
class LinearFit:
    """Ordinary least squares energy-vs-runtime line."""

    slope: float  # kWh per second
    intercept: float  # kWh
    r2: float


@dataclass(frozen=True)
class RepetitionSpread:
    """Relative run-to-run variability of repeated measurements."""

    mean_abs_rel_deviation: float
    n_runs: int


def _kwh(value: EnergyQuantity | float) -> float:
    return value.kwh if isinstance(value, EnergyQuantity) else float(value)


def nominal_interval_ms(session: MeterSession) -> float:
    """Sampling period of a session: recorded setting, else median gap."""
    recorded = session.annotations.get("interval_ms")
    if recorded is not None:
        try:
            return float(recorded)
        except (TypeError, ValueError):
            pass
    gaps = [
        samples[i + 1].ts_ms - samples[i].ts_ms
        for samples in session.epoch_samples()
        for i in range(len(samples) - 1)
    ]
    if not gaps:
        return float(DEFAULT_INTERVAL_MS)
    return float(statistics.median(gaps))


def interpolate_counter(
    samples: Sequence[PowerSample], t_ms: float, tol_ms: float
) -> float:
    """Counter value (Wh) at time t within one epoch.

    t may overshoot the sampled range by at most `tol_ms` (one nominal
    sampling interval); such queries clamp to the nearest sample. Exact
    sample hits return the recorded value; anything else is linear
    interpolation between the bracketing samples.
    """
    if len(samples) < 2:
        raise InsufficientDataError(
            f"need at least 2 samples in the epoch, got {len(samples)}"
        )
    first_ts = samples[0].ts_ms
    last_ts = samples[-1].ts_ms
    if t_ms < first_ts:
        if t_ms < first_ts - tol_ms:
            raise OutOfRangeError(
                f"t={t_ms} precedes first sample {first_ts} by more than tol={tol_ms}"
            )
        t_ms = first_ts
    elif t_ms > last_ts:
        if t_ms > last_ts + tol_ms:
            raise OutOfRangeError(
                f"t={t_ms} exceeds last sample {last_ts} by more than tol={tol_ms}"
            )
        t_ms = last_ts

    ts = [s.ts_ms for s in samples]
    i = bisect.bisect_left(ts, t_ms)
    if i < len(ts) and ts[i] == t_ms:
        return samples[i].wh_total
    lo, hi = samples[i - 1], samples[i]
    fraction = (t_ms - lo.ts_ms) / (hi.ts_ms - lo.ts_ms)
    return lo.wh_total + (hi.wh_total - lo.wh_total) * fraction


def _locate_epoch(
    slices: list[tuple[int, int]],
    samples: list[PowerSample],
    t_ms: float,
    tol_ms: float,
) -> int:
    """Index of the epoch whose sampled range (plus tolerance) covers t."""
    if not slices:
        raise InsufficientDataError("session has no samples")
    session_first = samples[slices[0][0]].ts_ms
    session_last = samples[slices[-1][1] - 1].ts_ms
    if t_ms < session_first - tol_ms or t_ms > session_last + tol_ms:
        raise OutOfRangeError(
            f"t={t_ms} outside the sampled range "
            f"[{session_first}, {session_last}] plus tol={tol_ms}"
        )
    for k, (a, b) in enumerate(slices):
        if samples[a].ts_ms - tol_ms <= t_ms <= samples[b - 1].ts_ms + tol_ms:
            return k
    raise UnmeasurablePhaseError(
        f"t={t_ms} falls in a counter-reset gap with no samples to bracket it"
    )


def phase_energy(
    session: MeterSession,
    phase: Phase,
    baseline: BaselineRecord | None = None,
    tol_ms: float | None = None,
) -> PhaseEnergy:
    """Gross (and optionally net-of-idle) energy of one phase.

    A phase spanning counter resets is summed per epoch; energy that fell
    inside a reset gap itself is unrecorded and therefore unaccounted.
    """
    tol = nominal_interval_ms(session) if tol_ms is None else tol_ms
    slices = session.epoch_slices()
    samples = session.samples
    k_start = _locate_epoch(slices, samples, phase.start_ms, tol)
    k_end = _locate_epoch(slices, samples, phase.end_ms, tol)

    if k_start == k_end:
        epoch = samples[slices[k_start][0] : slices[k_start][1]]
        gross_wh = interpolate_counter(epoch, phase.end_ms, tol) - interpolate_counter(
            epoch, phase.start_ms, tol
        )
    else:
        start_epoch = samples[slices[k_start][0] : slices[k_start][1]]
        end_epoch = samples[slices[k_end][0] : slices[k_end][1]]
        gross_wh = start_epoch[-1].wh_total - interpolate_counter(
            start_epoch, phase.start_ms, tol
        )
        for k in range(k_start + 1, k_end):
            a, b = slices[k]
            gross_wh += samples[b - 1].wh_total - samples[a].wh_total
        gross_wh += interpolate_counter(end_epoch, phase.end_ms, tol) - end_epoch[0].wh_total

    gross = EnergyQuantity(kwh=gross_wh / 1000.0)
    duration_s = phase.duration_s
    net = None
    if baseline is not None:
        idle_kwh = baseline.mean_w * duration_s * KWH_PER_WS
        net = EnergyQuantity(kwh=max(0.0, gross.kwh - idle_kwh))
    return PhaseEnergy(phase=phase, gross=gross, duration_s=duration_s, net_of_idle=net)


def run_energy(
    session: MeterSession,
    labels: Iterable[str],
    tol_ms: float | None = None,
) -> EnergyQuantity:
    """Total gross energy of a run: the sum over its phase labels."""
    wanted = list(labels)
    phases = session.phases()
    by_label: dict[str, list[Phase]] = {}
    for p in phases:
        by_label.setdefault(p.label, []).append(p)
    total = 0.0
    for label in wanted:
        if label not in by_label:
            known = ", ".join(sorted(by_label)) or "none"
            raise PhaseLookupError(f"no phase labeled {label!r}; have: {known}")
        for p in by_label[label]:
            total += phase_energy(session, p, tol_ms=tol_ms).gross.kwh
    return EnergyQuantity(kwh=total)


def label_energy(
    session: MeterSession, label: str, tol_ms: float | None = None
) -> EnergyQuantity:
    """Gross energy of all phases carrying one label.

    The training-to-prediction ratio is just
    label_energy(s, "training").kwh / label_energy(s, "prediction").kwh.
    """
    return run_energy(session, [label], tol_ms=tol_ms)


def grouped_stats(values: Iterable[EnergyQuantity | float]) -> EnergyStats:
    """Mean/median/min/max of a group of energies.

    Median uses the mean-of-middles convention for even counts.
    """
    kwh = [_kwh(v) for v in values]
    if not kwh:
        raise InsufficientDataError("grouped_stats needs at least one value")
    lo, hi = min(kwh), max(kwh)
    # fsum/n can land one ulp outside [min, max]; clamp to keep the
    # real-arithmetic invariant of the stats type
    mean = min(max(statistics.fmean(kwh), lo), hi)
    return EnergyStats(
        mean=EnergyQuantity(mean),
        median=EnergyQuantity(statistics.median(kwh)),
        min=EnergyQuantity(lo),
        max=EnergyQuantity(hi),
        n=len(kwh),
    )


def repetition_spread(runs: Sequence[EnergyQuantity | float]) -> RepetitionSpread:
    """Mean absolute deviation from the run mean, relative to the mean."""
    kwh = [_kwh(v) for v in runs]
    if len(kwh) < 2:
        raise ValidationError(f"repetition spread needs >= 2 runs, got {len(kwh)}")
    mean = statistics.fmean(kwh)
    mad = statistics.fmean(abs(x - mean) for x in kwh)
    if mean == 0:
        if mad == 0:
            return RepetitionSpread(mean_abs_rel_deviation=0.0, n_runs=len(kwh))
        raise UndefinedSpreadError("mean energy is zero with nonzero deviations")
    return RepetitionSpread(mean_abs_rel_deviation=mad / mean, n_runs=len(kwh))


def fit_energy_runtime(
    points: Sequence[tuple[float, EnergyQuantity | float]],
) -> LinearFit:
    """Ordinary least squares fit of energy (kWh) against runtime (s)."""
    if len(points) < 2:
        raise ValidationError(f"fit needs >= 2 points, got {len(points)}")
    x = [float(d) for d, _ in points]
    y = [_kwh(e) for _, e in points]
    if len(set(x)) < 2:
        raise DegenerateFitError("all durations are identical; no line to fit")
    slope, intercept = statistics.linear_regression(x, y)
    y_mean = statistics.fmean(y)
    ss_tot = sum((v - y_mean) ** 2 for v in y)
    ss_res = sum((v - (slope * t + intercept)) ** 2 for t, v in zip(x, y))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return LinearFit(slope=slope, intercept=intercept, r2=min(1.0, max(0.0, r2)))


def trapezoid_energy(
    session: MeterSession,
    phase: Phase,
    tol_ms: float | None = None,
) -> EnergyQuantity:
    """Diagnostic: integrate instantaneous watts over the phase.

    Cross-check only; the counter is authoritative. Computed per epoch
    over the overlap of the phase with the epoch's sampled range.
    """
    tol = nominal_interval_ms(session) if tol_ms is None else tol_ms
    total_wh = 0.0
    for samples in session.epoch_samples():
        if len(samples) < 2:
            continue
        lo = max(phase.start_ms, samples[0].ts_ms)
        hi = min(phase.end_ms, samples[-1].ts_ms)
        if hi <= lo:
            continue
        ts = [s.ts_ms for s in samples]
        nodes: list[tuple[float, float]] = [(lo, _watts_at(samples, ts, lo))]
        i = bisect.bisect_right(ts, lo)
        while i < len(ts) and ts[i] < hi:
            nodes.append((float(ts[i]), samples[i].watts))
            i += 1
        nodes.append((hi, _watts_at(samples, ts, hi)))
        for (t0, w0), (t1, w1) in zip(nodes, nodes[1:]):
            total_wh += (w0 + w1) / 2.0 * (t1 - t0) / 3_600_000.0
    return EnergyQuantity(kwh=total_wh / 1000.0)


def _watts_at(samples: Sequence[PowerSample], ts: list[int], t_ms: float) -> float:
    i = bisect.bisect_left(ts, t_ms)
    if i < len(ts) and ts[i] == t_ms:
        return samples[i].watts
    lo, hi = samples[i - 1], samples[i]
    fraction = (t_ms - lo.ts_ms) / (hi.ts_ms - lo.ts_ms)
    return lo.watts + (hi.watts - lo.watts) * fraction


def round_sig(value: float, digits: int = 9) -> float:
    """Round to a fixed number of significant digits for file output."""
    if value == 0 or not math.isfinite(value):
        return value
    return float(f"{value:.{digits}g}")


def analyze_session(
    session: MeterSession,
    use_baseline: bool = True,
    tol_ms: float | None = None,
    run_labels: Sequence[str] | None = None,
) -> dict:
    """Full analysis of a session: the payload written to analysis.json.

    Numbers are rounded to 9 significant digits; output is a pure
    function of the session contents.
    """
    tol = nominal_interval_ms(session) if tol_ms is None else tol_ms
    baseline = session.baseline if use_baseline else None
    phases = session.phases()
    if not phases:
        raise InsufficientDataError("session has no complete phases to analyze")

    phase_records = []
    diagnostics = []
    by_label: dict[str, list[float]] = {}
    for phase in phases:
        pe = phase_energy(session, phase, baseline=baseline, tol_ms=tol)
        cross = trapezoid_energy(session, phase, tol_ms=tol)
        rel_diff = (
            abs(cross.kwh - pe.gross.kwh) / pe.gross.kwh if pe.gross.kwh > 0 else 0.0
        )
        flagged = rel_diff > CROSS_CHECK_WARN_FRACTION
        if flagged:
            logger.warning(
                "phase %r: counter (%g kWh) and trapezoid (%g kWh) disagree by %.1f%%",
                phase.label,
                pe.gross.kwh,
                cross.kwh,
                rel_diff * 100,
            )
        phase_records.append(
            {
                "label": phase.label,
                # timestamps are epoch-ms coordinates: serialized exactly,
                # never squeezed to significant digits
                "start_ms": phase.start_ms,
                "end_ms": phase.end_ms,
                "gross_kwh": round_sig(pe.gross.kwh),
                "net_kwh": round_sig(pe.net_of_idle.kwh) if pe.net_of_idle else None,
                "duration_s": round_sig(pe.duration_s),
            }
        )
        diagnostics.append(
            {
                "label": phase.label,
                "counter_kwh": round_sig(pe.gross.kwh),
                "trapezoid_kwh": round_sig(cross.kwh),
                "rel_diff": round_sig(rel_diff),
                "flagged": flagged,
            }
        )
        by_label.setdefault(phase.label, []).append(pe.gross.kwh)

    all_gross = [r["gross_kwh"] for r in phase_records]
    stats = {
        "phases": _stats_dict(grouped_stats(all_gross)),
        "by_label": {
            label: _stats_dict(grouped_stats(vals))
            for label, vals in sorted(by_label.items())
        },
    }
    repetition = {
        label: {
            "mean_abs_rel_deviation": round_sig(
                repetition_spread(vals).mean_abs_rel_deviation
            ),
            "n_runs": len(vals),
        }
        for label, vals in sorted(by_label.items())
        if len(vals) >= 2 and not (statistics.fmean(vals) == 0 and any(vals))
    }

    labels = list(run_labels) if run_labels else sorted(by_label)
    total = run_energy(session, labels, tol_ms=tol)

    return {
        "session_id": session.session_id,
        "interval_ms": round_sig(tol),
        "offset_ms": session.offset_ms(),
        "baseline_w": round_sig(baseline.mean_w) if baseline else None,
        "phases": phase_records,
        "run": {"labels": labels, "total_kwh": round_sig(total.kwh)},
        "stats": stats,
        "repetition": repetition,
        "diagnostics": diagnostics,
    }


def _stats_dict(stats: EnergyStats) -> dict:
    return {
        "mean_kwh": round_sig(stats.mean.kwh),
        "median_kwh": round_sig(stats.median.kwh),
        "min_kwh": round_sig(stats.min.kwh),
        "max_kwh": round_sig(stats.max.kwh),
        "n": stats.n,
    }
