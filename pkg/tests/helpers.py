"""Shared test helpers: independent oracles and session builders.

The analytic integral here is written as overlap accumulation, a
different formulation from the production counter, so the two sides of
energy checks stay independent.
"""

from __future__ import annotations

import math

from wattline.session import MeterSession, PhaseMarker
from wattline.telemetry import ClockOffset, PowerSample

WH_PER_W_MS = 1.0 / 3_600_000.0


def analytic_wh(segments, start_ts_ms, t_ms):
    """Energy (Wh) delivered up to t, by per-segment overlap accumulation."""
    total = 0.0
    cursor = start_ts_ms
    for duration_ms, watts in segments:
        overlap = min(t_ms, cursor + duration_ms) - max(start_ts_ms, cursor)
        if overlap > 0:
            total += watts * overlap * WH_PER_W_MS
        cursor += duration_ms
    return total


def analytic_kwh_between(segments, start_ts_ms, a_ms, b_ms):
    return (analytic_wh(segments, start_ts_ms, b_ms) - analytic_wh(segments, start_ts_ms, a_ms)) / 1000.0


def power_step_points(segments, start_ts_ms):
    """(time, |delta watts|) at every power discontinuity.

    Includes the switch-on at the profile start and the drop to zero at
    its end, so bounds derived from these points stay conservative.
    """
    points = []
    t = start_ts_ms
    prev_w = 0.0
    for duration_ms, watts in segments:
        if watts != prev_w:
            points.append((t, abs(watts - prev_w)))
        prev_w = watts
        t += duration_ms
    if prev_w != 0.0:
        points.append((t, prev_w))
    return points


def step_error_bound_kwh(segments, start_ts_ms, a_ms, b_ms, interval_ms):
    """Interpolation error bound: power steps near the phase, one interval each.

    Steps strictly inside a sampling gap can displace the interpolated
    counter at a phase endpoint by at most |delta P| * interval; steps in
    the endpoint gaps may sit just outside [a, b], so the window is
    inflated by one interval on each side.
    """
    lo = a_ms - interval_ms
    hi = b_ms + interval_ms
    return sum(
        delta * interval_ms * WH_PER_W_MS / 1000.0
        for point, delta in power_step_points(segments, start_ts_ms)
        if lo <= point <= hi
    )


def has_step_inside_gap(segments, start_ts_ms, first_tick_ms, interval_ms):
    """True when any power step falls strictly between sampling ticks."""
    return any(
        (point - first_tick_ms) % interval_ms != 0
        for point, _ in power_step_points(segments, start_ts_ms)
    )


def sample_ticks(segments, start_ts_ms, interval_ms=500, offset_ms=0):
    """Samples a perfect sampler would record: analytic counter at ticks."""
    end = start_ts_ms + sum(d for d, _ in segments)
    samples = []
    t = start_ts_ms
    while t <= end:
        watts = _power_at(segments, start_ts_ms, t)
        samples.append(
            PowerSample(ts_ms=t + offset_ms, watts=watts, wh_total=analytic_wh(segments, start_ts_ms, t))
        )
        t += interval_ms
    return samples


def _power_at(segments, start_ts_ms, t_ms):
    cursor = start_ts_ms
    for duration_ms, watts in segments:
        if cursor <= t_ms < cursor + duration_ms:
            return watts
        cursor += duration_ms
    return 0.0


def make_session(
    segments,
    start_ts_ms=1_700_000_000_000,
    interval_ms=500,
    markers=(),
    offset_ms=None,
    baseline=None,
    session_id="test",
    annotations=None,
):
    """In-memory session with ideal samples from an analytic trace."""
    samples = sample_ticks(segments, start_ts_ms, interval_ms)
    ann = {"interval_ms": interval_ms}
    if annotations:
        ann.update(annotations)
    return MeterSession(
        session_id=session_id,
        samples=samples,
        markers=[PhaseMarker(ts_ms=ts, label=label, kind=kind) for ts, label, kind in markers],
        baseline=baseline,
        clock_offset=None if offset_ms is None else ClockOffset(offset_ms=offset_ms, rtt_ms=0.0),
        annotations=ann,
        epochs=[0],
    )


def counter_session(counter_points, session_id="counter", markers=(), epochs=None, interval_ms=None):
    """Session built directly from (ts_ms, wh_total) counter points."""
    samples = [PowerSample(ts_ms=ts, watts=0.0, wh_total=wh) for ts, wh in counter_points]
    annotations = {}
    if interval_ms is not None:
        annotations["interval_ms"] = interval_ms
    return MeterSession(
        session_id=session_id,
        samples=samples,
        markers=[PhaseMarker(ts_ms=ts, label=label, kind=kind) for ts, label, kind in markers],
        annotations=annotations,
        epochs=epochs if epochs is not None else [0],
    )


def ulp_close(a, b, ulps=4):
    """Within a few floating-point ulps (for properties exact in real arithmetic)."""
    return math.isclose(a, b, rel_tol=ulps * 2.0**-52, abs_tol=1e-300)
