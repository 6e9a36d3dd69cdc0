"""Smart-plug polling client, clock-offset probing, and the sampler loop.

The plug is polled over a minimal HTTP status protocol. Vendor payloads
that do not already match the canonical schema are translated through a
field-mapping file, so any plug exposing instantaneous watts and a
cumulative energy counter can be used.

Timestamps: samples carry the *device* timestamp reported by the plug;
phase markers elsewhere carry host timestamps. The `ClockOffset` measured
here is what lets analysis put both on one axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import requests

from .clock import Clock, SystemClock
from .errors import ProtocolError, TransportError, ValidationError

#: Sampling period used throughout unless overridden; the fastest
#: measurement interval of typical consumer plugs.
DEFAULT_INTERVAL_MS = 500

#: Hard floor on the polling period, protecting device firmware.
MIN_INTERVAL_MS = 100

DEFAULT_FAILURE_LIMIT = 10
DEFAULT_TIMEOUT_S = 5.0

CANONICAL_FIELDS = ("power_w", "energy_wh_total", "ts_ms")


@dataclass(frozen=True)
class PowerSample:
    """One telemetry reading, device-clock timestamped.

    watts is instantaneous active power; wh_total is the plug's cumulative
    energy counter in watt-hours (counters reported in kWh are scaled up on
    ingestion: 1 kWh = 1000 Wh).
    """

    ts_ms: int
    watts: float
    wh_total: float

    def __post_init__(self):
        if not (math.isfinite(self.watts) and self.watts >= 0):
            raise ValidationError(f"watts must be finite and >= 0, got {self.watts}")
        if not (math.isfinite(self.wh_total) and self.wh_total >= 0):
            raise ValidationError(
                f"wh_total must be finite and >= 0, got {self.wh_total}"
            )

    def to_dict(self) -> dict:
        return {"ts_ms": self.ts_ms, "watts": self.watts, "wh_total": self.wh_total}

    @classmethod
    def from_dict(cls, data: dict) -> "PowerSample":
        return cls(
            ts_ms=int(data["ts_ms"]),
            watts=float(data["watts"]),
            wh_total=float(data["wh_total"]),
        )


@dataclass(frozen=True)
class ClockOffset:
    """Device-minus-host clock offset, with the probe's round-trip time."""

    offset_ms: float
    rtt_ms: float

    def __post_init__(self):
        if not math.isfinite(self.offset_ms):
            raise ValidationError("offset_ms must be finite")
        if not (math.isfinite(self.rtt_ms) and self.rtt_ms >= 0):
            raise ValidationError("rtt_ms must be finite and >= 0")

    def to_dict(self) -> dict:
        return {"offset_ms": self.offset_ms, "rtt_ms": self.rtt_ms}

    @classmethod
    def from_dict(cls, data: dict) -> "ClockOffset":
        return cls(offset_ms=float(data["offset_ms"]), rtt_ms=float(data["rtt_ms"]))


class FieldMapping:
    """Translates a vendor status payload into the canonical schema.

    Mapping file format (JSON)::

        {
          "power_w": "switch.apower",
          "energy_wh_total": "switch.aenergy.total",
          "ts_ms": "sys.unixtime_ms",
          "scale": {"energy_wh_total": 1000.0}
        }

    Paths are dot-separated; integer segments index into lists. `scale`
    multiplies the extracted value (e.g. a counter reported in kWh needs
    scale 1000 to become Wh).
    """

    def __init__(self, paths: dict[str, str], scale: dict[str, float] | None = None):
        missing = [f for f in CANONICAL_FIELDS if f not in paths]
        if missing:
            raise ValidationError(f"mapping missing canonical fields: {missing}")
        self.paths = {f: paths[f] for f in CANONICAL_FIELDS}
        self.scale = dict(scale or {})

    @classmethod
    def load(cls, path: str | Path) -> "FieldMapping":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"mapping file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"mapping file {path} is not valid JSON: {exc}") from exc
        scale = data.pop("scale", None)
        return cls(data, scale)

    @staticmethod
    def _extract(payload: object, path: str) -> object:
        node = payload
        for segment in path.split("."):
            if isinstance(node, list):
                try:
                    node = node[int(segment)]
                except (ValueError, IndexError):
                    raise KeyError(segment) from None
            elif isinstance(node, dict):
                node = node[segment]
            else:
                raise KeyError(segment)
        return node

    def translate(self, payload: dict) -> dict:
        out = {}
        for field in CANONICAL_FIELDS:
            path = self.paths[field]
            try:
                value = self._extract(payload, path)
            except KeyError:
                raise ProtocolError(
                    f"status payload missing field {field!r} (source path {path!r})"
                ) from None
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ProtocolError(
                    f"status field {field!r} (source path {path!r}) is not numeric"
                )
            out[field] = value * self.scale.get(field, 1.0)
        return out


def parse_status_payload(payload: dict, mapping: FieldMapping | None = None) -> PowerSample:
    """Canonical (or mapped) status object -> PowerSample."""
    if mapping is not None:
        payload = mapping.translate(payload)
    for field in CANONICAL_FIELDS:
        if field not in payload:
            raise ProtocolError(f"status payload missing field {field!r}")
        value = payload[field]
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ProtocolError(f"status field {field!r} is not numeric")
    if payload["power_w"] < 0:
        raise ProtocolError(f"negative power reading: {payload['power_w']}")
    if payload["energy_wh_total"] < 0:
        raise ProtocolError(f"negative energy counter: {payload['energy_wh_total']}")
    return PowerSample(
        ts_ms=int(payload["ts_ms"]),
        watts=float(payload["power_w"]),
        wh_total=float(payload["energy_wh_total"]),
    )


def status_url(endpoint: str) -> str:
    """Full status URL for a plug endpoint.

    A bare host gets the canonical `/status` path appended; an endpoint
    that already names a path (vendor-specific status routes) is used
    verbatim.
    """
    base = endpoint.rstrip("/")
    tail = base.split("://", 1)[-1]
    if "/" in tail:
        return base
    return base + "/status"


class PlugClient:
    """HTTP client for one plug, reusing a connection across polls."""

    def __init__(
        self,
        endpoint: str,
        mapping: FieldMapping | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        session: requests.Session | None = None,
    ):
        self.url = status_url(endpoint)
        self.mapping = mapping
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def fetch_payload(self) -> dict:
        try:
            response = self._session.get(self.url, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise TransportError(f"poll failed: {exc}") from exc
        if response.status_code != 200:
            raise TransportError(f"poll failed: HTTP {response.status_code}")
        try:
            payload = response.json()
        except ValueError as exc:
            raise ProtocolError(f"status body is not JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ProtocolError("status body is not a JSON object")
        return payload

    def poll(self) -> PowerSample:
        return parse_status_payload(self.fetch_payload(), self.mapping)

    def close(self) -> None:
        self._session.close()


def poll_status(
    endpoint: str,
    mapping: FieldMapping | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> PowerSample:
    """One-shot status poll; returns the device's own reading untouched."""
    client = PlugClient(endpoint, mapping=mapping, timeout_s=timeout_s)
    try:
        return client.poll()
    finally:
        client.close()


def estimate_clock_offset(
    endpoint: str,
    probes: int = 7,
    mapping: FieldMapping | None = None,
    clock: Clock | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> ClockOffset:
    """Estimate the device-minus-host clock offset.

    Each probe brackets one poll between host send/receive times and
    assumes the device stamped its reply mid-flight:
    offset = device_ts - (t_send + t_recv) / 2. The probe with the
    smallest round-trip time is returned, since a short round trip bounds
    the asymmetry error by rtt/2.
    """
    if probes < 1:
        raise ValidationError(f"probes must be >= 1, got {probes}")
    clock = clock or SystemClock()
    client = PlugClient(endpoint, mapping=mapping, timeout_s=timeout_s)
    best: ClockOffset | None = None
    last_error: Exception | None = None
    try:
        for _ in range(probes):
            t_send = clock.now_ms()
            try:
                sample = client.poll()
            except (TransportError, ProtocolError) as exc:
                last_error = exc
                continue
            t_recv = clock.now_ms()
            rtt = t_recv - t_send
            offset = sample.ts_ms - (t_send + t_recv) / 2.0
            if best is None or rtt < best.rtt_ms:
                best = ClockOffset(offset_ms=offset, rtt_ms=rtt)
    finally:
        client.close()
    if best is None:
        raise TransportError(f"all {probes} offset probes failed: {last_error}")
    return best


class SampleSink(Protocol):
    """Destination for sampler output; SessionWriter satisfies this."""

    def append_sample(self, sample: PowerSample) -> None: ...

    def annotate(self, key: str, value: object) -> None: ...


@dataclass
class SamplerStats:
    """Outcome of a sampler run."""

    samples_written: int = 0
    polls_failed: int = 0
    duplicates_skipped: int = 0
    aborted: bool = False
    diagnostic: str | None = None


class Sampler:
    """Polls one plug on a fixed period and appends samples to a sink.

    The sampler is the sole writer to its sink. A failed or late poll
    leaves a gap in the record; samples are never fabricated or
    backfilled. After `failure_limit` consecutive failures the run aborts
    and the diagnostic is recorded on the sink.
    """

    def __init__(
        self,
        client: PlugClient,
        sink: SampleSink,
        interval_ms: int = DEFAULT_INTERVAL_MS,
        clock: Clock | None = None,
        failure_limit: int = DEFAULT_FAILURE_LIMIT,
    ):
        if interval_ms < MIN_INTERVAL_MS:
            raise ValidationError(
                f"interval_ms must be >= {MIN_INTERVAL_MS}, got {interval_ms}"
            )
        if failure_limit < 1:
            raise ValidationError("failure_limit must be >= 1")
        self.client = client
        self.sink = sink
        self.interval_ms = interval_ms
        self.clock = clock or SystemClock()
        self.failure_limit = failure_limit

    def run(
        self,
        duration_ms: int | None = None,
        should_stop: Callable[[], bool] | None = None,
    ) -> SamplerStats:
        """Sample until the duration elapses or `should_stop` turns true."""
        stats = SamplerStats()
        consecutive_failures = 0
        last_ts: int | None = None
        start = self.clock.now_ms()
        deadline = None if duration_ms is None else start + duration_ms
        next_tick = start
        while True:
            if should_stop is not None and should_stop():
                break
            now = self.clock.now_ms()
            if deadline is not None and now >= deadline:
                break
            try:
                sample = self.client.poll()
            except (TransportError, ProtocolError) as exc:
                stats.polls_failed += 1
                consecutive_failures += 1
                if consecutive_failures >= self.failure_limit:
                    stats.aborted = True
                    stats.diagnostic = (
                        f"aborted after {consecutive_failures} consecutive "
                        f"poll failures: {exc}"
                    )
                    self.sink.annotate("sampler_abort", stats.diagnostic)
                    break
            else:
                consecutive_failures = 0
                if last_ts is not None and sample.ts_ms <= last_ts:
                    # device clock has not advanced; drop rather than duplicate
                    stats.duplicates_skipped += 1
                else:
                    self.sink.append_sample(sample)
                    last_ts = sample.ts_ms
                    stats.samples_written += 1
            next_tick += self.interval_ms
            lag = next_tick - self.clock.now_ms()
            if lag > 0:
                self.clock.sleep_ms(lag)
            else:
                # fell behind; realign to now and leave the gap visible
                next_tick = self.clock.now_ms()
        return stats


def run_sampler(
    endpoint: str,
    sink: SampleSink,
    interval_ms: int = DEFAULT_INTERVAL_MS,
    duration_ms: int | None = None,
    mapping: FieldMapping | None = None,
    clock: Clock | None = None,
    failure_limit: int = DEFAULT_FAILURE_LIMIT,
    should_stop: Callable[[], bool] | None = None,
) -> SamplerStats:
    """Convenience wrapper: build a client and run one sampling session."""
    client = PlugClient(endpoint, mapping=mapping)
    sampler = Sampler(
        client, sink, interval_ms=interval_ms, clock=clock, failure_limit=failure_limit
    )
    try:
        return sampler.run(duration_ms=duration_ms, should_stop=should_stop)
    finally:
        client.close()
