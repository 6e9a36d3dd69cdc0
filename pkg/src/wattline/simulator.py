"""Deterministic smart-plug simulator.

Serves the canonical status protocol from a piecewise-constant power
trace. The cumulative counter it reports is the exact integral of the
trace, which makes the simulator usable as a measurement oracle: the true
energy of any interval is known in closed form.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import uvicorn
from fastapi import FastAPI, Response
from pydantic import BaseModel

from .clock import Clock, SystemClock
from .errors import ValidationError

WH_PER_W_MS = 1.0 / 3_600_000.0  # 1 Wh == one watt for 3.6e6 ms


@dataclass(frozen=True)
class TraceProfile:
    """Piecewise-constant power trace anchored at a device timestamp.

    segments: ordered (duration_ms, watts) pairs. Power is `watts` on
    [t, t + duration_ms) for each segment, 0 before the anchor and after
    the last segment ends.
    """

    segments: tuple[tuple[int, float], ...]
    start_ts_ms: int = 0
    injected_offset_ms: int = 0

    def __post_init__(self):
        if not self.segments:
            raise ValidationError("profile needs at least one segment")
        for i, (duration_ms, watts) in enumerate(self.segments):
            if duration_ms <= 0:
                raise ValidationError(f"segment {i}: duration_ms must be > 0")
            if not (watts >= 0):
                raise ValidationError(f"segment {i}: watts must be >= 0")

    @property
    def total_duration_ms(self) -> int:
        return sum(d for d, _ in self.segments)

    @property
    def end_ts_ms(self) -> int:
        return self.start_ts_ms + self.total_duration_ms

    def _boundaries(self) -> tuple[list[int], list[float]]:
        """Segment start times and cumulative Wh at each segment start."""
        starts = [self.start_ts_ms]
        cum_wh = [0.0]
        for duration_ms, watts in self.segments:
            starts.append(starts[-1] + duration_ms)
            cum_wh.append(cum_wh[-1] + watts * duration_ms * WH_PER_W_MS)
        return starts, cum_wh

    def power_at(self, device_ts_ms: int) -> float:
        """Instantaneous watts at a device timestamp."""
        t = device_ts_ms
        if t < self.start_ts_ms or t >= self.end_ts_ms:
            return 0.0
        seg_start = self.start_ts_ms
        for duration_ms, watts in self.segments:
            if t < seg_start + duration_ms:
                return watts
            seg_start += duration_ms
        return 0.0

    def wh_at(self, device_ts_ms: int) -> float:
        """Exact cumulative energy (Wh) delivered up to a device timestamp."""
        t = min(max(device_ts_ms, self.start_ts_ms), self.end_ts_ms)
        starts, cum_wh = self._boundaries()
        # locate the segment containing t
        for i in range(len(self.segments)):
            if t < starts[i + 1]:
                return cum_wh[i] + self.segments[i][1] * (t - starts[i]) * WH_PER_W_MS
        return cum_wh[-1]

    def wh_between(self, t0_ms: int, t1_ms: int) -> float:
        """Exact energy (Wh) delivered on [t0, t1], device clock."""
        return self.wh_at(t1_ms) - self.wh_at(t0_ms)

    def to_dict(self) -> dict:
        return {
            "start_ts_ms": self.start_ts_ms,
            "injected_offset_ms": self.injected_offset_ms,
            "segments": [
                {"duration_ms": d, "watts": w} for d, w in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TraceProfile":
        try:
            segments = tuple(
                (int(seg["duration_ms"]), float(seg["watts"]))
                for seg in data["segments"]
            )
            return cls(
                segments=segments,
                start_ts_ms=int(data.get("start_ts_ms", 0)),
                injected_offset_ms=int(data.get("injected_offset_ms", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed trace profile: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "TraceProfile":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"profile file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"profile file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


class StatusPayload(BaseModel):
    """Canonical status schema served at GET /status."""

    power_w: float
    energy_wh_total: float
    ts_ms: int


class SimulatedPlug:
    """In-memory plug state: a trace profile plus a clock.

    The reported device timestamp is `clock.now_ms() + injected_offset_ms`,
    emulating a plug whose clock runs ahead (or behind) the host. All
    served values derive from the immutable profile and one clock read,
    so concurrent requests are race-free.
    """

    def __init__(self, profile: TraceProfile, clock: Clock | None = None):
        self.profile = profile
        self.clock = clock or SystemClock()
        self.online = True

    def device_now_ms(self) -> int:
        return self.clock.now_ms() + self.profile.injected_offset_ms

    def status(self) -> StatusPayload:
        ts = self.device_now_ms()
        return StatusPayload(
            power_w=self.profile.power_at(ts),
            energy_wh_total=self.profile.wh_at(ts),
            ts_ms=ts,
        )


def create_plug_app(plug: SimulatedPlug) -> FastAPI:
    """FastAPI app serving the canonical plug protocol for one plug."""
    app = FastAPI(title="wattline simulated plug", docs_url=None, redoc_url=None)

    @app.get("/status", response_model=StatusPayload)
    def status():
        if not plug.online:
            return Response(status_code=503, content="plug offline")
        return plug.status()

    return app


class PlugServer:
    """A simulated plug served over HTTP in a background thread."""

    def __init__(self, plug: SimulatedPlug, host: str = "127.0.0.1", port: int = 0):
        self.plug = plug
        self._config = uvicorn.Config(
            create_plug_app(plug), host=host, port=port, log_level="error"
        )
        self._server = uvicorn.Server(self._config)
        self._thread: threading.Thread | None = None

    def _run(self) -> None:
        try:
            self._server.run()
        except SystemExit:
            pass  # bind failure; surfaces as a startup error in start()

    def start(self, timeout_s: float = 10.0) -> "PlugServer":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        deadline = time.monotonic() + timeout_s
        while not self._server.started:
            if not self._thread.is_alive():
                raise RuntimeError(
                    f"simulated plug server failed to start on "
                    f"{self._config.host}:{self._config.port} (port in use?)"
                )
            if time.monotonic() > deadline:
                raise RuntimeError("simulated plug server start timed out")
            time.sleep(0.01)
        return self

    @property
    def endpoint(self) -> str:
        servers = self._server.servers
        sock = servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10)

    def __enter__(self) -> "PlugServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_simulated_plug(
    profile: TraceProfile,
    host: str = "127.0.0.1",
    port: int = 0,
    clock: Clock | None = None,
) -> PlugServer:
    """Start serving a profile; returns the running server handle."""
    return PlugServer(SimulatedPlug(profile, clock), host=host, port=port).start()
