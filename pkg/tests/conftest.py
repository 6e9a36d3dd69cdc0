from __future__ import annotations

import sys
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wattline.clock import SimulatedClock
from wattline.simulator import PlugServer, SimulatedPlug, TraceProfile


@pytest.fixture(scope="session")
def shared_plug_server():
    """One uvicorn-backed simulated plug for the whole run.

    Tests swap the plug's profile and clock instead of restarting the
    server; the endpoint stays stable.
    """
    plug = SimulatedPlug(TraceProfile(segments=((1000, 0.0),)), SimulatedClock())
    server = PlugServer(plug).start()
    yield plug, server
    server.stop()


@pytest.fixture
def plug_env(shared_plug_server):
    """Mount a profile on the shared plug; returns plug/endpoint/clock."""
    plug, server = shared_plug_server

    def mount(profile: TraceProfile, clock_start_ms: int | None = None, clock=None):
        if clock is None:
            # default host start puts the device clock exactly at the profile start
            if clock_start_ms is None:
                clock_start_ms = profile.start_ts_ms - profile.injected_offset_ms
            clock = SimulatedClock(clock_start_ms)
        plug.profile = profile
        plug.clock = clock
        plug.online = True
        return clock

    yield SimpleNamespace(plug=plug, endpoint=server.endpoint, mount=mount)
    plug.online = True
