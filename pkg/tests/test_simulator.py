"""Simulated plug: analytic counter and served protocol."""

from __future__ import annotations

import json
import random

import pytest
import requests

from helpers import analytic_wh
from wattline.errors import ValidationError
from wattline.simulator import TraceProfile, serve_simulated_plug

TS0 = 1_700_000_000_000


class TestTraceProfile:
    def test_rejects_empty_segments(self):
        with pytest.raises(ValidationError):
            TraceProfile(segments=())

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValidationError, match="duration"):
            TraceProfile(segments=((0, 100.0),))

    def test_rejects_negative_watts(self):
        with pytest.raises(ValidationError, match="watts"):
            TraceProfile(segments=((1000, -1.0),))

    def test_one_hour_kilowatt_is_1000_wh(self):
        profile = TraceProfile(segments=((3_600_000, 1000.0),), start_ts_ms=TS0)
        assert profile.wh_at(TS0 + 3_600_000) == pytest.approx(1000.0, abs=1e-9)

    def test_zero_power_is_zero_everywhere(self):
        profile = TraceProfile(segments=((1000, 0.0),), start_ts_ms=TS0)
        for t in (TS0 - 10, TS0, TS0 + 500, TS0 + 1000, TS0 + 99999):
            assert profile.wh_at(t) == 0.0

    def test_two_segment_midpoint(self):
        profile = TraceProfile(segments=((1000, 100.0), (1000, 300.0)), start_ts_ms=TS0)
        expected = (100 * 1.0 + 300 * 0.5) / 3600.0
        assert profile.wh_at(TS0 + 1500) == pytest.approx(expected, abs=1e-9)

    def test_power_at_segment_start_and_end(self):
        profile = TraceProfile(segments=((10_000, 200.0),), start_ts_ms=TS0)
        assert profile.power_at(TS0) == 200.0
        assert profile.power_at(TS0 + 9_999) == 200.0
        assert profile.power_at(TS0 + 10_000) == 0.0
        assert profile.power_at(TS0 - 1) == 0.0

    def test_counter_matches_independent_integral(self):
        rng = random.Random(42)
        for _ in range(50):
            segments = tuple(
                (rng.randint(1, 5000), round(rng.uniform(0, 600), 3))
                for _ in range(rng.randint(1, 10))
            )
            profile = TraceProfile(segments=segments, start_ts_ms=TS0)
            total = profile.total_duration_ms
            for _ in range(20):
                t = TS0 + rng.randint(-100, total + 100)
                assert profile.wh_at(t) == pytest.approx(
                    analytic_wh(segments, TS0, t), abs=1e-9
                )

    def test_counter_is_monotone(self):
        rng = random.Random(7)
        segments = tuple((rng.randint(1, 2000), rng.uniform(0, 500)) for _ in range(8))
        profile = TraceProfile(segments=segments, start_ts_ms=TS0)
        times = sorted(rng.randint(-10, profile.total_duration_ms + 10) for _ in range(200))
        values = [profile.wh_at(TS0 + t) for t in times]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_json_roundtrip(self, tmp_path):
        profile = TraceProfile(
            segments=((1000, 100.0), (2000, 0.5)),
            start_ts_ms=TS0,
            injected_offset_ms=-250,
        )
        path = tmp_path / "profile.json"
        path.write_text(json.dumps(profile.to_dict()))
        assert TraceProfile.load(path) == profile

    def test_load_missing_file_names_path(self, tmp_path):
        with pytest.raises(ValidationError, match="nope.json"):
            TraceProfile.load(tmp_path / "nope.json")

    def test_load_rejects_bad_segments(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"segments": [{"duration_ms": 100}]}))
        with pytest.raises(ValidationError):
            TraceProfile.load(path)


class TestServedProtocol:
    def test_status_schema(self, plug_env):
        profile = TraceProfile(segments=((10_000, 200.0),), start_ts_ms=TS0)
        plug_env.mount(profile)
        body = requests.get(f"{plug_env.endpoint}/status", timeout=5).json()
        assert set(body) == {"power_w", "energy_wh_total", "ts_ms"}
        assert body["power_w"] == 200.0
        assert body["energy_wh_total"] == 0.0
        assert body["ts_ms"] == TS0

    def test_counter_served_is_exact_integral(self, plug_env):
        profile = TraceProfile(segments=((3_600_000, 1000.0),), start_ts_ms=TS0)
        clock = plug_env.mount(profile)
        clock.advance_ms(3_600_000)
        body = requests.get(f"{plug_env.endpoint}/status", timeout=5).json()
        assert body["energy_wh_total"] == pytest.approx(1000.0, abs=1e-9)

    def test_reported_ts_carries_injected_offset(self, plug_env):
        profile = TraceProfile(
            segments=((5_000, 50.0),), start_ts_ms=TS0, injected_offset_ms=3000
        )
        clock = plug_env.mount(profile, clock_start_ms=TS0)
        body = requests.get(f"{plug_env.endpoint}/status", timeout=5).json()
        assert body["ts_ms"] == clock.now_ms() + 3000

    def test_bind_failure_raises_startup_error(self, plug_env, shared_plug_server):
        _, server = shared_plug_server
        port = int(server.endpoint.rsplit(":", 1)[1])
        profile = TraceProfile(segments=((1000, 1.0),), start_ts_ms=TS0)
        with pytest.raises(RuntimeError, match="failed to start"):
            serve_simulated_plug(profile, port=port)

    def test_offline_plug_returns_503(self, plug_env):
        plug_env.mount(TraceProfile(segments=((1000, 1.0),), start_ts_ms=TS0))
        plug_env.plug.online = False
        response = requests.get(f"{plug_env.endpoint}/status", timeout=5)
        assert response.status_code == 503
