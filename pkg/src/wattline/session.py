"""Measurement-session persistence: samples, markers, baseline, offset.

On-disk layout (one directory per session)::

    samples.jsonl   {"ts_ms": int, "watts": number, "wh_total": number}
    markers.jsonl   {"ts_ms": int, "label": str, "kind": "begin"|"end"}
    session.json    {"session_id", "clock_offset", "baseline",
                     "annotations", "epochs"}

Markers are raw append-only events (live `mark` calls and post-hoc log
ingestion produce identical records); begin/end pairing happens when
phases are materialized for analysis. Counter resets are tolerated and
recorded as epoch boundaries instead of rejected, since plugs reboot.
"""

from __future__ import annotations

import json
import math
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import (
    CorruptSessionError,
    OrderingError,
    PairingError,
    ValidationError,
)
from .telemetry import ClockOffset, PowerSample

SAMPLES_FILE = "samples.jsonl"
MARKERS_FILE = "markers.jsonl"
MANIFEST_FILE = "session.json"

MARKER_KINDS = ("begin", "end")


@dataclass(frozen=True)
class PhaseMarker:
    """A labeled begin/end event, host-clock timestamped."""

    ts_ms: int
    label: str
    kind: str

    def __post_init__(self):
        if not self.label:
            raise ValidationError("marker label must be non-empty")
        if self.kind not in MARKER_KINDS:
            raise ValidationError(f"marker kind must be one of {MARKER_KINDS}")

    def to_dict(self) -> dict:
        return {"ts_ms": self.ts_ms, "label": self.label, "kind": self.kind}

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseMarker":
        return cls(ts_ms=int(data["ts_ms"]), label=str(data["label"]), kind=str(data["kind"]))


@dataclass(frozen=True)
class Phase:
    """A matched begin/end interval, corrected onto the device clock."""

    label: str
    start_ms: float
    end_ms: float

    def __post_init__(self):
        if self.end_ms < self.start_ms:
            raise ValidationError(
                f"phase {self.label!r}: end {self.end_ms} before start {self.start_ms}"
            )

    @property
    def duration_s(self) -> float:
        return (self.end_ms - self.start_ms) / 1000.0


@dataclass(frozen=True)
class BaselineRecord:
    """Idle power draw of the machine, measured with nothing running."""

    mean_w: float
    stddev_w: float
    window_ms: int
    sample_count: int

    def __post_init__(self):
        if not (math.isfinite(self.mean_w) and self.mean_w >= 0):
            raise ValidationError("baseline mean_w must be finite and >= 0")
        if not (math.isfinite(self.stddev_w) and self.stddev_w >= 0):
            raise ValidationError("baseline stddev_w must be finite and >= 0")
        if self.sample_count < 2:
            raise ValidationError("baseline needs at least 2 samples")

    def to_dict(self) -> dict:
        return {
            "mean_w": self.mean_w,
            "stddev_w": self.stddev_w,
            "window_ms": self.window_ms,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BaselineRecord":
        return cls(
            mean_w=float(data["mean_w"]),
            stddev_w=float(data["stddev_w"]),
            window_ms=int(data["window_ms"]),
            sample_count=int(data["sample_count"]),
        )


@dataclass
class MeterSession:
    """One recorded measurement run, loaded as an immutable snapshot.

    `epochs` lists the sample index at which each counter epoch starts
    (always beginning with 0 when any samples exist). Within an epoch the
    cumulative counter is non-decreasing.
    """

    session_id: str
    samples: list[PowerSample] = field(default_factory=list)
    markers: list[PhaseMarker] = field(default_factory=list)
    baseline: BaselineRecord | None = None
    clock_offset: ClockOffset | None = None
    annotations: dict = field(default_factory=dict)
    epochs: list[int] = field(default_factory=list)

    def epoch_slices(self) -> list[tuple[int, int]]:
        """(start, end) index pairs, end exclusive, one per epoch."""
        if not self.samples:
            return []
        bounds = list(self.epochs) + [len(self.samples)]
        return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]

    def epoch_samples(self) -> list[list[PowerSample]]:
        return [self.samples[a:b] for a, b in self.epoch_slices()]

    def offset_ms(self) -> float:
        return self.clock_offset.offset_ms if self.clock_offset else 0.0

    def phases(self) -> list[Phase]:
        """Pair markers into phases, corrected onto the device clock."""
        return pair_phases(self.markers, self.offset_ms())


def pair_phases(markers: Iterable[PhaseMarker], offset_ms: float = 0.0) -> list[Phase]:
    """Match begin/end markers per label, in timestamp order.

    Host marker timestamps are shifted by +offset_ms (device minus host)
    so phases land on the device clock that samples use. The shift is
    applied to both endpoints, so durations are offset-invariant.
    """
    ordered = sorted(markers, key=lambda m: m.ts_ms)
    open_begin: dict[str, PhaseMarker] = {}
    phases: list[Phase] = []
    for marker in ordered:
        if marker.kind == "begin":
            if marker.label in open_begin:
                raise PairingError(
                    f"overlapping phases: begin {marker.label!r} at {marker.ts_ms} "
                    f"while a previous begin is still open"
                )
            open_begin[marker.label] = marker
        else:
            begin = open_begin.pop(marker.label, None)
            if begin is None:
                raise PairingError(
                    f"end marker for {marker.label!r} at {marker.ts_ms} has no begin"
                )
            phases.append(
                Phase(
                    label=marker.label,
                    start_ms=begin.ts_ms + offset_ms,
                    end_ms=marker.ts_ms + offset_ms,
                )
            )
    if open_begin:
        dangling = ", ".join(sorted(open_begin))
        raise PairingError(f"begin marker(s) without end: {dangling}")
    return phases


class SessionWriter:
    """Single-writer appender for one session directory.

    Samples are written line-by-line as they arrive; the manifest is
    rewritten on metadata changes and on close. Marker appends are plain
    line appends and may also come from a concurrent `mark` process (see
    `append_marker_file`); readers sort markers on load.
    """

    def __init__(self, directory: str | Path, session_id: str | None = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._samples_path = self.directory / SAMPLES_FILE
        self._manifest_path = self.directory / MANIFEST_FILE

        if self._manifest_path.exists():
            existing = load_session(self.directory)
            self.session_id = session_id or existing.session_id
            self.baseline = existing.baseline
            self.clock_offset = existing.clock_offset
            self.annotations = dict(existing.annotations)
            self.epochs = list(existing.epochs)
            self._count = len(existing.samples)
            self._last = existing.samples[-1] if existing.samples else None
        else:
            self.session_id = session_id or uuid.uuid4().hex[:12]
            self.baseline = None
            self.clock_offset = None
            self.annotations = {}
            self.epochs = []
            self._count = 0
            self._last = None
            self._write_manifest()

        self._samples_fh = self._samples_path.open("a")

    def append_sample(self, sample: PowerSample, new_epoch: bool = False) -> None:
        """Persist one sample; a counter decrease starts a new epoch."""
        if self._last is not None and sample.ts_ms <= self._last.ts_ms:
            raise OrderingError(
                f"sample ts {sample.ts_ms} not after previous {self._last.ts_ms}"
            )
        if self._count == 0:
            self.epochs.append(0)
            self._write_manifest()
        elif new_epoch or sample.wh_total < self._last.wh_total:
            self.epochs.append(self._count)
            self._write_manifest()
        self._samples_fh.write(json.dumps(sample.to_dict()) + "\n")
        self._samples_fh.flush()
        self._last = sample
        self._count += 1

    def append_marker(self, marker: PhaseMarker) -> None:
        append_marker_file(self.directory, marker)

    def annotate(self, key: str, value: object) -> None:
        self.annotations[str(key)] = value
        self._write_manifest()

    def set_baseline(self, baseline: BaselineRecord) -> None:
        self.baseline = baseline
        self._write_manifest()

    def set_clock_offset(self, offset: ClockOffset) -> None:
        self.clock_offset = offset
        self._write_manifest()

    def _write_manifest(self) -> None:
        manifest = {
            "session_id": self.session_id,
            "clock_offset": self.clock_offset.to_dict() if self.clock_offset else None,
            "baseline": self.baseline.to_dict() if self.baseline else None,
            "annotations": self.annotations,
            "epochs": self.epochs,
        }
        self._manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def close(self) -> None:
        self._samples_fh.close()
        self._write_manifest()

    def __enter__(self) -> "SessionWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def append_marker_file(directory: str | Path, marker: PhaseMarker) -> None:
    """Append one marker record; safe next to a running sampler."""
    path = Path(directory) / MARKERS_FILE
    with path.open("a") as fh:
        fh.write(json.dumps(marker.to_dict()) + "\n")


def ingest_markers(directory: str | Path, source: str | Path) -> int:
    """Copy markers from an experiment-log JSONL file into the session.

    Returns the number of markers ingested. Pairing is validated here so
    malformed logs fail fast, but the stored records stay raw events.
    """
    source_path = Path(source)
    markers = _read_markers(source_path)
    pair_phases(markers)  # validate pairing; raises PairingError
    for marker in markers:
        append_marker_file(directory, marker)
    return len(markers)


def _read_markers(path: Path) -> list[PhaseMarker]:
    markers: list[PhaseMarker] = []
    if not path.exists():
        return markers
    with path.open() as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                markers.append(PhaseMarker.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as exc:
                raise CorruptSessionError(
                    f"bad marker record at {path}:{lineno + 1}: {exc}", record_index=lineno
                ) from exc
    return markers


def load_session(directory: str | Path) -> MeterSession:
    """Load and validate a session directory.

    Checks structural invariants: parseable records, strictly increasing
    sample timestamps, counter monotone within each recorded epoch, and a
    manifest epoch list consistent with the samples. Marker pairing is
    validated later, when phases are materialized.
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise CorruptSessionError(f"no {MANIFEST_FILE} in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptSessionError(f"manifest is not valid JSON: {exc}") from exc

    samples = _read_samples(directory / SAMPLES_FILE)
    markers = _read_markers(directory / MARKERS_FILE)

    baseline = manifest.get("baseline")
    clock_offset = manifest.get("clock_offset")
    try:
        session = MeterSession(
            session_id=str(manifest.get("session_id", "")) or "unnamed",
            samples=samples,
            markers=markers,
            baseline=BaselineRecord.from_dict(baseline) if baseline else None,
            clock_offset=ClockOffset.from_dict(clock_offset) if clock_offset else None,
            annotations=dict(manifest.get("annotations", {})),
            epochs=[int(i) for i in manifest.get("epochs", [])],
        )
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise CorruptSessionError(f"bad manifest: {exc}") from exc

    _validate_epochs(session)
    return session


def _read_samples(path: Path) -> list[PowerSample]:
    samples: list[PowerSample] = []
    if not path.exists():
        return samples
    last_ts: int | None = None
    with path.open() as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                sample = PowerSample.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as exc:
                raise CorruptSessionError(
                    f"bad sample record at line {lineno + 1}: {exc}", record_index=lineno
                ) from exc
            if last_ts is not None and sample.ts_ms <= last_ts:
                raise CorruptSessionError(
                    f"samples out of order at line {lineno + 1}: "
                    f"ts {sample.ts_ms} follows {last_ts}",
                    record_index=lineno,
                )
            samples.append(sample)
            last_ts = sample.ts_ms
    return samples


def _validate_epochs(session: MeterSession) -> None:
    n = len(session.samples)
    epochs = session.epochs
    if n == 0:
        if epochs:
            raise CorruptSessionError("manifest lists epochs but there are no samples")
        return
    if not epochs or epochs[0] != 0:
        raise CorruptSessionError("epoch list must start at sample index 0")
    if epochs != sorted(set(epochs)):
        raise CorruptSessionError("epoch indices must be strictly increasing")
    if epochs[-1] >= n:
        raise CorruptSessionError(f"epoch index {epochs[-1]} out of range (n={n})")
    boundary = set(epochs)
    for i in range(1, n):
        decreased = session.samples[i].wh_total < session.samples[i - 1].wh_total
        if decreased and i not in boundary:
            raise CorruptSessionError(
                f"counter decreases at sample {i} without a recorded epoch boundary",
                record_index=i,
            )


def save_session(session: MeterSession, directory: str | Path) -> None:
    """Write a session to a directory; save then load is lossless."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / SAMPLES_FILE).open("w") as fh:
        for sample in session.samples:
            fh.write(json.dumps(sample.to_dict()) + "\n")
    with (directory / MARKERS_FILE).open("w") as fh:
        for marker in session.markers:
            fh.write(json.dumps(marker.to_dict()) + "\n")
    manifest = {
        "session_id": session.session_id,
        "clock_offset": session.clock_offset.to_dict() if session.clock_offset else None,
        "baseline": session.baseline.to_dict() if session.baseline else None,
        "annotations": session.annotations,
        "epochs": session.epochs,
    }
    (directory / MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
