"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class WattlineError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(WattlineError):
    """Input violates a documented precondition or type invariant."""


class TransportError(WattlineError):
    """Plug unreachable or HTTP-level failure. Retryable."""


class ProtocolError(WattlineError):
    """Plug reachable but the payload does not match the status schema."""


class OrderingError(ValidationError):
    """Sample timestamps not strictly increasing."""


class PairingError(ValidationError):
    """Phase markers cannot be paired into begin/end intervals."""


class CorruptSessionError(WattlineError):
    """Persisted session violates an invariant on load."""

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


class InsufficientDataError(WattlineError):
    """Not enough samples to perform the requested computation."""


class OutOfRangeError(WattlineError):
    """Query time outside the measured range plus tolerance."""


class UnmeasurablePhaseError(WattlineError):
    """Phase spans data the counter record cannot account for."""


class DegenerateFitError(WattlineError):
    """Regression input has no spread along the independent axis."""


class UndefinedSpreadError(WattlineError):
    """Relative spread undefined because the mean is zero."""


class DataLookupError(WattlineError):
    """A named record is absent from the data consulted."""


class PhaseLookupError(DataLookupError):
    """No phase with the requested label in the session."""


class MissingFactorError(DataLookupError):
    """No emission factor on file for the requested (region, year)."""

    def __init__(self, region: str, year: int, available: list[tuple[str, int]]):
        self.region = region
        self.year = year
        self.available = available
        rows = ", ".join(f"{r}/{y}" for r, y in available) or "none"
        super().__init__(
            f"no emission factor for region={region!r} year={year}; available: {rows}"
        )
