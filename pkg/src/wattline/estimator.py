"""Extrapolation from one measured run to pipeline, paper, and event scale.

The model is fully multiplicative:

    pipeline = models x datasets x configs x per-run energy
    paper    = pipeline x overhead multiplier
    event    = paper x emission factor x submissions

The overhead multiplier folds in prototyping, debugging, failed runs and
re-runs; the bundled default of 40 is a practitioner-interview median,
with reported answers spanning 5 to 300, which is exactly why
`sensitivity` exists. Every number that enters the chain is recorded in
an assumptions ledger so extrapolations are never mistaken for
measurements.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .analysis import EnergyQuantity
from .carbon import CarbonMass, EmissionFactor, convert, published_deviation
from .errors import ValidationError

#: Interview-median multiplier from one clean pipeline execution to a
#: whole paper's worth of energy (prototyping, debugging, re-runs).
DEFAULT_OVERHEAD = 40.0

#: Reported range of the same interviews, bundled for sensitivity scans.
OVERHEAD_RANGE = (5.0, 300.0)


@dataclass(frozen=True)
class PipelineShape:
    """Size of one experimental pipeline plus the measured per-run energy."""

    n_models: int
    n_datasets: int
    n_configs: int
    per_run: EnergyQuantity
    per_run_source: str = "user-supplied per-run energy"

    def __post_init__(self):
        for name in ("n_models", "n_datasets", "n_configs"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class OverheadFactor:
    """Multiplier from one clean pipeline run to a whole paper."""

    multiplier: float
    source: str = "interview median (bundled default)"

    def __post_init__(self):
        if not (math.isfinite(self.multiplier) and self.multiplier >= 1):
            raise ValidationError("overhead multiplier must be >= 1")


@dataclass(frozen=True)
class Assumption:
    name: str
    value: float | int | str
    source: str

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "source": self.source}


@dataclass(frozen=True)
class FootprintEstimate:
    """Result of the full extrapolation chain, with its assumptions."""

    pipeline: EnergyQuantity
    paper: EnergyQuantity
    per_paper_mass: CarbonMass
    event_mass: CarbonMass
    assumptions: tuple[Assumption, ...]
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "pipeline_kwh": self.pipeline.kwh,
            "paper_kwh": self.paper.kwh,
            "per_paper_g": self.per_paper_mass.grams,
            "event_g": self.event_mass.grams,
            "assumptions": [a.to_dict() for a in self.assumptions],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "FootprintEstimate":
        return cls(
            pipeline=EnergyQuantity(float(data["pipeline_kwh"])),
            paper=EnergyQuantity(float(data["paper_kwh"])),
            per_paper_mass=CarbonMass(float(data["per_paper_g"])),
            event_mass=CarbonMass(float(data["event_g"])),
            assumptions=tuple(
                Assumption(a["name"], a["value"], a["source"])
                for a in data.get("assumptions", [])
            ),
            notes=tuple(data.get("notes", [])),
        )

    @classmethod
    def from_json(cls, text: str) -> "FootprintEstimate":
        return cls.from_dict(json.loads(text))


def pipeline_energy(shape: PipelineShape) -> EnergyQuantity:
    """Energy of one clean pipeline execution."""
    return EnergyQuantity(
        kwh=shape.n_models * shape.n_datasets * shape.n_configs * shape.per_run.kwh
    )


def paper_energy(pipeline: EnergyQuantity, overhead: OverheadFactor) -> EnergyQuantity:
    """Whole-paper energy: one pipeline run times the overhead multiplier."""
    return EnergyQuantity(kwh=pipeline.kwh * overhead.multiplier)


def event_footprint(
    shape: PipelineShape,
    overhead: OverheadFactor,
    factor: EmissionFactor,
    submissions: int,
) -> FootprintEstimate:
    """Full chain: pipeline -> paper -> per-paper mass -> event mass."""
    if submissions < 1:
        raise ValidationError("submissions must be >= 1")
    pipeline = pipeline_energy(shape)
    paper = paper_energy(pipeline, overhead)
    per_paper = convert(paper, factor)
    event = CarbonMass(grams=per_paper.grams * submissions)

    assumptions = (
        Assumption("n_models", shape.n_models, "pipeline shape"),
        Assumption("n_datasets", shape.n_datasets, "pipeline shape"),
        Assumption("n_configs", shape.n_configs, "pipeline shape"),
        Assumption("per_run_kwh", shape.per_run.kwh, shape.per_run_source),
        Assumption("overhead_multiplier", overhead.multiplier, overhead.source),
        Assumption(
            "gco2e_per_kwh",
            factor.gco2e_per_kwh,
            factor.source or f"emission factor {factor.region}/{factor.year}",
        ),
        Assumption("submissions", submissions, "event submission count"),
    )
    notes = []
    deviation = published_deviation(
        "event_mass_t",
        event.tonnes,
        {
            "kwh": paper.kwh,
            "gco2e_per_kwh": factor.gco2e_per_kwh,
            "count": float(submissions),
        },
    )
    if deviation:
        notes.append(deviation)
    return FootprintEstimate(
        pipeline=pipeline,
        paper=paper,
        per_paper_mass=per_paper,
        event_mass=event,
        assumptions=assumptions,
        notes=tuple(notes),
    )


def sensitivity(
    shape: PipelineShape,
    overheads: list[float],
    factors: list[EmissionFactor],
    submissions: int,
) -> list[FootprintEstimate]:
    """Cartesian scan over overhead and factor assumptions.

    Rows come back sorted by event mass so the spread reads directly.
    """
    if not overheads or not factors:
        raise ValidationError("sensitivity needs non-empty overhead and factor sets")
    rows = [
        event_footprint(shape, OverheadFactor(multiplier=ov, source="sensitivity scan"), f, submissions)
        for ov in overheads
        for f in factors
    ]
    rows.sort(key=lambda e: e.event_mass.grams)
    return rows
