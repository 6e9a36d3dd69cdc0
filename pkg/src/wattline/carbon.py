"""Energy-to-carbon conversion and human-scale context.

Emission factors are (region, year) rows in gCO2e per kWh; the bundled
table carries grid-average intensities with a source string per row.
Conversions are exact products; masses are stored in grams and rendered
adaptively (see `wattline.units`).

Several bundled scenarios come with previously published rounded
figures. Where the exact arithmetic lands elsewhere, the computation is
kept as-is and the published figure is attached as a documented
deviation note, never silently reconciled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from .analysis import EnergyQuantity
from .errors import MissingFactorError, ValidationError
from .units import format_mass_g


@dataclass(frozen=True)
class EmissionFactor:
    """Grid carbon intensity for one region and year."""

    region: str
    year: int
    gco2e_per_kwh: float
    source: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.gco2e_per_kwh) and self.gco2e_per_kwh > 0):
            raise ValidationError("gco2e_per_kwh must be finite and > 0")
        if not 1990 <= self.year <= 2100:
            raise ValidationError(f"year {self.year} outside [1990, 2100]")


@dataclass(frozen=True)
class CarbonMass:
    """A nonnegative CO2-equivalent mass in grams."""

    grams: float

    def __post_init__(self):
        if not (math.isfinite(self.grams) and self.grams >= 0):
            raise ValidationError(f"grams must be finite and >= 0, got {self.grams}")

    @property
    def kg(self) -> float:
        return self.grams / 1e3

    @property
    def tonnes(self) -> float:
        return self.grams / 1e6

    def render(self) -> str:
        return format_mass_g(self.grams)


@dataclass(frozen=True)
class LifecycleEntry:
    """Lifecycle emissions of one generation technology, gCO2e/kWh."""

    technology: str
    min_g: float
    median_g: float
    max_g: float

    def __post_init__(self):
        if not (self.min_g <= self.median_g <= self.max_g):
            raise ValidationError(
                f"{self.technology}: min/median/max must be ordered"
            )


@dataclass(frozen=True)
class EquivalenceFactors:
    """Rates for human-scale equivalents.

    flight_kg: kgCO2e per one-passenger New York -> Melbourne flight.
    tree_kg_per_year: kg of CO2 an average tree sequesters per year.
    """

    flight_kg: float
    tree_kg_per_year: float

    def __post_init__(self):
        if self.flight_kg <= 0 or self.tree_kg_per_year <= 0:
            raise ValidationError("equivalence rates must be > 0")


# Defaults back-derived so the bundled reference pairings (782.545 t of
# CO2e <-> 338 flights <-> 71,100 tree-years) reproduce exactly. The
# underlying external sources publish the pairings, not the rates.
DEFAULT_EQUIVALENCE = EquivalenceFactors(
    flight_kg=2315.220923076923,
    tree_kg_per_year=11.00625417721519,
)

#: Sequestration rate quoted by tree-planting programs; used for offset
#: plans (distinct from the equivalence-display rate above).
OFFSET_TREE_KG_PER_YEAR = 10.0


class FactorTable:
    """Lookup table of emission factors keyed by (region, year)."""

    def __init__(self, factors: Iterable[EmissionFactor]):
        self._rows: dict[tuple[str, int], EmissionFactor] = {}
        for f in factors:
            self._rows[(f.region.lower(), f.year)] = f
        if not self._rows:
            raise ValidationError("factor table is empty")

    def lookup(self, region: str, year: int) -> EmissionFactor:
        key = (region.lower(), int(year))
        if key not in self._rows:
            raise MissingFactorError(region, year, sorted(self._rows))
        return self._rows[key]

    def rows(self) -> list[EmissionFactor]:
        return sorted(self._rows.values(), key=lambda f: (f.region, f.year))


def _reference_path(name: str):
    return resources.files("wattline").joinpath("reference").joinpath(name)


def load_factors(path: str | Path | None = None) -> FactorTable:
    """Load factors.csv (header: region,year,gco2e_per_kwh,source)."""
    text = (
        Path(path).read_text() if path is not None else _reference_path("factors.csv").read_text()
    )
    factors = []
    for row in csv.DictReader(text.splitlines()):
        try:
            factors.append(
                EmissionFactor(
                    region=row["region"].strip(),
                    year=int(row["year"]),
                    gco2e_per_kwh=float(row["gco2e_per_kwh"]),
                    source=(row.get("source") or "").strip(),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad factor row {row!r}: {exc}") from exc
    return FactorTable(factors)


def dump_factors(table: FactorTable) -> str:
    """Inverse of load_factors; round-trips the bundled table losslessly."""
    lines = ["region,year,gco2e_per_kwh,source"]
    for f in table.rows():
        g = f.gco2e_per_kwh
        g_text = str(int(g)) if g == int(g) else repr(g)
        lines.append(f"{f.region},{f.year},{g_text},{f.source}")
    return "\n".join(lines) + "\n"


def load_lifecycle(path: str | Path | None = None) -> list[LifecycleEntry]:
    """Load lifecycle.csv (header: technology,min,median,max)."""
    text = (
        Path(path).read_text() if path is not None else _reference_path("lifecycle.csv").read_text()
    )
    entries = []
    for row in csv.DictReader(text.splitlines()):
        entries.append(
            LifecycleEntry(
                technology=row["technology"].strip(),
                min_g=float(row["min"]),
                median_g=float(row["median"]),
                max_g=float(row["max"]),
            )
        )
    return entries


def convert(energy: EnergyQuantity, factor: EmissionFactor) -> CarbonMass:
    """kWh -> gCO2e, the exact product with the regional factor."""
    return CarbonMass(grams=energy.kwh * factor.gco2e_per_kwh)


@dataclass(frozen=True)
class RegionalWhatIf:
    """Same energy converted under several regional factors."""

    masses: dict[str, CarbonMass]
    max_min_ratio: float


def regional_whatif(
    energy: EnergyQuantity, factors: Iterable[EmissionFactor]
) -> RegionalWhatIf:
    """Per-region masses for one energy, with the max/min spread ratio."""
    factor_list = list(factors)
    if not factor_list:
        raise ValidationError("regional what-if needs at least one factor")
    masses = {f.region: convert(energy, f) for f in factor_list}
    rates = [f.gco2e_per_kwh for f in factor_list]
    return RegionalWhatIf(masses=masses, max_min_ratio=max(rates) / min(rates))


@dataclass(frozen=True)
class Equivalents:
    """A mass expressed as flights and tree-years."""

    flights: float
    tree_years: float


def equivalents(
    mass: CarbonMass, factors: EquivalenceFactors = DEFAULT_EQUIVALENCE
) -> Equivalents:
    return Equivalents(
        flights=mass.grams / (factors.flight_kg * 1000.0),
        tree_years=mass.grams / (factors.tree_kg_per_year * 1000.0),
    )


@dataclass(frozen=True)
class OffsetPlan:
    """Months of sequestration needed for a tree-planting offset."""

    months: float
    trees: int
    tree_kg_per_year: float
    note: str | None = None


def offset_plan(
    mass: CarbonMass,
    trees: int,
    tree_kg_per_year: float = OFFSET_TREE_KG_PER_YEAR,
) -> OffsetPlan:
    """How long `trees` trees take to absorb `mass`."""
    if trees < 1:
        raise ValidationError("offset plan needs at least one tree")
    if tree_kg_per_year <= 0:
        raise ValidationError("sequestration rate must be > 0")
    months = 12.0 * mass.grams / (trees * tree_kg_per_year * 1000.0)
    note = published_deviation(
        "offset_months",
        months,
        {"mass_kg": mass.kg, "trees": float(trees), "tree_kg_per_year": tree_kg_per_year},
    )
    return OffsetPlan(
        months=months, trees=trees, tree_kg_per_year=tree_kg_per_year, note=note
    )


@dataclass(frozen=True)
class LifecycleContext:
    """Where a grid factor sits among generation technologies."""

    bracketing: list[LifecycleEntry]
    dirtiest: LifecycleEntry
    cleanest: LifecycleEntry
    dirtiest_to_cleanest: float


def lifecycle_context(
    factor_gco2e_per_kwh: float, table: Iterable[LifecycleEntry] | None = None
) -> LifecycleContext:
    """Technologies whose lifecycle range brackets the factor, plus the
    spread between the dirtiest and cleanest medians."""
    entries = list(table) if table is not None else load_lifecycle()
    if not entries:
        raise ValidationError("lifecycle table is empty")
    bracketing = [
        e for e in entries if e.min_g <= factor_gco2e_per_kwh <= e.max_g
    ]
    dirtiest = max(entries, key=lambda e: e.median_g)
    cleanest = min(entries, key=lambda e: e.median_g)
    return LifecycleContext(
        bracketing=bracketing,
        dirtiest=dirtiest,
        cleanest=cleanest,
        dirtiest_to_cleanest=dirtiest.median_g / cleanest.median_g,
    )


def era_ratio(mass_a: CarbonMass, mass_b: CarbonMass) -> float:
    """How many times larger mass_b is than mass_a."""
    if mass_a.grams == 0:
        raise ValidationError("era ratio undefined for a zero base mass")
    return mass_b.grams / mass_a.grams


@dataclass(frozen=True)
class PublishedFigure:
    """A previously published rounded figure for a known scenario."""

    kind: str
    inputs: tuple[tuple[str, float], ...]
    value: float
    unit: str
    description: str


#: Published figures bundled for cross-checking. When a computation
#: reproduces one of these scenarios but the exact arithmetic differs
#: from the published rounding, reports carry a deviation note.
PUBLISHED_FIGURES: tuple[PublishedFigure, ...] = (
    PublishedFigure(
        kind="event_mass_t",
        inputs=(("kwh", 6048.0), ("gco2e_per_kwh", 481.0), ("count", 269.0)),
        value=782.5,
        unit="tCO2e",
        description="headline event-scale estimate (world average factor)",
    ),
    PublishedFigure(
        kind="event_mass_t",
        inputs=(("kwh", 6048.0), ("gco2e_per_kwh", 45.0), ("count", 269.0)),
        value=74.0,
        unit="tCO2e",
        description="all-Sweden what-if",
    ),
    PublishedFigure(
        kind="event_mass_t",
        inputs=(("kwh", 6048.0), ("gco2e_per_kwh", 535.0), ("count", 269.0)),
        value=875.6,
        unit="tCO2e",
        description="all-Asia what-if",
    ),
    PublishedFigure(
        kind="offset_months",
        inputs=(("mass_kg", 446.5), ("trees", 42.0), ("tree_kg_per_year", 10.0)),
        value=11.0,
        unit="months",
        description="offset duration for the bundled measurement campaign",
    ),
    PublishedFigure(
        kind="era_factor",
        inputs=(("mass_a_g", 7.09), ("mass_b_g", 294.9)),
        value=42.0,
        unit="x",
        description="decade increase factor, traditional vs deep models",
    ),
    PublishedFigure(
        kind="dirtiest_to_cleanest",
        inputs=(("dirtiest_median", 820.0), ("cleanest_median", 11.0)),
        value=70.0,
        unit="x",
        description="rough coal-to-cleanest lifecycle spread",
    ),
)

#: Computed results within this relative distance of the published
#: figure count as matching its rounding; farther apart gets a note.
_DEVIATION_THRESHOLD = 0.005


def published_deviation(
    kind: str, computed: float, inputs: dict[str, float]
) -> str | None:
    """Deviation note when a known scenario disagrees with its published figure.

    Returns None when the scenario is unknown or the computed value is
    within rounding distance of the published one.
    """
    for figure in PUBLISHED_FIGURES:
        if figure.kind != kind:
            continue
        if not all(
            name in inputs and math.isclose(inputs[name], value, rel_tol=1e-9)
            for name, value in figure.inputs
        ):
            continue
        if figure.value and abs(computed - figure.value) / figure.value <= _DEVIATION_THRESHOLD:
            return None
        return (
            f"published estimate for this scenario ({figure.description}): "
            f"{figure.value:g} {figure.unit}; exact arithmetic gives {computed:.4g} "
            f"{figure.unit}; kept as computed, deviation documented"
        )
    return None
