"""Human-readable rendering of energies, masses, and ratios.

Values are kept at full precision internally; rounding happens only
here. Masses pick a unit by magnitude (g below 1 kg, kg below 10 t,
tonnes above) so per-phase, per-project, and event-scale figures all
read naturally.
"""

from __future__ import annotations

KG_THRESHOLD_G = 1e3
TONNE_THRESHOLD_G = 1e7  # 10 t; below this kg keeps headline figures readable
GRAMS_PER_TONNE = 1e6


def _format_value(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return f"{int(value):,}"
    if value >= 1000:
        return f"{value:,.0f}"
    if value >= 100:
        return f"{value:.1f}"
    if value >= 10:
        return f"{value:.2f}"
    return f"{value:.3g}"


def format_mass_g(grams: float) -> str:
    """Adaptive gCO2e / kgCO2e / tCO2e rendering."""
    if grams < KG_THRESHOLD_G:
        return f"{_format_value(grams)} gCO2e"
    if grams < TONNE_THRESHOLD_G:
        return f"{_format_value(grams / 1000.0)} kgCO2e"
    return f"{_format_value(grams / GRAMS_PER_TONNE)} tCO2e"


def format_kwh(kwh: float) -> str:
    return f"{_format_value(kwh)} kWh"


def format_ratio(ratio: float) -> str:
    """Ratios render as a rounded multiplier, e.g. 41.59 -> '≈ 42×'."""
    return f"≈ {round(ratio):,}×"
