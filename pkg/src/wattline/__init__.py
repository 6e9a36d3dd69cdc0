"""Wall-plug energy metering and carbon accounting for computational experiments."""

__version__ = "0.1.0"

from .analysis import (
    EnergyQuantity,
    EnergyStats,
    LinearFit,
    PhaseEnergy,
    RepetitionSpread,
    analyze_session,
    fit_energy_runtime,
    grouped_stats,
    interpolate_counter,
    phase_energy,
    repetition_spread,
    run_energy,
)
from .carbon import (
    CarbonMass,
    EmissionFactor,
    EquivalenceFactors,
    LifecycleEntry,
    convert,
    equivalents,
    era_ratio,
    lifecycle_context,
    load_factors,
    load_lifecycle,
    offset_plan,
    regional_whatif,
)
from .clock import SimulatedClock, SystemClock
from .estimator import (
    FootprintEstimate,
    OverheadFactor,
    PipelineShape,
    event_footprint,
    paper_energy,
    pipeline_energy,
    sensitivity,
)
from .report import ChecklistItem, ReportBundle, build_checklist, render
from .session import (
    BaselineRecord,
    MeterSession,
    Phase,
    PhaseMarker,
    SessionWriter,
    ingest_markers,
    load_session,
    pair_phases,
    save_session,
)
from .simulator import SimulatedPlug, TraceProfile, serve_simulated_plug
from .telemetry import (
    ClockOffset,
    FieldMapping,
    PlugClient,
    PowerSample,
    Sampler,
    estimate_clock_offset,
    poll_status,
    run_sampler,
)
