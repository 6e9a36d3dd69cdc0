"""Report assembly and deterministic rendering.

A report bundles whatever stages ran (session summary, analysis, carbon
results, extrapolated estimate) together with the 19-question
documentation checklist and provenance metadata. Rendering is a pure
function of the bundle: identical bundles produce byte-identical
markdown, JSON, and CSV. The generation timestamp, if any, comes from
the bundle metadata, never the wall clock, and every input file is
listed with its digest so each number in the report traces back to an
artifact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .units import format_kwh, format_mass_g

CHECKLIST_SIZE = 19
CHECKLIST_STATUSES = ("answered", "unanswered", "not-applicable")
REPORT_FORMATS = ("md", "json", "csv")


@dataclass(frozen=True)
class ChecklistItem:
    """One documentation question, optionally answered."""

    index: int
    question: str
    answer: str | None = None
    status: str = "unanswered"
    justification: str | None = None

    def __post_init__(self):
        if self.status not in CHECKLIST_STATUSES:
            raise ValidationError(f"bad checklist status {self.status!r}")
        if self.status == "answered" and not self.answer:
            raise ValidationError(f"item {self.index}: answered without an answer")
        if self.status == "not-applicable" and not self.justification:
            raise ValidationError(
                f"item {self.index}: not-applicable requires a justification"
            )

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "question": self.question,
            "answer": self.answer,
            "status": self.status,
            "justification": self.justification,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChecklistItem":
        return cls(
            index=int(data["index"]),
            question=str(data["question"]),
            answer=data.get("answer"),
            status=str(data.get("status", "unanswered")),
            justification=data.get("justification"),
        )


def load_checklist_questions() -> list[dict]:
    """The bundled, versioned checklist questions (index, question)."""
    text = resources.files("wattline").joinpath("reference/checklist_v1.json").read_text()
    return json.loads(text)["items"]


def validate_checklist(items: list[ChecklistItem]) -> None:
    indices = [item.index for item in items]
    if sorted(indices) != list(range(1, CHECKLIST_SIZE + 1)):
        raise ValidationError(
            f"checklist must contain exactly items 1..{CHECKLIST_SIZE}, got {sorted(indices)}"
        )


def build_checklist(
    annotations: dict | None = None,
    analysis: dict | None = None,
    carbon_block: dict | None = None,
    estimate: dict | None = None,
) -> list[ChecklistItem]:
    """All 19 items, auto-answered where the gathered data suffices.

    Data never invents answers: items the artifacts cannot speak to come
    back unanswered for the author to fill in.
    """
    annotations = annotations or {}
    answers: dict[int, str] = {}

    environment = annotations.get("environment")
    location = annotations.get("location") or annotations.get("region")
    if environment or location:
        parts = [str(p) for p in (environment, location) if p]
        answers[1] = "; ".join(parts)
    hardware = annotations.get("hardware")
    if hardware:
        answers[3] = str(hardware)
    energy_mix = annotations.get("energy_mix")
    if energy_mix:
        answers[4] = str(energy_mix)

    if analysis:
        durations = [p["duration_s"] for p in analysis.get("phases", [])]
        if durations:
            detail = ", ".join(
                f"{p['label']}: {p['duration_s']:g} s" for p in analysis["phases"]
            )
            answers[9] = f"measured phases total {sum(durations):g} s ({detail})"
        total = analysis.get("run", {}).get("total_kwh")
        if total is not None:
            answers[11] = format_kwh(total)
        interval = analysis.get("interval_ms")
        if interval is not None and analysis.get("phases"):
            labels = ", ".join(sorted({p["label"] for p in analysis["phases"]}))
            answers[15] = (
                f"per-phase measurement at {interval:g} ms sampling; phases: {labels}"
            )

    mass_g = None
    factor_text = ""
    if carbon_block and carbon_block.get("mass_g") is not None:
        mass_g = carbon_block["mass_g"]
        factor_text = (
            f" at {carbon_block.get('gco2e_per_kwh')} gCO2e/kWh"
            f" ({carbon_block.get('region')}/{carbon_block.get('year')})"
        )
    elif estimate and estimate.get("per_paper_g") is not None:
        mass_g = estimate["per_paper_g"]
        factor_text = " (extrapolated, see assumptions ledger)"
    if mass_g is not None:
        answers[12] = format_mass_g(mass_g) + factor_text

    if answers.get(11) is None and carbon_block and carbon_block.get("energy_kwh") is not None:
        answers[11] = format_kwh(carbon_block["energy_kwh"])

    offset = (carbon_block or {}).get("offset")
    if offset:
        text = (
            f"planned offset: {offset['trees']} trees at "
            f"{offset['tree_kg_per_year']:g} kg/yr, full offset in "
            f"{offset['months']:.2f} months"
        )
        if offset.get("note"):
            text += f" ({offset['note']})"
        answers[14] = text

    items = []
    for entry in load_checklist_questions():
        index = entry["index"]
        answer = answers.get(index)
        items.append(
            ChecklistItem(
                index=index,
                question=entry["question"],
                answer=answer,
                status="answered" if answer else "unanswered",
            )
        )
    validate_checklist(items)
    return items


@dataclass
class ReportBundle:
    """Everything a report renders, plus provenance metadata."""

    checklist: list[ChecklistItem]
    session_summary: dict | None = None
    analysis: dict | None = None
    carbon: dict | None = None
    estimate: dict | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "session_summary": self.session_summary,
            "analysis": self.analysis,
            "carbon": self.carbon,
            "estimate": self.estimate,
            "checklist": [item.to_dict() for item in self.checklist],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReportBundle":
        return cls(
            checklist=[ChecklistItem.from_dict(i) for i in data.get("checklist", [])],
            session_summary=data.get("session_summary"),
            analysis=data.get("analysis"),
            carbon=data.get("carbon"),
            estimate=data.get("estimate"),
            metadata=dict(data.get("metadata", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "ReportBundle":
        return cls.from_dict(json.loads(text))


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def render(bundle: ReportBundle, fmt: str) -> bytes:
    """Render a bundle; identical bundles yield identical bytes."""
    validate_checklist(bundle.checklist)
    if fmt == "json":
        return (json.dumps(bundle.to_dict(), indent=2, sort_keys=True) + "\n").encode()
    if fmt == "md":
        return _render_md(bundle).encode()
    if fmt == "csv":
        return _render_csv(bundle).encode()
    raise ValidationError(f"unknown report format {fmt!r}; choose from {REPORT_FORMATS}")


def _render_md(bundle: ReportBundle) -> str:
    lines: list[str] = ["# Energy and carbon report", ""]

    meta = bundle.metadata
    lines.append("## Provenance")
    lines.append("")
    if meta.get("tool_version"):
        lines.append(f"- tool version: {meta['tool_version']}")
    if meta.get("generated_at"):
        lines.append(f"- generated at: {meta['generated_at']}")
    for name, digest in sorted((meta.get("inputs") or {}).items()):
        lines.append(f"- input `{name}`: sha256 {digest}")
    lines.append("")

    if bundle.session_summary:
        s = bundle.session_summary
        lines.append("## Session")
        lines.append("")
        lines.append(f"- session id: {s.get('session_id')}")
        if s.get("n_samples") is not None:
            lines.append(f"- samples: {s['n_samples']}")
        if s.get("baseline_w") is not None:
            lines.append(f"- idle baseline: {s['baseline_w']:g} W")
        if s.get("offset_ms") is not None:
            lines.append(f"- clock offset (device minus host): {s['offset_ms']:g} ms")
        for key, value in sorted((s.get("annotations") or {}).items()):
            lines.append(f"- {key}: {value}")
        lines.append("")

    if bundle.analysis:
        a = bundle.analysis
        lines.append("## Measured phase energy")
        lines.append("")
        lines.append("| phase | duration | gross | net of idle |")
        lines.append("|---|---|---|---|")
        for p in a.get("phases", []):
            net = format_kwh(p["net_kwh"]) if p.get("net_kwh") is not None else "n/a"
            lines.append(
                f"| {p['label']} | {p['duration_s']:g} s | "
                f"{format_kwh(p['gross_kwh'])} | {net} |"
            )
        lines.append("")
        run = a.get("run")
        if run:
            lines.append(
                f"Run total over {', '.join(run['labels'])}: "
                f"**{format_kwh(run['total_kwh'])}** (gross, whole machine)."
            )
            lines.append("")
        for label, spread in sorted((a.get("repetition") or {}).items()):
            lines.append(
                f"- repetition spread for {label}: "
                f"{spread['mean_abs_rel_deviation'] * 100:.2f}% over {spread['n_runs']} runs"
            )
        flagged = [d for d in a.get("diagnostics", []) if d.get("flagged")]
        for d in flagged:
            lines.append(
                f"- warning: counter and trapezoid integration disagree by "
                f"{d['rel_diff'] * 100:.1f}% for phase {d['label']}"
            )
        if a.get("repetition") or flagged:
            lines.append("")

    if bundle.carbon:
        c = bundle.carbon
        lines.append("## Carbon accounting")
        lines.append("")
        if c.get("energy_kwh") is not None:
            lines.append(f"- energy: {format_kwh(c['energy_kwh'])}")
        if c.get("mass_g") is not None:
            lines.append(
                f"- emissions: {format_mass_g(c['mass_g'])} at "
                f"{c.get('gco2e_per_kwh')} gCO2e/kWh "
                f"({c.get('region')}/{c.get('year')})"
            )
        eq = c.get("equivalents")
        if eq:
            lines.append(
                f"- equivalents: {eq['flights']:.1f} one-passenger NYC->Melbourne "
                f"flights, or {eq['tree_years']:,.0f} tree-years of sequestration"
            )
        whatif = c.get("whatif")
        if whatif:
            lines.append("- regional what-if:")
            for region, grams in sorted(whatif["masses_g"].items()):
                lines.append(f"    - {region}: {format_mass_g(grams)}")
            lines.append(
                f"    - max/min factor spread: {whatif['ratio']:.2f}x"
            )
        offset = c.get("offset")
        if offset:
            lines.append(
                f"- offset plan: {offset['trees']} trees at "
                f"{offset['tree_kg_per_year']:g} kg/yr reach full offset in "
                f"{offset['months']:.2f} months"
            )
        lifecycle = c.get("lifecycle")
        if lifecycle:
            lines.append(
                f"- lifecycle context: factor sits within {', '.join(lifecycle['bracketing']) or 'no technology range'}; "
                f"dirtiest-to-cleanest median spread "
                f"{lifecycle['dirtiest_to_cleanest']:.1f}x"
            )
        for note in c.get("notes") or []:
            lines.append(f"- note: {note}")
        lines.append("")

    if bundle.estimate:
        e = bundle.estimate
        lines.append("## Extrapolated footprint")
        lines.append("")
        lines.append(
            "These figures are model-based extrapolations from the assumptions"
            " below, not measurements."
        )
        lines.append("")
        lines.append(f"- one pipeline execution: {format_kwh(e['pipeline_kwh'])}")
        lines.append(f"- full paper (with overhead): {format_kwh(e['paper_kwh'])}")
        lines.append(f"- per paper: {format_mass_g(e['per_paper_g'])}")
        lines.append(f"- event total: {format_mass_g(e['event_g'])}")
        lines.append("")
        lines.append("Assumptions ledger:")
        lines.append("")
        lines.append("| assumption | value | source |")
        lines.append("|---|---|---|")
        for a in e.get("assumptions", []):
            lines.append(f"| {a['name']} | {a['value']} | {a['source']} |")
        lines.append("")
        for note in e.get("notes") or []:
            lines.append(f"- note: {note}")
        if e.get("notes"):
            lines.append("")

    lines.append("## Documentation checklist")
    lines.append("")
    for item in bundle.checklist:
        if item.status == "answered":
            lines.append(f"{item.index}. {item.question} **{item.answer}**")
        elif item.status == "not-applicable":
            lines.append(
                f"{item.index}. {item.question} _not applicable: {item.justification}_"
            )
        else:
            lines.append(f"{item.index}. {item.question} _unanswered_")
    lines.append("")

    lines.append("## Suggested disclosure text")
    lines.append("")
    lines.append(_disclosure_paragraph(bundle))
    lines.append("")
    return "\n".join(lines)


def _disclosure_paragraph(bundle: ReportBundle) -> str:
    """Prose template weaving the answered items, for direct reuse."""
    answered = {i.index: i.answer for i in bundle.checklist if i.status == "answered"}
    sentences = []
    if 1 in answered:
        sentences.append(f"Experiments ran on {answered[1]}.")
    if 3 in answered:
        sentences.append(f"The hardware used was {answered[3]}.")
    if 11 in answered:
        sentences.append(f"Total measured energy consumption was {answered[11]}.")
    if 12 in answered:
        sentences.append(f"The resulting carbon footprint is {answered[12]}.")
    if 14 in answered:
        sentences.append(f"Offsetting: {answered[14]}.")
    if not sentences:
        sentences.append(
            "Fill in the unanswered checklist items above and weave them "
            "into the text of the publication rather than reproducing the "
            "checklist verbatim."
        )
    return " ".join(sentences)


def _render_csv(bundle: ReportBundle) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["section", "name", "value", "unit"])

    if bundle.analysis:
        for p in bundle.analysis.get("phases", []):
            writer.writerow(["phase", p["label"], repr(p["gross_kwh"]), "kWh"])
            writer.writerow([
                "phase_duration", p["label"], repr(p["duration_s"]), "s"
            ])
            if p.get("net_kwh") is not None:
                writer.writerow(["phase_net", p["label"], repr(p["net_kwh"]), "kWh"])
        run = bundle.analysis.get("run")
        if run:
            writer.writerow(["run", "total", repr(run["total_kwh"]), "kWh"])
    if bundle.carbon:
        c = bundle.carbon
        if c.get("energy_kwh") is not None:
            writer.writerow(["carbon", "energy", repr(c["energy_kwh"]), "kWh"])
        if c.get("mass_g") is not None:
            writer.writerow(["carbon", "mass", repr(c["mass_g"]), "gCO2e"])
        for region, grams in sorted((c.get("whatif") or {}).get("masses_g", {}).items()):
            writer.writerow(["whatif", region, repr(grams), "gCO2e"])
    if bundle.estimate:
        e = bundle.estimate
        writer.writerow(["estimate", "pipeline", repr(e["pipeline_kwh"]), "kWh"])
        writer.writerow(["estimate", "paper", repr(e["paper_kwh"]), "kWh"])
        writer.writerow(["estimate", "per_paper", repr(e["per_paper_g"]), "gCO2e"])
        writer.writerow(["estimate", "event", repr(e["event_g"]), "gCO2e"])
    for item in bundle.checklist:
        writer.writerow(
            ["checklist", str(item.index), item.answer or item.status, ""]
        )
    return buffer.getvalue()
