"""The three-step audit protocol: parameter selection, procedure execution,
verdict. Selected requirements are bound to parameterized procedures and the
outcomes assembled into a reproducible audit report.

Executable procedures exist for requirements 7 (worst-case performance under
rain or PGD), 30 (dataset independence) and 33 (explanation center-focus).
Other catalogue entries are reported as not executable rather than rejected.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from . import __version__
from .attacks import PgdParams, robust_accuracy
from .catalogue import (
    AsilLevel,
    RecommendationGrade,
    load_catalogue,
    select_requirements,
)
from .dataset import (
    DEFAULT_PHASH_HAMMING_MAX,
    DEFAULT_TV_MAX,
    DatasetSplit,
    EvidenceError,
    independence_check,
    load_image_folder,
    split_dataset,
)
from .explain import CenterCheckParams, default_layer, explanation_audit
from .model import (
    CapabilityError,
    ClassifierAdapter,
    ContractError,
    SmallCnnAdapter,
    checkpoint_digest,
    evaluate_accuracy,
)
from .perturb import RainParams, rain_transform

logger = logging.getLogger(__name__)

EXECUTABLE_REQUIREMENTS = (7, 30, 33)
DEFAULT_ACCURACY_THRESHOLD = 0.90


class ConfigError(Exception):
    """Raised for invalid audit configurations, before any procedure runs."""


class Outcome(Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_EXECUTABLE = "not_executable"
    ERROR = "error"


@dataclass(frozen=True)
class AuditParameters:
    requirement_id: int
    specification: str
    parameter_values: dict = field(default_factory=dict)
    rationale: str = ""

    def __post_init__(self):
        if not self.rationale.strip():
            raise ConfigError(
                f"requirement {self.requirement_id} ({self.specification}): "
                "a rationale for the chosen parameters is mandatory"
            )


@dataclass(frozen=True)
class Verdict:
    requirement_id: int
    specification: str
    outcome: Outcome
    measured: dict = field(default_factory=dict)
    evidence: tuple = field(default_factory=tuple)
    procedure_description: str = ""

    def to_dict(self) -> dict:
        return {
            "requirement_id": self.requirement_id,
            "specification": self.specification,
            "outcome": self.outcome.value,
            "measured": self.measured,
            "evidence": list(self.evidence),
            "procedure_description": self.procedure_description,
        }


def default_parameter_table() -> dict:
    """Module defaults embedded in every report, so no value is silent."""
    return {
        "accuracy_threshold": DEFAULT_ACCURACY_THRESHOLD,
        "rain": RainParams().to_dict(),
        "pgd": PgdParams().to_dict(),
        "center_check": CenterCheckParams().to_dict(),
        "independence": {
            "phash_hamming_max": DEFAULT_PHASH_HAMMING_MAX,
            "tv_max": DEFAULT_TV_MAX,
        },
    }


def run_req7_worst_case(
    model: ClassifierAdapter,
    split: DatasetSplit,
    stressor: dict,
    accuracy_threshold: float = DEFAULT_ACCURACY_THRESHOLD,
) -> Verdict:
    """Accuracy under a worst-case stressor; Pass iff strictly above threshold.

    `stressor` holds exactly one of {"rain": RainParams, "pgd": PgdParams}.
    """
    kinds = [k for k in ("rain", "pgd") if k in stressor]
    if len(kinds) != 1:
        raise ConfigError(
            f"stressor must name exactly one of 'rain' or 'pgd', got {sorted(stressor)}"
        )
    kind = kinds[0]
    try:
        clean = evaluate_accuracy(model, split)
        if kind == "rain":
            params: RainParams = stressor["rain"]
            stressed = evaluate_accuracy(model, split, transform=rain_transform(params))
            description = (
                "Evaluate accuracy on held-out samples under a heavy-rain "
                "simulation and compare against the allowed worst-case threshold."
            )
        else:
            params = stressor["pgd"]
            stressed = robust_accuracy(model, split, params)
            description = (
                "Evaluate accuracy on held-out samples under an L-infinity PGD "
                "attack and compare against the allowed worst-case threshold."
            )
    except (CapabilityError, ContractError) as exc:
        return Verdict(
            requirement_id=7,
            specification=kind,
            outcome=Outcome.ERROR,
            evidence=({"type": "capability", "detail": str(exc)},),
            procedure_description="Worst-case performance evaluation aborted.",
        )
    outcome = Outcome.PASS if stressed > accuracy_threshold else Outcome.FAIL
    return Verdict(
        requirement_id=7,
        specification=kind,
        outcome=outcome,
        measured={
            "headline": round(stressed, 6),
            "clean_accuracy": round(clean, 6),
            "stressed_accuracy": round(stressed, 6),
            "accuracy_threshold": accuracy_threshold,
            "samples": len(split),
            "stressor": {kind: params.to_dict()},
        },
        procedure_description=description,
    )


def run_req30_independence(
    train: DatasetSplit,
    val: DatasetSplit,
    test: DatasetSplit,
    phash_hamming_max: int = DEFAULT_PHASH_HAMMING_MAX,
    tv_max: float = DEFAULT_TV_MAX,
) -> Verdict:
    """Dataset independence: Pass iff splits are disjoint and same-distribution."""
    try:
        report = independence_check(
            train, val, test, phash_hamming_max=phash_hamming_max, tv_max=tv_max
        )
    except EvidenceError as exc:
        return Verdict(
            requirement_id=30,
            specification="independence",
            outcome=Outcome.ERROR,
            evidence=({"type": "evidence", "detail": str(exc)},),
            procedure_description="Dataset independence evidence unavailable.",
        )
    fulfilled = report.disjoint and report.same_distribution
    return Verdict(
        requirement_id=30,
        specification="independence",
        outcome=Outcome.PASS if fulfilled else Outcome.FAIL,
        measured={
            "disjoint": report.disjoint,
            "same_distribution": report.same_distribution,
            "max_pairwise_tv_distance": round(report.max_pairwise_tv_distance, 6),
        },
        evidence=(
            {"type": "independence_report", "report": report.to_dict()},
            *report.findings(),
        ),
        procedure_description=(
            "Check pairwise split disjointness (exact, near-duplicate and track "
            "overlap) and class-distribution similarity."
        ),
    )


def run_req33_explainability(
    model: ClassifierAdapter,
    split: DatasetSplit,
    params: CenterCheckParams,
    layer: str | None = None,
) -> Verdict:
    """Explanation plausibility: Grad-CAM center-focus check per class."""
    try:
        result = explanation_audit(model, split, params, layer=layer)
    except (CapabilityError, ContractError, ValueError) as exc:
        return Verdict(
            requirement_id=33,
            specification="center_focus",
            outcome=Outcome.ERROR,
            evidence=({"type": "capability", "detail": str(exc)},),
            procedure_description="Explanation audit aborted.",
        )
    flagged = [r.class_id for r in result.per_class if r.sampled_with_replacement]
    evidence = [{"type": "explanation_table", "table": result.to_dict()}]
    if flagged:
        evidence.append(
            {"type": "sampled_with_replacement", "class_ids": flagged}
        )
    return Verdict(
        requirement_id=33,
        specification="center_focus",
        outcome=Outcome.PASS if result.overall_pass else Outcome.FAIL,
        measured={
            "classes": len(result.per_class),
            "classes_passed": sum(r.passed for r in result.per_class),
            "min_class_pass_rate": (
                round(min(r.pass_rate for r in result.per_class), 6)
                if result.per_class
                else 0.0
            ),
        },
        evidence=tuple(evidence),
        procedure_description=(
            "Grad-CAM saliency for the predicted class on sampled images per "
            "class; a sample passes when enough saliency mass is centered."
        ),
    )


# -- configuration ---------------------------------------------------------


def _parse_requirement_entries(config: dict):
    entries = []
    for raw in config.get("requirements", []):
        if "id" not in raw:
            raise ConfigError("requirement entry without an 'id' field")
        entries.append(
            AuditParameters(
                requirement_id=int(raw["id"]),
                specification=str(raw.get("specification", "")),
                parameter_values=dict(raw.get("parameters", {})),
                rationale=str(raw.get("rationale", "")),
            )
        )
    return entries


def load_audit_config(path) -> dict:
    path = Path(path)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read audit configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("catalogue", "risk_level", "min_grade", "model_checkpoint",
                "dataset_root"):
        if key not in config:
            raise ConfigError(f"audit configuration missing field '{key}'")
    # relative paths resolve against the config file's directory
    for key in ("catalogue", "model_checkpoint", "dataset_root"):
        config[key] = str((path.parent / config[key]).resolve())
    return config


def _build_stressor(spec_name: str, values: dict) -> dict:
    if "rain" in values:
        return {"rain": RainParams.from_dict(values["rain"])}
    if "pgd" in values:
        return {"pgd": PgdParams.from_dict(values["pgd"])}
    # fall back to the specification label with default parameters
    if spec_name == "rain":
        return {"rain": RainParams()}
    if spec_name == "pgd":
        return {"pgd": PgdParams()}
    raise ConfigError(
        f"requirement 7 entry {spec_name!r} names no 'rain' or 'pgd' stressor"
    )


def run_audit(config: dict) -> dict:
    """Execute the configured audit and return the report as a plain dict.

    Selection and validation happen before any procedure runs; afterwards a
    failing or erroring procedure never aborts the remaining ones.
    """
    try:
        risk = AsilLevel(config["risk_level"])
        min_grade = RecommendationGrade(config["min_grade"])
    except ValueError as exc:
        raise ConfigError(f"invalid risk level or grade: {exc}") from exc

    catalogue = load_catalogue(config["catalogue"])
    selected = select_requirements(catalogue, risk, min_grade)
    entries = _parse_requirement_entries(config)
    by_id: dict = {}
    for entry in entries:
        by_id.setdefault(entry.requirement_id, []).append(entry)

    for req in selected:
        if req.id in EXECUTABLE_REQUIREMENTS and req.id not in by_id:
            raise ConfigError(
                f"selected requirement {req.id} is executable but the "
                "configuration provides no parameters/rationale for it"
            )

    model = SmallCnnAdapter.load(config["model_checkpoint"])
    split_cfg = config.get("split", {})
    fractions = tuple(split_cfg.get("fractions", (0.8, 0.1, 0.1)))
    split_seed = int(split_cfg.get("seed", 0))
    resolution = model.input_shape[0]
    try:
        items = load_image_folder(
            config["dataset_root"], model.num_classes, resolution=resolution
        )
        train, val, test = split_dataset(items, fractions, split_seed)
    except Exception as exc:
        raise ConfigError(f"dataset preparation failed: {exc}") from exc

    rows = []
    for req in selected:
        if req.id not in EXECUTABLE_REQUIREMENTS:
            rows.append(
                {
                    "requirement_id": req.id,
                    "specification": "",
                    "parameters": {},
                    "rationale": "",
                    "verdict": Verdict(
                        requirement_id=req.id,
                        specification="",
                        outcome=Outcome.NOT_EXECUTABLE,
                        procedure_description=(
                            "No executable procedure ships for this requirement."
                        ),
                    ).to_dict(),
                }
            )
            continue
        for entry in by_id[req.id]:
            verdict = _dispatch(req.id, entry, model, train, val, test)
            rows.append(
                {
                    "requirement_id": req.id,
                    "specification": verdict.specification,
                    "parameters": entry.parameter_values,
                    "rationale": entry.rationale,
                    "verdict": verdict.to_dict(),
                }
            )

    report = {
        "toolbox_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "catalogue_version": catalogue.version,
        "risk_level": risk.value,
        "min_grade": min_grade.value,
        "selected_requirement_ids": [req.id for req in selected],
        "environment": {
            "model_checkpoint_digest": checkpoint_digest(config["model_checkpoint"]),
            "dataset_digests": {
                s.name.value: s.digest() for s in (train, val, test)
            },
            "split_fractions": list(fractions),
            "split_seed": split_seed,
            "num_classes": model.num_classes,
            "input_shape": list(model.input_shape),
        },
        "defaults": default_parameter_table(),
        "results": rows,
    }
    return report


def _dispatch(req_id, entry, model, train, val, test) -> Verdict:
    values = entry.parameter_values
    try:
        if req_id == 7:
            stressor = _build_stressor(entry.specification, values)
            threshold = float(
                values.get("accuracy_threshold", DEFAULT_ACCURACY_THRESHOLD)
            )
            return run_req7_worst_case(model, test, stressor, threshold)
        if req_id == 30:
            return run_req30_independence(
                train,
                val,
                test,
                phash_hamming_max=int(
                    values.get("phash_hamming_max", DEFAULT_PHASH_HAMMING_MAX)
                ),
                tv_max=float(values.get("tv_max", DEFAULT_TV_MAX)),
            )
        if req_id == 33:
            params = CenterCheckParams.from_dict(
                values.get("center_check", {})
            )
            layer = values.get("layer") or default_layer(model)
            return run_req33_explainability(model, test, params, layer=layer)
    except ConfigError:
        raise
    except Exception as exc:  # isolation: one bad procedure never aborts the rest
        logger.exception("procedure for requirement %d failed", req_id)
        return Verdict(
            requirement_id=req_id,
            specification=entry.specification,
            outcome=Outcome.ERROR,
            evidence=({"type": "exception", "detail": str(exc)},),
            procedure_description="Procedure raised an unexpected error.",
        )
    raise ConfigError(f"no procedure registered for requirement {req_id}")


# -- report output ---------------------------------------------------------


def save_report(report: dict, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    tmp.replace(path)


def load_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc


def report_outcomes(report: dict):
    return [Outcome(row["verdict"]["outcome"]) for row in report.get("results", [])]


def exit_status(report: dict) -> int:
    """0 all executed Pass; 1 any Fail; 3 Error present without Fail."""
    outcomes = report_outcomes(report)
    if Outcome.FAIL in outcomes:
        return 1
    if Outcome.ERROR in outcomes:
        return 3
    return 0


def render_summary(report: dict) -> str:
    """One line per verdict row: id[/specification] OUTCOME [headline metric]."""
    lines = [
        f"catalogue {report['catalogue_version']} | risk {report['risk_level']} "
        f"| min grade {report['min_grade']}"
    ]
    for row in report.get("results", []):
        verdict = row["verdict"]
        label = str(row["requirement_id"])
        if row["specification"]:
            label += f"/{row['specification']}"
        line = f"{label} {verdict['outcome'].upper().replace('_', '-')}"
        headline = verdict["measured"].get("headline")
        if headline is not None:
            line += f" {headline:.2f}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def render_text(report: dict) -> str:
    """Full human-readable rendering of a report."""
    lines = [
        "AUDIT REPORT",
        f"toolbox version: {report['toolbox_version']}",
        f"timestamp: {report['timestamp']}",
        f"catalogue version: {report['catalogue_version']}",
        f"risk level: {report['risk_level']} (min grade {report['min_grade']})",
        f"selected requirements: {report['selected_requirement_ids']}",
        "",
    ]
    env = report.get("environment", {})
    lines.append("environment:")
    for key in sorted(env):
        lines.append(f"  {key}: {env[key]}")
    lines.append("")
    for row in report.get("results", []):
        verdict = row["verdict"]
        label = str(row["requirement_id"])
        if row["specification"]:
            label += f"/{row['specification']}"
        lines.append(f"requirement {label}: {verdict['outcome'].upper()}")
        if row["rationale"]:
            lines.append(f"  rationale: {row['rationale']}")
        if verdict["procedure_description"]:
            lines.append(f"  procedure: {verdict['procedure_description']}")
        for key in sorted(verdict["measured"]):
            if key == "headline":
                continue
            lines.append(f"  {key}: {verdict['measured'][key]}")
        for finding in verdict["evidence"]:
            if finding.get("type") in ("independence_report", "explanation_table"):
                continue  # bulky structures stay in the JSON report
            lines.append(f"  finding: {finding}")
        lines.append("")
    return "\n".join(lines)
