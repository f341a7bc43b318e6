"""Machine-readable requirement catalogue with risk-graded recommendations.

A catalogue is a versioned JSON document listing audit requirements. Each
requirement carries a recommendation grade ("++", "+", "o") for each of the
four ASIL risk levels, so a risk-appropriate subset can be selected before an
audit run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path


class CatalogueError(Exception):
    """Raised when a catalogue document cannot be parsed or validated."""


class RequirementNotFound(KeyError):
    """Raised when a requirement id is absent from a catalogue."""


class AsilLevel(Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"

    @property
    def rank(self) -> int:
        return "ABCD".index(self.value)

    def __lt__(self, other: "AsilLevel") -> bool:
        return self.rank < other.rank


class RecommendationGrade(Enum):
    NOT_RECOMMENDED = "o"
    RECOMMENDED = "+"
    HIGHLY_RECOMMENDED = "++"

    @property
    def rank(self) -> int:
        return ("o", "+", "++").index(self.value)

    def __ge__(self, other: "RecommendationGrade") -> bool:
        return self.rank >= other.rank


class Scope(Enum):
    ENTIRE_SYSTEM = "entire_system"
    AI_SUBSYSTEM = "ai_subsystem"


class Applicability(Enum):
    SIMPLE = "simple"
    COMPLEX = "complex"


class Concretization(Enum):
    MINOR = "minor"
    MAJOR = "major"


class Testability(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class ProcedureKind(Enum):
    METRIC_BASED = "metric_based"
    EVIDENCE_BASED = "evidence_based"


@dataclass(frozen=True)
class Requirement:
    id: int
    text: str
    scope: Scope
    grades: dict  # AsilLevel -> RecommendationGrade, all four levels present
    applicability: Applicability
    concretization: Concretization
    testability: Testability
    procedure_kind: frozenset  # of ProcedureKind, non-empty

    def __post_init__(self):
        if self.id <= 0:
            raise CatalogueError(f"requirement id must be positive, got {self.id}")
        missing = [lvl for lvl in AsilLevel if lvl not in self.grades]
        if missing:
            names = ", ".join(lvl.value for lvl in missing)
            raise CatalogueError(
                f"requirement {self.id}: missing grade for ASIL level(s) {names}"
            )
        if not self.procedure_kind:
            raise CatalogueError(f"requirement {self.id}: procedure_kind is empty")

    def grade_at(self, risk: AsilLevel) -> RecommendationGrade:
        return self.grades[risk]


@dataclass(frozen=True)
class Catalogue:
    version: str
    requirements: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.version:
            raise CatalogueError("catalogue version must be a non-empty string")
        seen = set()
        for req in self.requirements:
            if req.id in seen:
                raise CatalogueError(f"duplicate requirement id {req.id}")
            seen.add(req.id)


def _parse_requirement(obj: dict) -> Requirement:
    try:
        grades = {
            AsilLevel(level): RecommendationGrade(symbol)
            for level, symbol in obj["grades"].items()
        }
        return Requirement(
            id=obj["id"],
            text=obj["text"],
            scope=Scope(obj["scope"]),
            grades=grades,
            applicability=Applicability(obj["applicability"]),
            concretization=Concretization(obj["concretization"]),
            testability=Testability(obj["testability"]),
            procedure_kind=frozenset(ProcedureKind(k) for k in obj["procedure_kind"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        ident = obj.get("id", "<missing id>")
        raise CatalogueError(f"requirement {ident}: {exc}") from exc


def parse_catalogue(document: dict) -> Catalogue:
    if not isinstance(document, dict):
        raise CatalogueError("catalogue document must be a JSON object")
    for key in ("version", "requirements"):
        if key not in document:
            raise CatalogueError(f"catalogue document missing field '{key}'")
    reqs = tuple(_parse_requirement(obj) for obj in document["requirements"])
    return Catalogue(version=str(document["version"]), requirements=reqs)


def load_catalogue(path) -> Catalogue:
    """Load and validate a catalogue JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CatalogueError(f"cannot read catalogue file {path}: {exc}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CatalogueError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_catalogue(document)


def serialize_catalogue(catalogue: Catalogue) -> dict:
    return {
        "version": catalogue.version,
        "requirements": [
            {
                "id": req.id,
                "text": req.text,
                "scope": req.scope.value,
                "grades": {lvl.value: req.grades[lvl].value for lvl in AsilLevel},
                "applicability": req.applicability.value,
                "concretization": req.concretization.value,
                "testability": req.testability.value,
                "procedure_kind": sorted(k.value for k in req.procedure_kind),
            }
            for req in catalogue.requirements
        ],
    }


def save_catalogue(catalogue: Catalogue, path) -> None:
    Path(path).write_text(
        json.dumps(serialize_catalogue(catalogue), indent=2) + "\n", encoding="utf-8"
    )


def select_requirements(
    catalogue: Catalogue, risk: AsilLevel, min_grade: RecommendationGrade
):
    """Requirements whose grade at `risk` is at least `min_grade` (o < + < ++).

    Input order is preserved; the selection is a pure filter.
    """
    return [req for req in catalogue.requirements if req.grade_at(risk) >= min_grade]


def requirement_by_id(catalogue: Catalogue, req_id: int) -> Requirement:
    for req in catalogue.requirements:
        if req.id == req_id:
            return req
    raise RequirementNotFound(f"no requirement with id {req_id} in catalogue")


def exemplar_catalogue_path() -> Path:
    """Path of the bundled exemplar catalogue (requirements 7, 30 and 33)."""
    return Path(resources.files("aiaudit").joinpath("data/exemplar_catalogue.json"))


def load_exemplar_catalogue() -> Catalogue:
    return load_catalogue(exemplar_catalogue_path())
