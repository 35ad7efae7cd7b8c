"""Compile structured expert trajectory records into the initial skill
library: skills, relation priors, and the failure subset.

Compilation is purely symbolic (no model calls), so the cold-start library
cannot inherit model hallucinations.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .gazetteer import find_countries, find_region_tags
from .skill_model import (
    AtomicSkill,
    FailureRef,
    GeoCoordinate,
    Provenance,
    ProvenanceKind,
    RelationPrior,
    SkillLibrary,
    Stage,
    empty_library,
    library_upsert,
    make_skill,
    normalize_text,
    validate_library,
)


class TrajectoryOutcome(str, Enum):
    SUCCESS = "success"
    BRITTLE = "brittle"


@dataclass(frozen=True)
class TrajectoryRound:
    reasoning: str
    conclusion: str


@dataclass(frozen=True)
class GroundTruth:
    coordinate: GeoCoordinate
    country: str | None = None


@dataclass(frozen=True)
class ExpertTrajectoryRecord:
    trajectory_id: str
    rounds: tuple[TrajectoryRound, ...]
    outcome: TrajectoryOutcome
    ground_truth: GroundTruth | None = None


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    message: str


@dataclass(frozen=True)
class CertaintyLexicon:
    """Marker phrases mapped to confidence values, longest-match-first."""

    entries: tuple[tuple[str, float], ...]
    default: float = 0.60

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.entries, key=lambda e: len(e[0]), reverse=True))
        object.__setattr__(self, "entries", ordered)
        for marker, value in ordered:
            if marker != marker.lower():
                raise ValueError(f"lexicon marker not lowercase: {marker!r}")
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"lexicon value out of range: {marker!r} -> {value}")
        if not (0.0 <= self.default <= 1.0):
            raise ValueError(f"lexicon default out of range: {self.default}")


DEFAULT_LEXICON = CertaintyLexicon(
    entries=(
        ("definitely", 0.90),
        ("certainly", 0.90),
        ("clearly", 0.90),
        ("likely", 0.70),
        ("probably", 0.70),
        ("possibly", 0.50),
        ("maybe", 0.50),
        ("perhaps", 0.50),
        ("not sure", 0.35),
        ("uncertain", 0.35),
    ),
    default=0.60,
)

# Stage-assignment vocabulary. Checked in the order: global-region cues,
# country mention, local cues; default Country.
GLOBAL_STAGE_VOCAB = frozenset(
    {
        "hemisphere", "hemispheres", "continent", "continental", "tropical",
        "subtropical", "temperate", "equatorial", "polar", "arctic",
        "antarctic", "tundra", "taiga", "savanna", "savannah", "monsoon",
        "climate", "arid", "europe", "africa", "asia", "oceania", "antarctica",
        "latitude", "latitudes",
    }
)
LOCAL_STAGE_VOCAB = frozenset(
    {
        "street", "streets", "sign", "signs", "signage", "signpost", "plate",
        "plates", "bollard", "bollards", "pole", "poles", "kerb", "curb",
        "guardrail", "landmark", "landmarks", "storefront", "shopfront",
        "crosswalk", "intersection", "mailbox", "hydrant", "lamppost",
        "doorway", "facade",
    }
)

_STOPWORDS = frozenset(
    {
        "the", "a", "an", "and", "or", "but", "of", "in", "on", "at", "to",
        "is", "are", "was", "were", "this", "that", "it", "its", "as", "by",
        "for", "with", "from", "not", "no", "what", "which", "there", "here",
        "be", "been", "has", "have", "had", "i", "we", "you", "they", "he",
        "she", "so", "if", "then", "than", "very", "can", "could", "would",
        "should", "will", "just", "also", "am", "do", "does", "did",
    }
)

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

MIN_CONTENT_WORDS = 4


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def calibrate_confidence(text: str, lexicon: CertaintyLexicon = DEFAULT_LEXICON) -> float:
    """Confidence of the strongest certainty marker present in *text*.

    Markers are claimed longest-first so a phrase like "not sure" shadows any
    shorter marker inside its span; the highest value among claimed markers
    wins, the lexicon default applies when none match.
    """
    lowered = text.lower()
    claimed: list[tuple[int, int]] = []
    values: list[float] = []
    for marker, value in lexicon.entries:
        pattern = re.compile(rf"(?<!\w){re.escape(marker)}(?!\w)")
        for match in pattern.finditer(lowered):
            span = match.span()
            if any(span[0] < end and start < span[1] for start, end in claimed):
                continue
            claimed.append(span)
            values.append(value)
    return max(values) if values else lexicon.default


def map_regions(conclusion: str) -> tuple[set[str], set[str]]:
    """Map a conclusion to (ISO-2 country codes, normalized region tags)."""
    return find_countries(conclusion), find_region_tags(conclusion)


def _assign_stage(step_text: str) -> Stage:
    toks = set(_tokens(step_text))
    if toks & GLOBAL_STAGE_VOCAB:
        return Stage.GLOBAL_REGION
    if find_countries(step_text):
        return Stage.COUNTRY
    if toks & LOCAL_STAGE_VOCAB:
        return Stage.LOCAL
    return Stage.COUNTRY


def _is_semantically_empty(step_text: str) -> bool:
    """A step is dropped iff it has no gazetteer hit, no region token, and
    fewer than MIN_CONTENT_WORDS content words."""
    if find_countries(step_text) or find_region_tags(step_text):
        return False
    content = [
        t for t in _tokens(step_text) if len(t) >= 3 and t.isalpha() and t not in _STOPWORDS
    ]
    return len(content) < MIN_CONTENT_WORDS


def extract_skills(
    record: ExpertTrajectoryRecord,
    lexicon: CertaintyLexicon = DEFAULT_LEXICON,
) -> tuple[list[AtomicSkill], list[tuple[str, str]]]:
    """Normalize a record's surviving steps into skills plus ordered edge
    candidates between consecutive surviving steps."""
    skills: list[AtomicSkill] = []
    edges: list[tuple[str, str]] = []
    previous_id: str | None = None
    for round_no, rnd in enumerate(record.rounds):
        step_text = f"{rnd.reasoning} {rnd.conclusion}"
        if _is_semantically_empty(step_text) or not normalize_text(rnd.reasoning):
            continue
        countries, regions = map_regions(rnd.conclusion)
        skill = make_skill(
            rnd.reasoning,
            rnd.conclusion,
            calibrate_confidence(step_text, lexicon),
            countries=countries,
            regions=regions,
            stage=_assign_stage(step_text),
            provenance=Provenance(
                ProvenanceKind.EXPERT, f"{record.trajectory_id}#r{round_no}"
            ),
        )
        skills.append(skill)
        if previous_id is not None and previous_id != skill.id:
            edges.append((previous_id, skill.id))
        previous_id = skill.id
    return skills, edges


def parse_trajectory_records(
    path: str | Path,
) -> tuple[list[ExpertTrajectoryRecord], list[ParseDiagnostic]]:
    """Parse the trajectory JSONL file; malformed lines become positioned
    diagnostics instead of aborting the whole file."""
    records: list[ExpertTrajectoryRecord] = []
    diagnostics: list[ParseDiagnostic] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                diagnostics.append(ParseDiagnostic(line_no, f"invalid JSON: {exc}"))
                continue
            try:
                records.append(_record_from_dict(obj))
            except (KeyError, ValueError, TypeError) as exc:
                diagnostics.append(ParseDiagnostic(line_no, str(exc)))
    return records, diagnostics


def _record_from_dict(obj: dict) -> ExpertTrajectoryRecord:
    if "trajectory_id" not in obj:
        raise KeyError("missing field 'trajectory_id'")
    raw_rounds = obj.get("rounds")
    if not raw_rounds:
        raise ValueError("record has no rounds")
    rounds = []
    for i, r in enumerate(raw_rounds):
        for fld in ("reasoning", "conclusion"):
            if fld not in r:
                raise KeyError(f"round {i} missing field '{fld}'")
        rounds.append(TrajectoryRound(str(r["reasoning"]), str(r["conclusion"])))
    outcome = TrajectoryOutcome(obj.get("outcome", "success"))
    gt = None
    if obj.get("ground_truth"):
        g = obj["ground_truth"]
        gt = GroundTruth(
            GeoCoordinate(float(g["lat"]), float(g["lon"])), g.get("country")
        )
    return ExpertTrajectoryRecord(
        trajectory_id=str(obj["trajectory_id"]),
        rounds=tuple(rounds),
        outcome=outcome,
        ground_truth=gt,
    )


def compile_library(
    records: Sequence[ExpertTrajectoryRecord],
    lexicon: CertaintyLexicon = DEFAULT_LEXICON,
) -> SkillLibrary:
    """Compile records into a version-0 library.

    Skills come from successful trajectories, deduplicated by content id with
    confidence = max across duplicates. Edge candidates aggregate into
    relation priors with support counts. Brittle trajectories contribute only
    failure-subset references (negative evidence), never skills.
    """
    by_id: dict[str, AtomicSkill] = {}
    edge_support: dict[tuple[str, str], int] = {}
    brittle: list[tuple[str, list[str]]] = []

    for record in records:
        skills, edges = extract_skills(record, lexicon)
        if record.outcome is TrajectoryOutcome.BRITTLE:
            brittle.append((record.trajectory_id, [s.id for s in skills]))
            continue
        for skill in skills:
            seen = by_id.get(skill.id)
            if seen is None or skill.confidence > seen.confidence:
                by_id[skill.id] = skill
        for edge in edges:
            edge_support[edge] = edge_support.get(edge, 0) + 1

    priors = tuple(
        RelationPrior(a, b, support=n)
        for (a, b), n in sorted(edge_support.items())
        if a in by_id and b in by_id
    )
    failures = tuple(
        FailureRef(ref, tuple(sid for sid in sids if sid in by_id))
        for ref, sids in brittle
    )
    lib = library_upsert(empty_library(), by_id.values(), bump_version=False)
    compiled = SkillLibrary(
        version=0,
        skills=dict(lib.skills),
        relation_priors=priors,
        failure_subset=failures,
    )
    violations = validate_library(compiled)
    if violations:
        raise RuntimeError(f"compilation produced an invalid library: {violations[:5]}")
    return compiled
