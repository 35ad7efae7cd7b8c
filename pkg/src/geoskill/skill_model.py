"""Core domain types, validation, stable identification, and versioned
persistence for the skill library.

Library values are immutable snapshots: every mutating operation returns a
new value, and on-disk versions are committed with an atomic manifest swap
so a crashed writer can never corrupt the loadable head.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

SCHEMA_VERSION = 1
ID_HEX_LENGTH = 16  # 64-bit content hash rendered as fixed-length hex

_ISO2_RE = re.compile(r"^[A-Z]{2}$")
_WS_RE = re.compile(r"\s+")


class Stage(str, Enum):
    """Coarse-to-fine applicability stage of a skill."""

    GLOBAL_REGION = "global_region"
    COUNTRY = "country"
    LOCAL = "local"

    @property
    def rank(self) -> int:
        return _STAGE_RANK[self]


_STAGE_RANK = {Stage.GLOBAL_REGION: 0, Stage.COUNTRY: 1, Stage.LOCAL: 2}


class ProvenanceKind(str, Enum):
    EXPERT = "expert"
    SYNTHESIZED = "synthesized"


@dataclass(frozen=True)
class Provenance:
    kind: ProvenanceKind
    source: str = ""


@dataclass(frozen=True)
class GeoCoordinate:
    """Latitude/longitude pair; longitude is normalized into (-180, 180]."""

    lat_deg: float
    lon_deg: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat_deg <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat_deg}")
        if not math.isfinite(self.lon_deg):
            raise ValueError(f"longitude not finite: {self.lon_deg}")
        lon = math.fmod(self.lon_deg, 360.0)
        if lon > 180.0:
            lon -= 360.0
        elif lon <= -180.0:
            lon += 360.0
        object.__setattr__(self, "lon_deg", lon)


def normalize_text(text: str) -> str:
    """Collapse runs of whitespace and strip the ends."""
    return _WS_RE.sub(" ", text).strip()


def skill_id(instruction: str, heuristic: str) -> str:
    """Deterministic content id of a skill.

    The id is a pure function of the lowercased, whitespace-collapsed
    instruction and heuristic, so re-hashing any stored skill reproduces it.
    """
    canonical = normalize_text(instruction).lower() + "\x1f" + normalize_text(heuristic).lower()
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:ID_HEX_LENGTH]


@dataclass(frozen=True)
class AtomicSkill:
    """Minimal unit of geographic reasoning: an instruction, the heuristic it
    encodes, and a reliability confidence, plus applicability tags and
    provenance."""

    id: str
    instruction: str
    heuristic: str
    confidence: float
    countries: frozenset[str] = frozenset()
    regions: frozenset[str] = frozenset()
    stage: Stage = Stage.COUNTRY
    provenance: Provenance = Provenance(ProvenanceKind.EXPERT)
    success: int = 0
    failure: int = 0
    version_introduced: int = 0


def make_skill(
    instruction: str,
    heuristic: str,
    confidence: float,
    *,
    countries: Iterable[str] = (),
    regions: Iterable[str] = (),
    stage: Stage = Stage.COUNTRY,
    provenance: Provenance = Provenance(ProvenanceKind.EXPERT),
    success: int = 0,
    failure: int = 0,
    version_introduced: int = 0,
) -> AtomicSkill:
    """Build a skill with its content id derived from instruction/heuristic."""
    return AtomicSkill(
        id=skill_id(instruction, heuristic),
        instruction=normalize_text(instruction),
        heuristic=normalize_text(heuristic),
        confidence=confidence,
        countries=frozenset(countries),
        regions=frozenset(regions),
        stage=stage,
        provenance=provenance,
        success=success,
        failure=failure,
        version_introduced=version_introduced,
    )


def validate_skill(skill: AtomicSkill) -> list[str]:
    """Return every violated invariant; an empty list means the skill is ok."""
    violations: list[str] = []
    if not (0.0 <= skill.confidence <= 1.0):
        violations.append(f"confidence out of range: {skill.confidence}")
    if not normalize_text(skill.instruction):
        violations.append("instruction empty after whitespace normalization")
    for code in sorted(skill.countries):
        if not _ISO2_RE.match(code):
            violations.append(f"country code not ISO-2 shaped: {code!r}")
    if skill.id != skill_id(skill.instruction, skill.heuristic):
        violations.append(f"id does not re-hash from content: {skill.id}")
    if skill.success < 0 or skill.failure < 0:
        violations.append("negative outcome counter")
    if skill.version_introduced < 0:
        violations.append("negative version_introduced")
    return violations


def effective_confidence(skill: AtomicSkill, pseudo_count: float = 5.0) -> float:
    """Reliability after outcome feedback, via pseudo-count smoothing of the
    calibrated initial confidence."""
    return (pseudo_count * skill.confidence + skill.success) / (
        pseudo_count + skill.success + skill.failure
    )


@dataclass(frozen=True)
class RelationPrior:
    """Expert-derived directed dependency between two skills."""

    from_id: str
    to_id: str
    support: int = 0
    failure: int = 0


@dataclass(frozen=True)
class FailureRef:
    """Negative-evidence reference to a trajectory, with the library skills it
    implicated (if any)."""

    ref: str
    skill_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class SkillLibrary:
    version: int = 0
    skills: Mapping[str, AtomicSkill] = None  # type: ignore[assignment]
    relation_priors: tuple[RelationPrior, ...] = ()
    failure_subset: tuple[FailureRef, ...] = ()

    def __post_init__(self) -> None:
        if self.skills is None:
            object.__setattr__(self, "skills", {})


def empty_library() -> SkillLibrary:
    return SkillLibrary(version=0, skills={})


def validate_library(lib: SkillLibrary) -> list[str]:
    violations: list[str] = []
    if lib.version < 0:
        violations.append(f"negative version: {lib.version}")
    for sid, skill in lib.skills.items():
        if sid != skill.id:
            violations.append(f"key/id mismatch: {sid} vs {skill.id}")
        for v in validate_skill(skill):
            violations.append(f"skill {sid}: {v}")
    for prior in lib.relation_priors:
        if prior.from_id == prior.to_id:
            violations.append(f"self-loop relation prior: {prior.from_id}")
        if prior.from_id not in lib.skills:
            violations.append(f"dangling relation prior endpoint: {prior.from_id}")
        if prior.to_id not in lib.skills:
            violations.append(f"dangling relation prior endpoint: {prior.to_id}")
    return violations


class SkillValidationError(ValueError):
    """Raised when an invalid skill is offered to a library operation."""

    def __init__(self, violations: Mapping[str, list[str]]):
        self.violations = dict(violations)
        parts = "; ".join(f"{sid}: {', '.join(v)}" for sid, v in self.violations.items())
        super().__init__(f"invalid skills rejected: {parts}")


def library_upsert(
    lib: SkillLibrary,
    skills: Iterable[AtomicSkill],
    bump_version: bool = False,
) -> SkillLibrary:
    """Insert or replace skills by content id, returning a new library value.

    Id collisions replace the stored skill in place but preserve its
    success/failure counters. The version is incremented iff *bump_version*.
    """
    offered = list(skills)
    bad = {s.id: validate_skill(s) for s in offered if validate_skill(s)}
    if bad:
        raise SkillValidationError(bad)
    merged = dict(lib.skills)
    for skill in offered:
        prior = merged.get(skill.id)
        if prior is not None:
            skill = replace(skill, success=prior.success, failure=prior.failure)
        merged[skill.id] = skill
    return replace(
        lib,
        version=lib.version + 1 if bump_version else lib.version,
        skills=merged,
    )


# ---------------------------------------------------------------------------
# Persistence: JSONL files under per-version directories, selected by an
# atomically replaced manifest. The manifest swap is the commit point.
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


class LibraryFormatError(ValueError):
    """Raised on parse failures, schema mismatches, or invariant violations
    while loading a library from disk."""


def skill_to_dict(skill: AtomicSkill) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "id": skill.id,
        "instruction": skill.instruction,
        "heuristic": skill.heuristic,
        "confidence": skill.confidence,
        "countries": sorted(skill.countries),
        "regions": sorted(skill.regions),
        "stage": skill.stage.value,
        "provenance": {"kind": skill.provenance.kind.value, "source": skill.provenance.source},
        "success": skill.success,
        "failure": skill.failure,
        "version_introduced": skill.version_introduced,
    }


def skill_from_dict(obj: dict) -> AtomicSkill:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise LibraryFormatError(f"unsupported skill schema_version: {obj.get('schema_version')}")
    prov = obj.get("provenance") or {}
    return AtomicSkill(
        id=obj["id"],
        instruction=obj["instruction"],
        heuristic=obj["heuristic"],
        confidence=float(obj["confidence"]),
        countries=frozenset(obj.get("countries", [])),
        regions=frozenset(obj.get("regions", [])),
        stage=Stage(obj["stage"]),
        provenance=Provenance(ProvenanceKind(prov.get("kind", "expert")), prov.get("source", "")),
        success=int(obj.get("success", 0)),
        failure=int(obj.get("failure", 0)),
        version_introduced=int(obj.get("version_introduced", 0)),
    )


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def save_library(lib: SkillLibrary, path: str | Path) -> Path:
    """Persist a library under *path*; returns the version directory.

    Files are written into a per-version subdirectory first; the manifest in
    the library root is replaced last, atomically, so readers either see the
    prior version or the complete new one.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    vdir_name = f"v{lib.version:04d}"
    vdir = root / vdir_name
    vdir.mkdir(exist_ok=True)

    skill_lines = [_dump_line(skill_to_dict(lib.skills[sid])) for sid in sorted(lib.skills)]
    _write_text_atomic(vdir / "skills.jsonl", "".join(line + "\n" for line in skill_lines))

    prior_lines = [
        _dump_line({"from": p.from_id, "to": p.to_id, "support": p.support, "failure": p.failure})
        for p in sorted(lib.relation_priors, key=lambda p: (p.from_id, p.to_id))
    ]
    _write_text_atomic(vdir / "relations.jsonl", "".join(line + "\n" for line in prior_lines))

    failure_lines = [
        _dump_line({"ref": f.ref, "skill_ids": list(f.skill_ids)}) for f in lib.failure_subset
    ]
    _write_text_atomic(vdir / "failures.jsonl", "".join(line + "\n" for line in failure_lines))

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "version": lib.version,
        "skills_file": f"{vdir_name}/skills.jsonl",
        "relations_file": f"{vdir_name}/relations.jsonl",
        "failures_file": f"{vdir_name}/failures.jsonl",
    }
    _write_text_atomic(root / MANIFEST_NAME, json.dumps(manifest, indent=2) + "\n")
    return vdir


def _parse_jsonl(path: Path) -> list[dict]:
    """Parse a JSONL file, reporting line number and byte offset on failure."""
    rows: list[dict] = []
    offset = 0
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            stripped = raw.strip()
            if stripped:
                try:
                    rows.append(json.loads(stripped.decode("utf-8")))
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    pos = getattr(exc, "pos", 0)
                    raise LibraryFormatError(
                        f"{path.name}: parse error at line {line_no}, byte offset {offset + pos}: {exc}"
                    ) from exc
            offset += len(raw)
    return rows


def load_library(path: str | Path) -> SkillLibrary:
    """Load a library directory; load(save(L)) equals L field-for-field."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise LibraryFormatError(f"no library manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LibraryFormatError(
            f"{MANIFEST_NAME}: parse error at byte offset {exc.pos}: {exc}"
        ) from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise LibraryFormatError(
            f"unsupported manifest schema_version: {manifest.get('schema_version')}"
        )

    skills: dict[str, AtomicSkill] = {}
    for obj in _parse_jsonl(root / manifest["skills_file"]):
        skill = skill_from_dict(obj)
        if skill.id in skills:
            raise LibraryFormatError(f"duplicate skill id on load: {skill.id}")
        skills[skill.id] = skill

    priors = tuple(
        RelationPrior(obj["from"], obj["to"], int(obj.get("support", 0)), int(obj.get("failure", 0)))
        for obj in _parse_jsonl(root / manifest["relations_file"])
    )
    failures = tuple(
        FailureRef(obj["ref"], tuple(obj.get("skill_ids", [])))
        for obj in _parse_jsonl(root / manifest["failures_file"])
    )

    lib = SkillLibrary(
        version=int(manifest["version"]),
        skills=skills,
        relation_priors=priors,
        failure_subset=failures,
    )
    violations = validate_library(lib)
    if violations:
        raise LibraryFormatError(f"invariant violations on load: {violations[:5]}")
    return lib
