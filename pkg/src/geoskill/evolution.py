"""Offline knowledge-evolution loop: outcome marking, failure diagnosis,
skill synthesis, similarity merging, reliability pruning, and versioned
re-indexing.

The whole step is a pure function from (library, records, scripted or live
refinement model) to a new library value plus a balanced report; committing
the result to disk is the caller's atomic save. No model weights are ever
touched; evolution edits only the external skill memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from . import retrieval
from .geo_metrics import haversine_km
from .model_gateway import Gateway, Message, ModelAlias, ModelRequest, ResponseFormat
from .prompts import load_template
from .skill_model import (
    AtomicSkill,
    FailureRef,
    GeoCoordinate,
    Provenance,
    ProvenanceKind,
    RelationPrior,
    SkillLibrary,
    Stage,
    effective_confidence,
    library_upsert,
    validate_library,
    validate_skill,
    make_skill,
)

if TYPE_CHECKING:
    from .inference_engine import InferenceRecord, RecordGroundTruth
    from .retrieval import EmbeddingProvider, SkillIndex

SYNTHESIZED_CONFIDENCE_CEILING = 0.7

WRONG_CONTINENT_KM = 5000.0
WRONG_REGION_KM = 200.0


class ErrorType(str, Enum):
    WRONG_CONTINENT = "wrong_continent"
    WRONG_COUNTRY = "wrong_country"
    WRONG_REGION = "wrong_region"
    COORDINATE_OFFSET = "coordinate_offset"
    HALLUCINATED_CUE = "hallucinated_cue"
    RETRIEVAL_MISS = "retrieval_miss"


@dataclass(frozen=True)
class DiagnosticTuple:
    """Failure summary feeding synthesis: truth, prediction, error category,
    and the trajectory that failed."""

    truth_coordinate: GeoCoordinate
    truth_country: str | None
    predicted_coordinate: GeoCoordinate
    predicted_country: str
    error_type: ErrorType
    trajectory: tuple[str, ...]
    implicated_skill_ids: tuple[str, ...]
    query_id: str

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "truth": {
                "lat": self.truth_coordinate.lat_deg,
                "lon": self.truth_coordinate.lon_deg,
                "country": self.truth_country,
            },
            "predicted": {
                "lat": self.predicted_coordinate.lat_deg,
                "lon": self.predicted_coordinate.lon_deg,
                "country": self.predicted_country,
            },
            "error_type": self.error_type.value,
            "trajectory": list(self.trajectory),
        }


@dataclass
class EvolutionConfig:
    batch_size: int = 20
    prune_threshold: float = 0.30
    relation_failure_rate: float = 0.80
    relation_min_observations: int = 5
    merge_similarity: float = 0.92
    confidence_pseudo_count: float = 5.0
    max_synthesized_per_batch: int = 40

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("evolution.batch_size must be >= 1")
        if not (0.0 <= self.prune_threshold <= 1.0):
            raise ValueError("evolution.prune_threshold must be in [0, 1]")
        if not (0.0 <= self.relation_failure_rate <= 1.0):
            raise ValueError("evolution.relation_failure_rate must be in [0, 1]")
        if self.relation_min_observations < 1:
            raise ValueError("evolution.relation_min_observations must be >= 1")
        if not (0.0 < self.merge_similarity <= 1.0):
            raise ValueError("evolution.merge_similarity must be in (0, 1]")
        if self.confidence_pseudo_count <= 0:
            raise ValueError("evolution.confidence_pseudo_count must be positive")
        if self.max_synthesized_per_batch < 0:
            raise ValueError("evolution.max_synthesized_per_batch must be >= 0")


def update_confidence(skill: AtomicSkill, pseudo_count: float = 5.0) -> float:
    """Effective reliability after outcome feedback; pseudo-count smoothing
    keeps calibrated priors sticky against small samples."""
    return effective_confidence(skill, pseudo_count)


def invoked_skill_ids(record: "InferenceRecord") -> tuple[str, ...]:
    """Skills a record actually used: trajectory steps plus claim citations,
    deduplicated in first-seen order."""
    seen: dict[str, None] = {}
    for sid in record.prediction.trajectory:
        seen.setdefault(sid, None)
    for claim in record.prediction.claims:
        for sid in claim.skill_refs:
            seen.setdefault(sid, None)
    return tuple(seen)


def mark_outcome(
    record: "InferenceRecord",
    ground_truth: "RecordGroundTruth",
    success_radius_km: float = 25.0,
) -> "InferenceRecord":
    """Attach ground truth and the success/failure outcome: e = 0 iff the
    prediction lies within the success radius."""
    distance = haversine_km(record.prediction.coordinate, ground_truth.coordinate)
    outcome = 0 if distance <= success_radius_km else 1
    return replace(record, ground_truth=ground_truth, outcome=outcome)


def apply_outcome_counters(
    library: SkillLibrary, records: Sequence["InferenceRecord"]
) -> SkillLibrary:
    """Increment per-skill success/failure counters for the skills each
    marked record invoked."""
    deltas: dict[str, list[int]] = {}
    for record in records:
        if record.outcome is None:
            raise ValueError(f"record {record.query_id} has no outcome set")
        for sid in invoked_skill_ids(record):
            if sid in library.skills:
                bucket = deltas.setdefault(sid, [0, 0])
                bucket[record.outcome] += 1
    if not deltas:
        return library
    skills = dict(library.skills)
    for sid, (succ, fail) in deltas.items():
        skill = skills[sid]
        skills[sid] = replace(skill, success=skill.success + succ, failure=skill.failure + fail)
    return replace(library, skills=skills)


def classify_error(
    truth: "RecordGroundTruth",
    prediction,
    trajectory: Sequence[str],
    grounding_flags: Sequence[str],
    retrieved_skills: Sequence[AtomicSkill],
) -> ErrorType:
    """Categorize a failure. Grounding violations override everything, a
    retrieval that never surfaced the true country comes next, then the
    distance/country taxonomy."""
    if grounding_flags:
        return ErrorType.HALLUCINATED_CUE
    if truth.country:
        sharing = sum(1 for s in retrieved_skills if truth.country in s.countries)
        if sharing < 2:
            return ErrorType.RETRIEVAL_MISS
    distance = haversine_km(prediction.coordinate, truth.coordinate)
    country_match = bool(truth.country) and prediction.country == truth.country
    if distance > WRONG_CONTINENT_KM:
        return ErrorType.WRONG_CONTINENT
    if not country_match:
        return ErrorType.WRONG_COUNTRY
    if distance > WRONG_REGION_KM:
        return ErrorType.WRONG_REGION
    return ErrorType.COORDINATE_OFFSET


def diagnose(
    library: SkillLibrary, records: Sequence["InferenceRecord"]
) -> list[DiagnosticTuple]:
    """Diagnostic tuples for the failure subset of *records*."""
    diagnostics = []
    for record in records:
        if record.outcome != 1 or record.ground_truth is None:
            continue
        retrieved = [
            library.skills[sid] for sid in record.retrieved_skill_ids if sid in library.skills
        ]
        error = classify_error(
            record.ground_truth,
            record.prediction,
            record.prediction.trajectory,
            record.grounding_flags,
            retrieved,
        )
        diagnostics.append(
            DiagnosticTuple(
                truth_coordinate=record.ground_truth.coordinate,
                truth_country=record.ground_truth.country,
                predicted_coordinate=record.prediction.coordinate,
                predicted_country=record.prediction.country,
                error_type=error,
                trajectory=tuple(record.prediction.trajectory),
                implicated_skill_ids=invoked_skill_ids(record),
                query_id=record.query_id,
            )
        )
    return diagnostics


def synthesize(
    diagnostics: Sequence[DiagnosticTuple],
    gateway: Gateway,
    config: EvolutionConfig,
    version_introduced: int = 0,
) -> list[AtomicSkill]:
    """Ask the refinement model for corrective skills, one call per batch of
    diagnostics. Candidates that fail validation are dropped; accepted ones
    start below the expert confidence ceiling."""
    if not diagnostics:
        return []
    template = load_template("synthesis")
    candidates: list[AtomicSkill] = []
    for batch_no in range(0, len(diagnostics), config.batch_size):
        batch = diagnostics[batch_no : batch_no + config.batch_size]
        block = "\n".join(json.dumps(d.to_dict(), ensure_ascii=False) for d in batch)
        prompt = template.format(diagnostics_block=block)
        response = gateway.complete(
            ModelRequest(
                messages=(Message("user", prompt),),
                temperature=0.2,
                response_format=ResponseFormat.STRICT_JSON,
                model_alias=ModelAlias.OFFLINE_REFINEMENT,
            )
        )
        payload = json.loads(response.text)
        accepted: list[AtomicSkill] = []
        for item in payload.get("skills", []):
            if len(accepted) >= config.max_synthesized_per_batch:
                break
            skill = _candidate_from_dict(item, batch_no // config.batch_size, version_introduced)
            if skill is not None and not validate_skill(skill):
                accepted.append(skill)
        candidates.extend(accepted)
    return candidates


def _candidate_from_dict(item, batch_index: int, version: int) -> AtomicSkill | None:
    if not isinstance(item, Mapping):
        return None
    try:
        stage = Stage(item.get("stage", "country"))
        confidence = min(float(item.get("confidence", 0.5)), SYNTHESIZED_CONFIDENCE_CEILING)
        return make_skill(
            str(item["instruction"]),
            str(item.get("heuristic", "")),
            confidence,
            countries=[str(c).upper() for c in item.get("countries", [])],
            regions=[str(r).lower() for r in item.get("regions", [])],
            stage=stage,
            provenance=Provenance(ProvenanceKind.SYNTHESIZED, f"synthesis:batch-{batch_index}"),
            version_introduced=version,
        )
    except (KeyError, TypeError, ValueError):
        return None


def merge(
    library: SkillLibrary,
    provider: "EmbeddingProvider",
    merge_similarity: float = 0.92,
) -> tuple[SkillLibrary, list[tuple[str, str]]]:
    """Greedy agglomeration of near-duplicate skills.

    The most similar qualifying pair merges first; the higher-confidence
    skill survives (ties to the lower id), absorbing tags and counters, and
    relation priors re-point to the survivor. Repeats until no pair reaches
    the similarity threshold, so the post-condition is directly assertable
    by an exhaustive pairwise scan.
    """
    skills = dict(library.skills)
    merges: list[tuple[str, str]] = []  # (absorbed, survivor)
    ids = sorted(skills)
    if len(ids) > 1:
        matrix = np.stack(
            [
                np.asarray(provider.embed(retrieval.skill_text(skills[sid])), dtype=np.float64)
                for sid in ids
            ]
        )
        position = {sid: i for i, sid in enumerate(ids)}
        sims = matrix @ matrix.T
        np.fill_diagonal(sims, -np.inf)
        alive = np.ones(len(ids), dtype=bool)
        upper_i, upper_j = np.triu_indices(len(ids), k=1)

        while alive.sum() > 1:
            masked = np.where(alive[:, None] & alive[None, :], sims, -np.inf)
            flat = masked[upper_i, upper_j]
            best_sim = float(flat.max())
            if best_sim < merge_similarity:
                break
            # Row-major order over the upper triangle of the sorted ids is
            # lexicographic, so the first hit is the deterministic tie-break.
            first = int(np.flatnonzero(flat == best_sim)[0])
            a, b = ids[int(upper_i[first])], ids[int(upper_j[first])]
            sa, sb = skills[a], skills[b]
            if sa.confidence > sb.confidence or (sa.confidence == sb.confidence and a < b):
                survivor, absorbed = sa, sb
            else:
                survivor, absorbed = sb, sa
            merged_skill = replace(
                survivor,
                confidence=max(sa.confidence, sb.confidence),
                countries=sa.countries | sb.countries,
                regions=sa.regions | sb.regions,
                success=sa.success + sb.success,
                failure=sa.failure + sb.failure,
            )
            del skills[absorbed.id]
            skills[survivor.id] = merged_skill
            merges.append((absorbed.id, survivor.id))

            dead = position[absorbed.id]
            keep = position[survivor.id]
            alive[dead] = False
            matrix[keep] = np.asarray(
                provider.embed(retrieval.skill_text(merged_skill)), dtype=np.float64
            )
            row = matrix @ matrix[keep]
            sims[keep, :] = row
            sims[:, keep] = row
            sims[keep, keep] = -np.inf

    if not merges:
        return library, []

    redirect = {absorbed: survivor for absorbed, survivor in merges}

    def resolve(sid: str) -> str:
        while sid in redirect:
            sid = redirect[sid]
        return sid

    combined: dict[tuple[str, str], list[int]] = {}
    for prior in library.relation_priors:
        a, b = resolve(prior.from_id), resolve(prior.to_id)
        if a == b:
            continue
        bucket = combined.setdefault((a, b), [0, 0])
        bucket[0] += prior.support
        bucket[1] += prior.failure
    priors = tuple(
        RelationPrior(a, b, support=s, failure=f)
        for (a, b), (s, f) in sorted(combined.items())
    )
    failures = tuple(
        FailureRef(ref.ref, tuple(dict.fromkeys(resolve(sid) for sid in ref.skill_ids)))
        for ref in library.failure_subset
    )
    return (
        replace(library, skills=skills, relation_priors=priors, failure_subset=failures),
        merges,
    )


def prune(
    library: SkillLibrary, config: EvolutionConfig
) -> tuple[SkillLibrary, list[str], int]:
    """Remove skills whose effective confidence fell below the threshold and
    relations that consistently failed; returns (library, removed skill ids,
    removed prior count)."""
    removed = sorted(
        sid
        for sid, skill in library.skills.items()
        if update_confidence(skill, config.confidence_pseudo_count) < config.prune_threshold
    )
    skills = {sid: s for sid, s in library.skills.items() if sid not in set(removed)}

    kept_priors = []
    dropped_priors = 0
    for prior in library.relation_priors:
        observations = prior.support + prior.failure
        failing = (
            observations >= config.relation_min_observations
            and prior.failure / observations >= config.relation_failure_rate
        )
        dangling = prior.from_id not in skills or prior.to_id not in skills
        if failing or dangling:
            dropped_priors += 1
        else:
            kept_priors.append(prior)

    failures = tuple(
        FailureRef(ref.ref, tuple(sid for sid in ref.skill_ids if sid in skills))
        for ref in library.failure_subset
    )
    return (
        replace(
            library,
            skills=skills,
            relation_priors=tuple(kept_priors),
            failure_subset=failures,
        ),
        removed,
        dropped_priors,
    )


@dataclass(frozen=True)
class EvolutionReport:
    version: int
    skills_before: int
    added: int
    merged_away: int
    pruned: int
    skills_after: int
    synthesized_candidates: int
    duplicate_candidates: int
    priors_pruned: int
    failures_processed: int

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "skills_before": self.skills_before,
            "added": self.added,
            "merged_away": self.merged_away,
            "pruned": self.pruned,
            "skills_after": self.skills_after,
            "synthesized_candidates": self.synthesized_candidates,
            "duplicate_candidates": self.duplicate_candidates,
            "priors_pruned": self.priors_pruned,
            "failures_processed": self.failures_processed,
        }


@dataclass(frozen=True)
class EvolveOutcome:
    library: SkillLibrary
    index: "SkillIndex"
    report: EvolutionReport


def evolve_step(
    library: SkillLibrary,
    records: Sequence["InferenceRecord"],
    config: EvolutionConfig,
    gateway: Gateway,
    provider: "EmbeddingProvider",
) -> EvolveOutcome:
    """One full evolution iteration over a batch of validated records.

    Pipeline: apply outcome counters, diagnose failures, synthesize
    corrective candidates, upsert, merge, prune, append failure references,
    bump version, rebuild the retrieval index. Pure: any operator failure
    propagates before anything is committed.
    """
    size_before = len(library.skills)
    lib = apply_outcome_counters(library, records)
    failures = [r for r in records if r.outcome == 1]
    diagnostics = diagnose(lib, failures)

    candidates = synthesize(diagnostics, gateway, config, version_introduced=library.version + 1)
    duplicate_candidates = sum(1 for c in candidates if c.id in lib.skills)
    lib = library_upsert(lib, candidates)
    added = len(lib.skills) - size_before

    lib, merges = merge(lib, provider, config.merge_similarity)
    lib, pruned_ids, priors_pruned = prune(lib, config)

    existing_refs = {ref.ref for ref in lib.failure_subset}
    new_refs = tuple(
        FailureRef(
            record.query_id,
            tuple(sid for sid in invoked_skill_ids(record) if sid in lib.skills),
        )
        for record in failures
        if record.query_id not in existing_refs
    )
    lib = replace(
        lib,
        version=library.version + 1,
        failure_subset=lib.failure_subset + new_refs,
    )
    violations = validate_library(lib)
    if violations:
        raise RuntimeError(f"evolution produced an invalid library: {violations[:5]}")

    index = retrieval.build_index(lib, provider)
    report = EvolutionReport(
        version=lib.version,
        skills_before=size_before,
        added=added,
        merged_away=len(merges),
        pruned=len(pruned_ids),
        skills_after=len(lib.skills),
        synthesized_candidates=len(candidates),
        duplicate_candidates=duplicate_candidates,
        priors_pruned=priors_pruned,
        failures_processed=len(failures),
    )
    return EvolveOutcome(library=lib, index=index, report=report)
