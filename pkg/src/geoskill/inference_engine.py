"""Online skill-conditioned inference: scene parsing, hybrid retrieval,
graph composition, dual-grounded reasoning, multi-rollout voting, and record
logging.

A prediction is only accepted if every claim is grounded both in parsed
scene evidence and in a retrieved skill, and its trajectory is a valid path
through the logged graph; one corrective re-prompt is allowed before the
query fails. With the scripted mock backend, a fixed seed, and an injected
clock, the whole pipeline is bit-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

from .geo_metrics import haversine_km
from .graph_composer import (
    TaskSkillGraph,
    compose_graph,
    empty_graph,
    graph_dump,
    order_plan,
    shuffle_edges,
    validate_trajectory,
)
from .model_gateway import Gateway, Message, ModelAlias, ModelRequest, ResponseFormat
from .prompts import load_template, template_hash
from .retrieval import SkillIndex, WeightedQuery, hybrid_retrieve, hybrid_scores
from .skill_model import GeoCoordinate, SkillLibrary

if TYPE_CHECKING:
    from .config import RunConfig

ABLATION_MODES = ("full", "wo_skill", "random_skill", "shuffled_order", "atomic_only")

_ISO2_RE = re.compile(r"^[A-Z]{2}$")
_OCR_REF_RE = re.compile(r"^(script_language_patterns|ocr_snippets)\[(\d+)\]$")


class DrivingSide(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    UNKNOWN = "unknown"


SCENE_TEXT_FIELDS = (
    "road_marking_style",
    "pole_signage",
    "vegetation_climate",
    "built_environment",
)


@dataclass(frozen=True)
class SceneParse:
    """Structured description of observable cues; every field is present,
    with unknown/empty standing in for cues the image does not show."""

    script_language_patterns: tuple[str, ...] = ()
    driving_side: DrivingSide = DrivingSide.UNKNOWN
    road_marking_style: str = ""
    pole_signage: str = ""
    vegetation_climate: str = ""
    built_environment: str = ""
    ocr_snippets: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def canonical_text(self) -> str:
        """Stable text form used as the retrieval query and prompt block."""
        lines = [
            "script/language: " + ("; ".join(self.script_language_patterns) or "unknown"),
            f"driving side: {self.driving_side.value}",
            "road markings: " + (self.road_marking_style or "unknown"),
            "poles/signage: " + (self.pole_signage or "unknown"),
            "vegetation/climate: " + (self.vegetation_climate or "unknown"),
            "built environment: " + (self.built_environment or "unknown"),
            "ocr: " + ("; ".join(self.ocr_snippets) or "none"),
        ]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "script_language_patterns": list(self.script_language_patterns),
            "driving_side": self.driving_side.value,
            "road_marking_style": self.road_marking_style,
            "pole_signage": self.pole_signage,
            "vegetation_climate": self.vegetation_climate,
            "built_environment": self.built_environment,
            "ocr_snippets": list(self.ocr_snippets),
            "warnings": list(self.warnings),
        }


def scene_from_dict(obj: dict) -> SceneParse:
    """Tolerant reader: missing fields default with a warning, unknown extra
    fields are ignored. Warnings already recorded on a stored scene are
    preserved so record round-trips are lossless."""
    warnings = [str(w) for w in obj.get("warnings", [])]

    def take(name, default):
        if name not in obj:
            warnings.append(f"scene field defaulted: {name}")
            return default
        return obj[name]

    raw_side = str(take("driving_side", "unknown")).lower()
    try:
        side = DrivingSide(raw_side)
    except ValueError:
        warnings.append(f"scene field defaulted: driving_side (bad value {raw_side!r})")
        side = DrivingSide.UNKNOWN
    return SceneParse(
        script_language_patterns=tuple(str(s) for s in take("script_language_patterns", [])),
        driving_side=side,
        road_marking_style=str(take("road_marking_style", "")),
        pole_signage=str(take("pole_signage", "")),
        vegetation_climate=str(take("vegetation_climate", "")),
        built_environment=str(take("built_environment", "")),
        ocr_snippets=tuple(str(s) for s in take("ocr_snippets", [])),
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class GroundedClaim:
    text: str
    evidence_refs: tuple[str, ...]
    skill_refs: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "claim": self.text,
            "evidence": list(self.evidence_refs),
            "skills": list(self.skill_refs),
        }


@dataclass(frozen=True)
class GeoPrediction:
    country: str
    region: str
    coordinate: GeoCoordinate
    confidence: float
    claims: tuple[GroundedClaim, ...] = ()
    trajectory: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "country": self.country,
            "region": self.region,
            "lat": self.coordinate.lat_deg,
            "lon": self.coordinate.lon_deg,
            "confidence": self.confidence,
            "claims": [c.to_dict() for c in self.claims],
            "trajectory": list(self.trajectory),
        }


def prediction_from_dict(obj: dict) -> GeoPrediction:
    claims = tuple(
        GroundedClaim(
            text=str(c.get("claim", "")),
            evidence_refs=tuple(str(e) for e in c.get("evidence", [])),
            skill_refs=tuple(str(s) for s in c.get("skills", [])),
        )
        for c in obj.get("claims", [])
    )
    return GeoPrediction(
        country=str(obj.get("country", "")).upper(),
        region=str(obj.get("region", "")),
        coordinate=GeoCoordinate(float(obj["lat"]), float(obj["lon"])),
        confidence=float(obj.get("confidence", 0.0)),
        claims=claims,
        trajectory=tuple(str(s) for s in obj.get("trajectory", [])),
    )


@dataclass(frozen=True)
class RecordGroundTruth:
    coordinate: GeoCoordinate
    country: str | None = None

    def to_dict(self) -> dict:
        return {
            "lat": self.coordinate.lat_deg,
            "lon": self.coordinate.lon_deg,
            "country": self.country,
        }


@dataclass(frozen=True)
class RolloutTranscript:
    index: int
    temperature: float
    prediction: GeoPrediction

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "temperature": self.temperature,
            "prediction": self.prediction.to_dict(),
        }


@dataclass(frozen=True)
class InferenceRecord:
    query_id: str
    mode: str
    seed: int
    prediction: GeoPrediction
    retrieved_skill_ids: tuple[str, ...]
    candidate_count: int
    graph: dict
    rollouts: tuple[RolloutTranscript, ...]
    scene: SceneParse
    template_hashes: dict
    started_at: float
    finished_at: float
    grounding_flags: tuple[str, ...] = ()
    outcome: int | None = None
    ground_truth: RecordGroundTruth | None = None
    external_verification: dict | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "query_id": self.query_id,
            "mode": self.mode,
            "seed": self.seed,
            "prediction": self.prediction.to_dict(),
            "retrieved_skill_ids": list(self.retrieved_skill_ids),
            "candidate_count": self.candidate_count,
            "graph": self.graph,
            "rollouts": [r.to_dict() for r in self.rollouts],
            "scene": self.scene.to_dict(),
            "template_hashes": dict(self.template_hashes),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "grounding_flags": list(self.grounding_flags),
            "outcome": self.outcome,
            "ground_truth": self.ground_truth.to_dict() if self.ground_truth else None,
            "external_verification": self.external_verification,
        }


def record_from_dict(obj: dict) -> InferenceRecord:
    gt = None
    if obj.get("ground_truth"):
        g = obj["ground_truth"]
        gt = RecordGroundTruth(GeoCoordinate(float(g["lat"]), float(g["lon"])), g.get("country"))
    return InferenceRecord(
        query_id=obj["query_id"],
        mode=obj.get("mode", "full"),
        seed=int(obj.get("seed", 0)),
        prediction=prediction_from_dict(obj["prediction"]),
        retrieved_skill_ids=tuple(obj.get("retrieved_skill_ids", [])),
        candidate_count=int(obj.get("candidate_count", 0)),
        graph=obj.get("graph", {"nodes": [], "edges": []}),
        rollouts=tuple(
            RolloutTranscript(
                index=int(r["index"]),
                temperature=float(r["temperature"]),
                prediction=prediction_from_dict(r["prediction"]),
            )
            for r in obj.get("rollouts", [])
        ),
        scene=scene_from_dict(obj.get("scene", {})),
        template_hashes=obj.get("template_hashes", {}),
        started_at=float(obj.get("started_at", 0.0)),
        finished_at=float(obj.get("finished_at", 0.0)),
        grounding_flags=tuple(obj.get("grounding_flags", [])),
        outcome=obj.get("outcome"),
        ground_truth=gt,
        external_verification=obj.get("external_verification"),
    )


class GroundingError(RuntimeError):
    """The model's prediction stayed ungrounded after the corrective
    re-prompt."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class VoteError(RuntimeError):
    def __init__(self, causes: Sequence[str]):
        self.causes = list(causes)
        super().__init__(f"all rollouts failed: {self.causes}")


def validate_grounding(
    prediction: GeoPrediction,
    scene: SceneParse,
    retrieved_ids: Iterable[str],
    require_skill_refs: bool = True,
) -> list[str]:
    """Dual-grounding check: every claim must cite resolvable scene evidence
    and (unless skills were deliberately withheld) at least one retrieved
    skill. Returns the violations; an empty list means ok."""
    violations: list[str] = []
    retrieved = set(retrieved_ids)
    for i, claim in enumerate(prediction.claims):
        label = f"claim {i} ({claim.text[:40]!r})"
        if not claim.evidence_refs:
            violations.append(f"{label}: empty evidence list")
        for ref in claim.evidence_refs:
            if not _evidence_resolves(ref, scene):
                violations.append(f"{label}: unresolvable evidence ref {ref!r}")
        if require_skill_refs:
            if not claim.skill_refs:
                violations.append(f"{label}: unattributable claim (no skill refs)")
            for sid in claim.skill_refs:
                if sid not in retrieved:
                    violations.append(
                        f"{label}: unattributable claim (skill {sid} not retrieved)"
                    )
    if not _ISO2_RE.match(prediction.country):
        violations.append(f"country not ISO-2 shaped: {prediction.country!r}")
    if not (0.0 <= prediction.confidence <= 1.0):
        violations.append(f"confidence out of range: {prediction.confidence}")
    return violations


def _evidence_resolves(ref: str, scene: SceneParse) -> bool:
    indexed = _OCR_REF_RE.match(ref)
    if indexed:
        items = getattr(scene, indexed.group(1))
        return int(indexed.group(2)) < len(items)
    if ref == "driving_side":
        return scene.driving_side is not DrivingSide.UNKNOWN
    if ref in ("script_language_patterns", "ocr_snippets"):
        return len(getattr(scene, ref)) > 0
    if ref in SCENE_TEXT_FIELDS:
        value = getattr(scene, ref)
        return bool(value) and value.lower() != "unknown"
    return False


class RecordWriter:
    """Append-only JSONL record log with serialized writes."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: InferenceRecord) -> None:
        line = json.dumps(record.to_dict(), ensure_ascii=False, separators=(",", ":"))
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def read_records(path: str | Path) -> list[InferenceRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records


class InferenceEngine:
    """Runs queries against an immutable (library, index) snapshot through a
    configured gateway."""

    def __init__(
        self,
        library: SkillLibrary,
        index: SkillIndex,
        gateway: Gateway,
        config: "RunConfig",
        record_writer: RecordWriter | None = None,
        clock: Callable[[], float] = time.time,
    ):
        if index.library_version != library.version:
            raise ValueError(
                f"index built for version {index.library_version}, "
                f"library is version {library.version}"
            )
        self.library = library
        self.index = index
        self.gateway = gateway
        self.config = config
        self.record_writer = record_writer
        self.clock = clock

    # -- stage 1: scene parsing ------------------------------------------

    def parse_scene(self, image_ref: str) -> SceneParse:
        prompt = load_template("scene_parse")
        response = self.gateway.complete(
            ModelRequest(
                messages=(Message("user", prompt, images=(image_ref,)),),
                temperature=self.config.inference.main_temperature,
                response_format=ResponseFormat.STRICT_JSON,
                model_alias=ModelAlias.ONLINE_INFERENCE,
            )
        )
        return scene_from_dict(json.loads(response.text))

    # -- stage 2 + 3: retrieval and graph composition ---------------------

    def _retrieve(self, scene: SceneParse, mode: str, seed: int) -> tuple[list[str], int]:
        rc = self.config.retrieval
        if mode == "wo_skill":
            return [], 0
        if mode == "random_skill":
            rng = random.Random(seed)
            ids = sorted(self.library.skills)
            take = min(rc.k, len(ids))
            return rng.sample(ids, take), take
        query = WeightedQuery(
            parts=(
                (self.config.inference.task_prior, rc.task_prior_weight),
                (scene.canonical_text(), rc.scene_weight),
            )
        )
        # Candidate count (pre-MMR, post-threshold) is logged so the funnel
        # from candidates to final nodes stays auditable.
        scores = hybrid_scores(self.index, query, rc.lexical_weight, rc.semantic_weight)
        candidate_count = sum(1 for s in scores.values() if s >= rc.score_threshold)
        ranked = hybrid_retrieve(
            self.index,
            query,
            k=rc.k,
            score_threshold=rc.score_threshold,
            diversity_lambda=rc.diversity_lambda,
            lexical_weight=rc.lexical_weight,
            semantic_weight=rc.semantic_weight,
        )
        return [sid for sid, _s in ranked], candidate_count

    def _compose(self, retrieved: list[str], mode: str, seed: int) -> tuple[TaskSkillGraph, list[str]]:
        if mode in ("wo_skill", "atomic_only") or not retrieved:
            return empty_graph(), []
        skills = [self.library.skills[sid] for sid in retrieved]
        graph = compose_graph(skills, self.library.relation_priors)
        if mode == "shuffled_order":
            graph = shuffle_edges(graph, seed)
        return graph, order_plan(graph)

    # -- stage 4: skill-conditioned reasoning ------------------------------

    def _skill_line(self, sid: str) -> str:
        skill = self.library.skills[sid]
        return f"- [{skill.stage.value}] ({sid}) {skill.instruction} => {skill.heuristic}"

    def _skill_block(self, retrieved: list[str], plan: list[str], mode: str) -> str:
        if mode == "wo_skill" or not retrieved:
            return ""
        if mode == "atomic_only":
            lines = [self._skill_line(sid) for sid in sorted(retrieved)]
            return "\n## Available skills (unordered)\n" + "\n".join(lines) + "\n"
        ordered = [f"{i + 1}. {self._skill_line(sid)[2:]}" for i, sid in enumerate(plan)]
        return "\n## Reasoning plan (apply in order)\n" + "\n".join(ordered) + "\n"

    def _grounding_rule(self, mode: str) -> str:
        if mode == "wo_skill":
            return (
                "Every claim must cite at least one scene evidence reference. "
                "Leave each claim's skills list empty and the trajectory empty."
            )
        if mode == "atomic_only":
            return (
                "Every claim must cite at least one scene evidence reference "
                "and at least one listed skill id. No plan was provided, so "
                "leave the trajectory list empty."
            )
        return (
            "Every claim must cite at least one scene evidence reference and "
            "at least one retrieved skill id; the trajectory must follow the "
            "plan's dependency order."
        )

    def _reasoning_messages(
        self, image_ref: str, scene: SceneParse, retrieved: list[str], plan: list[str], mode: str
    ) -> tuple[Message, ...]:
        prompt = load_template("reasoning").format(
            task_prior=self.config.inference.task_prior,
            scene_block=scene.canonical_text(),
            skill_block=self._skill_block(retrieved, plan, mode),
            grounding_rule=self._grounding_rule(mode),
        )
        return (Message("user", prompt, images=(image_ref,)),)

    def _validate(
        self,
        prediction: GeoPrediction,
        scene: SceneParse,
        retrieved: list[str],
        graph: TaskSkillGraph,
        mode: str,
    ) -> list[str]:
        violations = validate_grounding(
            prediction, scene, retrieved, require_skill_refs=mode != "wo_skill"
        )
        if mode in ("wo_skill", "atomic_only"):
            # No graph was logged, so only the empty trajectory validates.
            if prediction.trajectory:
                violations.append(f"trajectory must be empty in {mode} mode")
        elif prediction.trajectory:
            bad_step = validate_trajectory(graph, prediction.trajectory)
            if bad_step is not None:
                violations.append(f"trajectory violates the plan graph at step {bad_step}")
        return violations

    def infer(
        self,
        image_ref: str,
        mode: str = "full",
        seed: int = 0,
        query_id: str | None = None,
        temperature: float | None = None,
        rollout_index: int = 0,
        log: bool = True,
    ) -> tuple[GeoPrediction, InferenceRecord]:
        """Run the four-stage pipeline for one query.

        A grounding violation triggers exactly one corrective re-prompt;
        a second violation surfaces as GroundingError.
        """
        if mode not in ABLATION_MODES:
            raise ValueError(f"unknown ablation mode: {mode!r}")
        started = self.clock()
        if query_id is None:
            digest = hashlib.sha256(image_ref.encode("utf-8")).hexdigest()[:12]
            query_id = f"q-{digest}"
        temp = self.config.inference.main_temperature if temperature is None else temperature

        scene = self.parse_scene(image_ref)
        retrieved, candidate_count = self._retrieve(scene, mode, seed)
        graph, plan = self._compose(retrieved, mode, seed)

        messages = self._reasoning_messages(image_ref, scene, retrieved, plan, mode)
        request = ModelRequest(
            messages=messages,
            temperature=temp,
            response_format=ResponseFormat.STRICT_JSON,
            model_alias=ModelAlias.ONLINE_INFERENCE,
        )
        response = self.gateway.complete(request)
        prediction, violations = self._parse_and_validate(
            response.text, scene, retrieved, graph, mode
        )
        grounding_flags = tuple(violations)
        if violations:
            corrective = load_template("corrective").format(
                violations="\n".join(f"- {v}" for v in violations)
            )
            retry = replace(
                request,
                messages=messages
                + (Message("assistant", response.text), Message("user", corrective)),
            )
            response = self.gateway.complete(retry)
            prediction, violations = self._parse_and_validate(
                response.text, scene, retrieved, graph, mode
            )
            if violations:
                raise GroundingError(violations)
        assert prediction is not None

        record = InferenceRecord(
            query_id=query_id,
            mode=mode,
            seed=seed,
            prediction=prediction,
            retrieved_skill_ids=tuple(retrieved),
            candidate_count=candidate_count,
            graph=graph_dump(graph),
            rollouts=(RolloutTranscript(rollout_index, temp, prediction),),
            scene=scene,
            template_hashes={
                "scene_parse": template_hash("scene_parse"),
                "reasoning": template_hash("reasoning"),
                "corrective": template_hash("corrective"),
            },
            started_at=started,
            finished_at=self.clock(),
            grounding_flags=grounding_flags,
        )
        if log and self.record_writer is not None:
            self.record_writer.append(record)
        return prediction, record

    def _parse_and_validate(
        self,
        text: str,
        scene: SceneParse,
        retrieved: list[str],
        graph: TaskSkillGraph,
        mode: str,
    ) -> tuple[GeoPrediction | None, list[str]]:
        try:
            prediction = prediction_from_dict(json.loads(text))
        except (KeyError, TypeError, ValueError) as exc:
            return None, [f"prediction not parseable: {exc}"]
        return prediction, self._validate(prediction, scene, retrieved, graph, mode)

    def vote(
        self,
        image_ref: str,
        n_rollouts: int,
        mode: str = "full",
        seed: int = 0,
        query_id: str | None = None,
    ) -> tuple[GeoPrediction, InferenceRecord]:
        """Aggregate n independent rollouts: majority country, medoid
        coordinate among agreeing rollouts, deduplicated union of their
        claims. With n_rollouts=1 the output is identical to infer."""
        if n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")
        inf = self.config.inference
        rollouts: list[tuple[InferenceRecord, GeoPrediction]] = []
        causes: list[str] = []
        for i in range(n_rollouts):
            temp = inf.vote_base_temperature + inf.vote_temperature_step * i
            try:
                prediction, record = self.infer(
                    image_ref,
                    mode=mode,
                    seed=seed + i,
                    query_id=query_id,
                    temperature=temp,
                    rollout_index=i,
                    log=False,
                )
                rollouts.append((record, prediction))
            except Exception as exc:  # collected; raised only if all fail
                causes.append(f"rollout {i}: {exc}")
        if not rollouts:
            raise VoteError(causes)

        final, medoid_record = _aggregate_rollouts(rollouts)
        transcripts = tuple(
            RolloutTranscript(r.rollouts[0].index, r.rollouts[0].temperature, p)
            for r, p in rollouts
        )
        record = replace(
            medoid_record,
            prediction=final,
            rollouts=transcripts,
            finished_at=self.clock(),
        )
        if self.record_writer is not None:
            self.record_writer.append(record)
        return final, record

    def run_ablation_mode(
        self,
        mode: str,
        image_ref: str,
        n_rollouts: int = 1,
        seed: int = 0,
        query_id: str | None = None,
    ) -> tuple[GeoPrediction, InferenceRecord]:
        """Run a query under one of the ablation switches: full inference,
        no skills, random skills, shuffled graph order, or atomic-only."""
        if n_rollouts == 1:
            return self.infer(image_ref, mode=mode, seed=seed, query_id=query_id)
        return self.vote(image_ref, n_rollouts, mode=mode, seed=seed, query_id=query_id)


def _aggregate_rollouts(
    rollouts: Sequence[tuple[InferenceRecord, GeoPrediction]],
) -> tuple[GeoPrediction, InferenceRecord]:
    counts: dict[str, int] = {}
    for _r, p in rollouts:
        counts[p.country] = counts.get(p.country, 0) + 1
    best_count = max(counts.values())
    contenders = [c for c, n in counts.items() if n == best_count]
    if len(contenders) > 1:
        # Tie: highest mean confidence, then ISO-2 ascending.
        def mean_conf(country: str) -> float:
            vals = [p.confidence for _r, p in rollouts if p.country == country]
            return sum(vals) / len(vals)

        contenders.sort(key=lambda c: (-mean_conf(c), c))
    majority = contenders[0]

    agreeing = [(r, p) for r, p in rollouts if p.country == majority]
    medoid_pos = 0
    best_total = None
    for i, (_r, p) in enumerate(agreeing):
        total = sum(haversine_km(p.coordinate, q.coordinate) for _s, q in agreeing)
        if best_total is None or total < best_total:
            best_total = total
            medoid_pos = i
    medoid_record, medoid_prediction = agreeing[medoid_pos]

    seen: dict[tuple, GroundedClaim] = {}
    for _r, p in agreeing:
        for claim in p.claims:
            key = (claim.text, claim.evidence_refs, claim.skill_refs)
            seen.setdefault(key, claim)
    confidence = sum(p.confidence for _r, p in agreeing) / len(agreeing)

    final = GeoPrediction(
        country=majority,
        region=medoid_prediction.region,
        coordinate=medoid_prediction.coordinate,
        confidence=confidence,
        claims=tuple(seen.values()),
        trajectory=medoid_prediction.trajectory,
    )
    return final, medoid_record
