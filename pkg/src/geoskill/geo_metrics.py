"""Evaluation mathematics: great-circle distance, threshold accuracy,
reasoning-faithfulness precision/recall/F1, and evolution-dynamics tables.

Earth radius is fixed at R = 6371.0 km and threshold boundaries are
inclusive; both choices shift borderline samples, so they are part of the
contract rather than tunables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .skill_model import GeoCoordinate

EARTH_RADIUS_KM = 6371.0
DEFAULT_THRESHOLDS_KM = (10.0, 25.0, 200.0, 750.0, 2000.0)
DEFAULT_MATCH_THRESHOLD = 0.80


def haversine_km(a: GeoCoordinate, b: GeoCoordinate) -> float:
    """Great-circle distance in km between two coordinates."""
    lat1, lon1 = math.radians(a.lat_deg), math.radians(a.lon_deg)
    lat2, lon2 = math.radians(b.lat_deg), math.radians(b.lon_deg)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class ThresholdReport:
    accuracies: Mapping[float, float]  # threshold km -> fraction within
    sample_count: int
    mean_distance_km: float
    empty_input: bool = False

    def to_dict(self) -> dict:
        return {
            "accuracies": {str(k): v for k, v in self.accuracies.items()},
            "sample_count": self.sample_count,
            "mean_distance_km": self.mean_distance_km,
            "empty_input": self.empty_input,
        }


def threshold_accuracy(
    distances: Sequence[float],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS_KM,
) -> ThresholdReport:
    """Fraction of distances within each threshold (inclusive boundary)."""
    if any(d < 0 for d in distances):
        raise ValueError("distances must be non-negative")
    if not distances:
        return ThresholdReport(
            accuracies={t: 0.0 for t in thresholds},
            sample_count=0,
            mean_distance_km=0.0,
            empty_input=True,
        )
    n = len(distances)
    accuracies = {t: sum(1 for d in distances if d <= t) / n for t in thresholds}
    return ThresholdReport(
        accuracies=accuracies,
        sample_count=n,
        mean_distance_km=sum(distances) / n,
    )


@dataclass(frozen=True)
class FaithfulnessReport:
    precision: float  # micro
    recall: float  # micro
    f1: float  # micro, harmonic mean of the above
    macro_f1: float  # mean of per-sample F1
    per_sample_f1: tuple[float, ...]
    match_threshold: float

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
            "per_sample_f1": list(self.per_sample_f1),
            "match_threshold": self.match_threshold,
        }


def _pair_similarity(predicted: str, gold: str, provider) -> float:
    if predicted.strip() == gold.strip():
        return 1.0
    pv = np.asarray(provider.embed(predicted), dtype=np.float64)
    gv = np.asarray(provider.embed(gold), dtype=np.float64)
    return float(pv @ gv)


def greedy_match(
    predicted: Sequence[str],
    gold: Sequence[str],
    provider,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> list[tuple[int, int, float]]:
    """One-to-one matching by descending similarity; a pair matches iff its
    similarity is >= the threshold. Ties break by (predicted, gold) index."""
    pairs = []
    for i, p in enumerate(predicted):
        for j, g in enumerate(gold):
            sim = _pair_similarity(p, g, provider)
            if sim >= match_threshold:
                pairs.append((sim, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    matches = []
    for sim, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((i, j, sim))
    return matches


def faithfulness_prf(
    predicted_per_sample: Sequence[Sequence[str]],
    gold_per_sample: Sequence[Sequence[str]],
    provider,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> FaithfulnessReport:
    """Micro-aggregated P/R/F1 over samples plus the per-sample F1 list.

    TP are greedy one-to-one matches at the similarity threshold, FP the
    unmatched predictions, FN the unmatched gold items.
    """
    if len(predicted_per_sample) != len(gold_per_sample):
        raise ValueError("predicted and gold sample counts differ")
    tp = fp = fn = 0
    per_sample: list[float] = []
    for predicted, gold in zip(predicted_per_sample, gold_per_sample):
        matches = greedy_match(predicted, gold, provider, match_threshold)
        s_tp = len(matches)
        s_fp = len(predicted) - s_tp
        s_fn = len(gold) - s_tp
        tp += s_tp
        fp += s_fp
        fn += s_fn
        s_p = s_tp / (s_tp + s_fp) if s_tp + s_fp else 0.0
        s_r = s_tp / (s_tp + s_fn) if s_tp + s_fn else 0.0
        per_sample.append(2 * s_p * s_r / (s_p + s_r) if s_p + s_r else 0.0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    macro = sum(per_sample) / len(per_sample) if per_sample else 0.0
    return FaithfulnessReport(
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=macro,
        per_sample_f1=tuple(per_sample),
        match_threshold=match_threshold,
    )


class EvolutionHistoryError(ValueError):
    """Raised when an evolution history's bookkeeping does not balance."""


def evolution_report(history: Sequence[Mapping]) -> list[dict]:
    """Tabulate per-iteration library sizes and operator deltas, checking
    that each row's arithmetic balances exactly."""
    if not history:
        raise ValueError("history must be non-empty")
    rows = []
    for i, entry in enumerate(history, start=1):
        before = entry["skills_before"]
        after = entry["skills_after"]
        added = entry["added"]
        merged = entry["merged_away"]
        pruned = entry["pruned"]
        if before + added - merged - pruned != after:
            raise EvolutionHistoryError(
                f"iteration {i}: size arithmetic does not balance "
                f"({before} + {added} - {merged} - {pruned} != {after})"
            )
        rows.append(
            {
                "iteration": i,
                "version": entry.get("version"),
                "skills_before": before,
                "added": added,
                "merged_away": merged,
                "pruned": pruned,
                "skills_after": after,
                "delta": after - before,
            }
        )
    return rows
