from __future__ import annotations

import itertools
import math
import random

import pytest

from geoskill.geo_metrics import (
    EARTH_RADIUS_KM,
    EvolutionHistoryError,
    evolution_report,
    faithfulness_prf,
    greedy_match,
    haversine_km,
    threshold_accuracy,
)
from geoskill.retrieval import HashedNgramEmbedder
from geoskill.skill_model import GeoCoordinate


def oracle_spherical_law_of_cosines(a: GeoCoordinate, b: GeoCoordinate) -> float:
    lat1, lon1 = math.radians(a.lat_deg), math.radians(a.lon_deg)
    lat2, lon2 = math.radians(b.lat_deg), math.radians(b.lon_deg)
    central = math.acos(
        max(
            -1.0,
            min(
                1.0,
                math.sin(lat1) * math.sin(lat2)
                + math.cos(lat1) * math.cos(lat2) * math.cos(lon2 - lon1),
            ),
        )
    )
    return EARTH_RADIUS_KM * central


# -- haversine -------------------------------------------------------------------

def test_haversine_identity():
    p = GeoCoordinate(42.5, 1.5)
    assert haversine_km(p, p) == 0.0


def test_haversine_antipodal():
    d = haversine_km(GeoCoordinate(0.0, 0.0), GeoCoordinate(0.0, 180.0))
    assert d == pytest.approx(math.pi * EARTH_RADIUS_KM, abs=0.01)
    assert d == pytest.approx(20015.087, abs=0.01)


def test_haversine_paris_london_vs_oracle():
    paris = GeoCoordinate(48.8566, 2.3522)
    london = GeoCoordinate(51.5074, -0.1278)
    d = haversine_km(paris, london)
    assert d == pytest.approx(343.6, abs=0.5)
    assert d == pytest.approx(oracle_spherical_law_of_cosines(paris, london), abs=0.5)


def test_haversine_metric_properties():
    rng = random.Random(7)
    for _ in range(200):
        pts = [
            GeoCoordinate(rng.uniform(-90, 90), rng.uniform(-179.9, 180.0))
            for _ in range(3)
        ]
        ab = haversine_km(pts[0], pts[1])
        ba = haversine_km(pts[1], pts[0])
        ac = haversine_km(pts[0], pts[2])
        cb = haversine_km(pts[2], pts[1])
        assert ab >= 0.0
        assert ab == pytest.approx(ba, abs=1e-9)
        assert ab <= ac + cb + 1e-6  # triangle inequality


# -- threshold accuracy --------------------------------------------------------------

def test_threshold_accuracy_hand_fixture():
    report = threshold_accuracy([5, 30, 150, 900], thresholds=[10, 25, 200])
    assert report.accuracies == {10: 0.25, 25: 0.25, 200: 0.75}
    assert report.sample_count == 4
    assert report.mean_distance_km == pytest.approx((5 + 30 + 150 + 900) / 4)


def test_threshold_accuracy_inclusive_boundary():
    report = threshold_accuracy([10.0], thresholds=[10])
    assert report.accuracies[10] == 1.0


def test_threshold_accuracy_defaults_and_monotone():
    rng = random.Random(3)
    distances = [rng.uniform(0, 3000) for _ in range(100)]
    report = threshold_accuracy(distances)
    values = [report.accuracies[t] for t in (10.0, 25.0, 200.0, 750.0, 2000.0)]
    assert values == sorted(values)
    assert all(0.0 <= v <= 1.0 for v in values)


def test_threshold_accuracy_empty_flagged():
    report = threshold_accuracy([])
    assert report.empty_input
    assert report.sample_count == 0
    assert all(v == 0.0 for v in report.accuracies.values())


def test_threshold_accuracy_rejects_negative():
    with pytest.raises(ValueError):
        threshold_accuracy([-1.0])


# -- faithfulness ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def provider():
    return HashedNgramEmbedder(128)


def test_faithfulness_exact_match(provider):
    chains = [["driving side is right", "catalan signage"], ["stucco walls"]]
    report = faithfulness_prf(chains, chains, provider)
    assert report.precision == 1.0
    assert report.recall == 1.0
    assert report.f1 == 1.0


def test_faithfulness_half_coverage(provider):
    gold = [["a clear cue", "a second cue"]]
    predicted = [["a clear cue"]]
    report = faithfulness_prf(predicted, gold, provider)
    assert report.precision == 1.0
    assert report.recall == 0.5
    assert report.f1 == pytest.approx(2 / 3)


def test_faithfulness_micro_f1_is_harmonic_mean(provider):
    predicted = [["alpha cue", "junk text"], ["beta cue"]]
    gold = [["alpha cue"], ["beta cue", "missing cue"]]
    report = faithfulness_prf(predicted, gold, provider)
    expected = 2 * report.precision * report.recall / (report.precision + report.recall)
    assert report.f1 == pytest.approx(expected)
    assert len(report.per_sample_f1) == 2


def test_faithfulness_spurious_never_raises_precision(provider):
    gold = [["left-hand traffic", "catalan signage"]]
    base = faithfulness_prf([["left-hand traffic"]], gold, provider)
    spurious = faithfulness_prf([["left-hand traffic", "zzz qqq xxw"]], gold, provider)
    assert spurious.precision <= base.precision
    assert spurious.recall == base.recall


def test_faithfulness_extra_match_never_lowers_recall(provider):
    gold = [["left-hand traffic", "catalan signage"]]
    partial = faithfulness_prf([["left-hand traffic"]], gold, provider)
    fuller = faithfulness_prf([["left-hand traffic", "catalan signage"]], gold, provider)
    assert fuller.recall >= partial.recall


def test_faithfulness_greedy_vs_exhaustive_assignment(provider):
    """Exhaustive-matching oracle on small samples: maximize matched pairs
    over all one-to-one assignments. Greedy must match it here; the margin
    is reported if it ever deviates."""

    def oracle_max_matching(predicted, gold, threshold=0.80):
        from geoskill.geo_metrics import _pair_similarity

        best = 0
        indices = range(len(gold))
        for r in range(min(len(predicted), len(gold)), -1, -1):
            for chosen_pred in itertools.combinations(range(len(predicted)), r):
                for perm in itertools.permutations(indices, r):
                    ok = all(
                        _pair_similarity(predicted[p], gold[g], provider) >= threshold
                        for p, g in zip(chosen_pred, perm)
                    )
                    if ok:
                        best = max(best, r)
                if best == r:
                    break
            if best:
                break
        return best

    samples = [
        (["left-hand traffic", "catalan signage", "stucco walls"],
         ["catalan signage", "left-hand traffic"]),
        (["red soil", "palm trees"], ["palm trees", "red soil", "monsoon drains"]),
        (["wave road sign"], ["wave road sign"]),
        (["a", "b"], ["c", "d"]),
    ]
    deviations = []
    for predicted, gold in samples:
        greedy_tp = len(greedy_match(predicted, gold, provider))
        optimal_tp = oracle_max_matching(predicted, gold)
        deviations.append(optimal_tp - greedy_tp)
        assert greedy_tp >= optimal_tp / 2  # maximal matching bound
    print(f"greedy-vs-optimal TP deviations: {deviations}")
    assert all(d == 0 for d in deviations)


# -- evolution table ---------------------------------------------------------------------

def _report_row(before, added, merged, pruned, version):
    return {
        "version": version,
        "skills_before": before,
        "added": added,
        "merged_away": merged,
        "pruned": pruned,
        "skills_after": before + added - merged - pruned,
    }


def test_evolution_report_sizes_sequence():
    history = [
        _report_row(1080, 270, 0, 0, 1),
        _report_row(1350, 160, 0, 0, 2),
        _report_row(1510, 30, 40, 75, 3),
    ]
    rows = evolution_report(history)
    assert [r["skills_before"] for r in rows] == [1080, 1350, 1510]
    assert [r["skills_after"] for r in rows] == [1350, 1510, 1425]


def test_evolution_report_single_row():
    rows = evolution_report([_report_row(10, 1, 0, 0, 1)])
    assert len(rows) == 1
    assert rows[0]["delta"] == 1


def test_evolution_report_tampered_named_error():
    bad = _report_row(100, 5, 0, 0, 1)
    bad["skills_after"] = 999
    with pytest.raises(EvolutionHistoryError) as exc:
        evolution_report([_report_row(10, 0, 0, 0, 1), bad])
    assert "iteration 2" in str(exc.value)


def test_evolution_report_empty_history_rejected():
    with pytest.raises(ValueError):
        evolution_report([])
