"""Acceptance suite: one test per criterion, each printing a PASS line with
its runtime against the stated budget. Run with `pytest tests/test_acceptance.py -v -s`.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from geoskill.evolution import EvolutionConfig, evolve_step, update_confidence
from geoskill.expert_compiler import compile_library, parse_trajectory_records
from geoskill.geo_metrics import (
    EARTH_RADIUS_KM,
    evolution_report,
    faithfulness_prf,
    greedy_match,
    haversine_km,
    threshold_accuracy,
)
from geoskill.graph_composer import compose_graph, order_plan, validate_trajectory
from geoskill.inference_engine import (
    GeoPrediction,
    GroundedClaim,
    validate_grounding,
)
from geoskill.model_gateway import Gateway, MockBackend, ModelAlias
from geoskill.retrieval import (
    HashedNgramEmbedder,
    WeightedQuery,
    bm25_score,
    build_index,
    hybrid_retrieve,
    hybrid_scores,
    skill_text,
    tokenize,
)
from geoskill.skill_model import (
    GeoCoordinate,
    RelationPrior,
    SkillLibrary,
    Stage,
    load_library,
    make_skill,
    save_library,
)

from conftest import (
    ANDORRA_DIR,
    EXPERT_DIR,
    EnumeratedProvider,
    FixedClock,
    RecordingBackend,
    make_andorra_engine,
    make_record,
)
from test_retrieval import oracle_bm25, oracle_mmr


@contextmanager
def criterion(number: int, budget_s: float, description: str):
    start = time.monotonic()
    yield
    elapsed = time.monotonic() - start
    assert elapsed < budget_s, (
        f"criterion {number} took {elapsed:.2f}s, over its {budget_s:.0f}s budget"
    )
    print(f"\nACCEPTANCE {number:02d} PASS in {elapsed:5.2f}s (budget {budget_s:3.0f}s): {description}")


# -- 1: expert compilation determinism -----------------------------------------

def test_criterion_01_compile_determinism(tmp_path, expert_manifest):
    with criterion(1, 10.0, "expert compilation is deterministic and manifest-sized"):
        records, diagnostics = parse_trajectory_records(EXPERT_DIR / "trajectories.jsonl")
        assert diagnostics == []
        first_dir = save_library(compile_library(records), tmp_path / "one")
        second_dir = save_library(compile_library(records), tmp_path / "two")
        for name in ("skills.jsonl", "relations.jsonl", "failures.jsonl"):
            assert (first_dir / name).read_bytes() == (second_dir / name).read_bytes()
        library = load_library(tmp_path / "one")
        assert len(library.skills) == expert_manifest["skills"] == 1080


# -- 2: BM25 oracle equivalence ---------------------------------------------------

def test_criterion_02_bm25_oracle():
    with criterion(2, 30.0, "BM25 matches brute force on 50 random corpora"):
        rng = random.Random(20_260_808)
        vocabulary = [f"cue{i}" for i in range(40)]
        for _ in range(50):
            n_docs = rng.randint(1, 32)
            texts = [
                " ".join(rng.choices(vocabulary, k=rng.randint(1, 14)))
                for _ in range(n_docs)
            ]
            skills = {}
            for i, text in enumerate(texts):
                skill = make_skill(text, f"h{i}", 0.5)
                skills[skill.id] = skill
            library = SkillLibrary(version=0, skills=skills)
            index = build_index(library, HashedNgramEmbedder(16))
            docs = [tokenize(skill_text(library.skills[sid])) for sid in index.ids]
            query = rng.choices(vocabulary, k=rng.randint(1, 6))
            for i, sid in enumerate(index.ids):
                expected = oracle_bm25(docs, query, i)
                got = bm25_score(index, query, sid)
                if expected == 0.0:
                    assert got == 0.0
                else:
                    assert abs(got - expected) / abs(expected) < 1e-9


# -- 3: MMR retrieval oracle ---------------------------------------------------------

def test_criterion_03_mmr_oracle():
    with criterion(3, 30.0, "hybrid retrieval equals the greedy-MMR oracle trace"):
        rng = random.Random(31_337)
        vocabulary = ["pole", "kerb", "sign", "plate", "soil", "palm", "snow", "stucco", "tile"]
        for trial in range(25):
            texts = [
                f"skill {trial}-{i} " + " ".join(rng.choices(vocabulary, k=4))
                for i in range(10)
            ]
            skills = {}
            for i, text in enumerate(texts):
                skill = make_skill(text, f"h{trial}-{i}", 0.5)
                skills[skill.id] = skill
            library = SkillLibrary(version=0, skills=skills)
            index = build_index(library, HashedNgramEmbedder(64))
            query = WeightedQuery(parts=((" ".join(rng.choices(vocabulary, k=3)), 1.0),))
            scores = hybrid_scores(index, query)
            embeddings = {sid: index.embeddings[index.row(sid)] for sid in index.ids}
            for k in (3, 5, 7):
                lam = rng.choice([0.3, 0.5, 0.7, 0.9])
                candidates = sorted(
                    scores.items(), key=lambda kv: (-kv[1], kv[0])
                )
                expected = oracle_mmr(candidates, embeddings, lam, k)
                got = hybrid_retrieve(
                    index, query, k=k, score_threshold=-1.0, diversity_lambda=lam
                )
                assert got == expected
                top_k = candidates[:k]
                pure = hybrid_retrieve(
                    index, query, k=k, score_threshold=-1.0, diversity_lambda=1.0
                )
                assert pure == top_k


# -- 4: graph invariants ----------------------------------------------------------------

def test_criterion_04_graph_invariants():
    with criterion(4, 10.0, "composed graphs are stage-monotone DAGs with verified plans"):
        rng = random.Random(404)
        stages = [Stage.GLOBAL_REGION, Stage.COUNTRY, Stage.LOCAL]
        codes = ["FR", "DE", "IT", "ES", "PT", "AD", "JP", "BR"]
        tags = ["alps", "pyrenees", "iberia", "balkans", "sahara"]
        for trial in range(200):
            n = rng.randint(1, 12)
            skills = [
                make_skill(
                    f"g4 {trial} rule {i}",
                    f"g4 {trial} heuristic {i}",
                    rng.random(),
                    countries=rng.sample(codes, rng.randint(0, 2)),
                    regions=rng.sample(tags, rng.randint(0, 2)),
                    stage=rng.choice(stages),
                )
                for i in range(n)
            ]
            priors = []
            for _ in range(rng.randint(0, 15)):
                if n < 2:
                    break
                a, b = rng.sample(skills, 2)
                priors.append(
                    RelationPrior(
                        a.id, b.id, support=rng.randint(0, 5), failure=rng.randint(0, 3)
                    )
                )
            graph = compose_graph(skills, priors)
            for a, b in graph.edges:
                assert graph.stages[a].rank <= graph.stages[b].rank
                assert a in graph.stages and b in graph.stages
            plan = order_plan(graph)
            position = {sid: i for i, sid in enumerate(plan)}
            assert sorted(plan) == sorted(graph.nodes)
            assert all(position[a] < position[b] for a, b in graph.edges)


# -- 5: haversine -------------------------------------------------------------------------

def test_criterion_05_haversine():
    with criterion(5, 5.0, "haversine identity/antipodal/oracle plus metric properties"):
        point = GeoCoordinate(42.5, 1.53)
        assert haversine_km(point, point) == 0.0
        antipodal = haversine_km(GeoCoordinate(0, 0), GeoCoordinate(0, 180))
        assert antipodal == pytest.approx(20015.087, abs=0.01)

        paris, london = GeoCoordinate(48.8566, 2.3522), GeoCoordinate(51.5074, -0.1278)

        def law_of_cosines(a, b):
            lat1, lon1 = math.radians(a.lat_deg), math.radians(a.lon_deg)
            lat2, lon2 = math.radians(b.lat_deg), math.radians(b.lon_deg)
            cos_central = (
                math.sin(lat1) * math.sin(lat2)
                + math.cos(lat1) * math.cos(lat2) * math.cos(lon2 - lon1)
            )
            return EARTH_RADIUS_KM * math.acos(max(-1.0, min(1.0, cos_central)))

        assert haversine_km(paris, london) == pytest.approx(343.6, abs=0.5)
        assert haversine_km(paris, london) == pytest.approx(
            law_of_cosines(paris, london), abs=0.5
        )

        rng = random.Random(555)
        for _ in range(1000):
            a, b, c = (
                GeoCoordinate(rng.uniform(-90, 90), rng.uniform(-179.999, 180.0))
                for _ in range(3)
            )
            assert haversine_km(a, b) == pytest.approx(haversine_km(b, a), abs=1e-9)
            assert haversine_km(a, b) >= 0.0
            assert haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-6


# -- 6: threshold accuracy ------------------------------------------------------------------

def test_criterion_06_threshold_accuracy():
    with criterion(6, 1.0, "threshold accuracy exact counts and monotonicity"):
        report = threshold_accuracy([5, 30, 150, 900], thresholds=[10, 25, 200])
        assert report.accuracies == {10: 0.25, 25: 0.25, 200: 0.75}
        assert threshold_accuracy([25.0], thresholds=[25]).accuracies[25] == 1.0
        rng = random.Random(6)
        distances = [rng.uniform(0, 2500) for _ in range(500)]
        default_report = threshold_accuracy(distances)
        values = [default_report.accuracies[t] for t in (10.0, 25.0, 200.0, 750.0, 2000.0)]
        assert values == sorted(values)


# -- 7: faithfulness -----------------------------------------------------------------------

def test_criterion_07_faithfulness():
    with criterion(7, 10.0, "faithfulness P/R/F1 fixtures and assignment oracle"):
        provider = HashedNgramEmbedder(128)
        exact = faithfulness_prf(
            [["left-hand traffic", "catalan signage"]],
            [["left-hand traffic", "catalan signage"]],
            provider,
        )
        assert (exact.precision, exact.recall, exact.f1) == (1.0, 1.0, 1.0)

        half = faithfulness_prf(
            [["left-hand traffic"]],
            [["left-hand traffic", "catalan signage"]],
            provider,
        )
        assert half.precision == 1.0
        assert half.recall == 0.5
        assert half.f1 == pytest.approx(2 / 3)

        def oracle_max_matching(predicted, gold, threshold=0.80):
            from geoskill.geo_metrics import _pair_similarity

            sims = {
                (p, g): _pair_similarity(predicted[p], gold[g], provider)
                for p in range(len(predicted))
                for g in range(len(gold))
            }
            best = 0
            for r in range(min(len(predicted), len(gold)), 0, -1):
                found = False
                for chosen in itertools.combinations(range(len(predicted)), r):
                    for perm in itertools.permutations(range(len(gold)), r):
                        if all(sims[(p, g)] >= threshold for p, g in zip(chosen, perm)):
                            found = True
                            break
                    if found:
                        break
                if found:
                    best = r
                    break
            return best

        samples = [
            (
                ["left-hand traffic", "catalan signage", "stucco walls"],
                ["catalan signage", "left-hand traffic", "snow channels"],
            ),
            (["red soil", "palm trees"], ["palm trees", "red soil", "monsoon drains"]),
            (["wave road sign", "prairie field"], ["wave road sign"]),
            (["aaa", "bbb"], ["ccc", "ddd"]),
            (["gravel shoulder", "gravel shoulder twin"], ["gravel shoulder"]),
        ]
        deviations = []
        for predicted, gold in samples:
            greedy_tp = len(greedy_match(predicted, gold, provider))
            optimal_tp = oracle_max_matching(predicted, gold)
            deviations.append(optimal_tp - greedy_tp)
            assert greedy_tp * 2 >= optimal_tp
        print(f"\n  greedy-vs-optimal TP deviation per sample: {deviations}")
        assert max(deviations) <= 0, "greedy fell below the exhaustive optimum"


# -- 8: evolution algebra ---------------------------------------------------------------------

def test_criterion_08_evolution_algebra():
    with criterion(8, 60.0, "evolution invariants over 50 randomized record batches"):
        from geoskill.evolution import merge
        from geoskill.inference_engine import RecordGroundTruth
        from geoskill.skill_model import empty_library, library_upsert

        rng = random.Random(808)
        config = EvolutionConfig()
        provider = HashedNgramEmbedder(64)
        countries = ["AD", "FR", "ES", "JP", "BR", "KE"]

        for trial in range(50):
            skills = [
                make_skill(
                    f"t{trial} rule {i} {' '.join(rng.choices(['pole', 'sign', 'soil', 'palm'], k=3))}",
                    f"t{trial} heuristic {i}",
                    rng.uniform(0.2, 0.95),
                    countries=[rng.choice(countries)],
                )
                for i in range(rng.randint(8, 16))
            ]
            library = library_upsert(empty_library(), skills)
            ids = sorted(library.skills)

            records = []
            n_failures = 0
            for q in range(rng.randint(4, 12)):
                failing = rng.random() < 0.5
                truth_country = rng.choice(countries)
                truth = RecordGroundTruth(
                    GeoCoordinate(rng.uniform(-60, 60), rng.uniform(-150, 150)),
                    truth_country,
                )
                records.append(
                    make_record(
                        query_id=f"t{trial}-q{q}",
                        country=rng.choice(countries),
                        lat=truth.coordinate.lat_deg + (15.0 if failing else 0.01),
                        lon=truth.coordinate.lon_deg,
                        trajectory=rng.sample(ids, min(len(ids), rng.randint(0, 3))),
                        retrieved=rng.sample(ids, min(len(ids), 5)),
                        outcome=1 if failing else 0,
                        ground_truth=truth,
                    )
                )
                n_failures += failing

            n_batches = -(-n_failures // config.batch_size) if n_failures else 0
            responses = []
            for b in range(n_batches):
                candidates = [
                    {
                        "instruction": f"t{trial} corrective {b}-{j} {rng.choice(['kerb', 'tile'])}",
                        "heuristic": f"t{trial} corrective heuristic {b}-{j}",
                        "confidence": round(rng.uniform(0.1, 0.9), 2),
                    }
                    for j in range(rng.randint(0, 4))
                ]
                responses.append(json.dumps({"skills": candidates}))
            gateway = Gateway(
                backends={
                    ModelAlias.OFFLINE_REFINEMENT: MockBackend(
                        {"mode": "ordinal", "responses": responses}
                    )
                },
                sleep=lambda _s: None,
            )

            outcome = evolve_step(library, records, config, gateway, provider)
            result = outcome.library
            report = outcome.report

            # No surviving skill below the prune threshold.
            for skill in result.skills.values():
                assert (
                    update_confidence(skill, config.confidence_pseudo_count)
                    >= config.prune_threshold
                )
            # No surviving relation violates the failure-rate rule.
            for prior in result.relation_priors:
                observations = prior.support + prior.failure
                if observations >= config.relation_min_observations:
                    assert prior.failure / observations < config.relation_failure_rate
                assert prior.from_id in result.skills and prior.to_id in result.skills
            # No surviving pair at or above the merge similarity (exhaustive scan).
            vectors = np.stack(
                [
                    np.asarray(provider.embed(skill_text(s)))
                    for _sid, s in sorted(result.skills.items())
                ]
            )
            sims = vectors @ vectors.T
            np.fill_diagonal(sims, 0.0)
            assert float(sims.max()) < config.merge_similarity
            # Report arithmetic balances exactly.
            assert (
                report.skills_before + report.added - report.merged_away - report.pruned
                == report.skills_after
                == len(result.skills)
            )
            assert result.version == library.version + 1

            # Counter conservation through merge, checked on the merge
            # operator directly with a forced duplicate cluster.
            dup_a = make_skill(f"t{trial} dup", "same heuristic", 0.6)
            dup_b = make_skill(f"t{trial} dup!", "same heuristic", 0.4)
            base = library_upsert(empty_library(), skills[:4] + [dup_a, dup_b])
            from dataclasses import replace as dc_replace

            base_skills = dict(base.skills)
            base_skills[dup_a.id] = dc_replace(base_skills[dup_a.id], success=2, failure=1)
            base_skills[dup_b.id] = dc_replace(base_skills[dup_b.id], success=4, failure=3)
            base = dc_replace(base, skills=base_skills)
            grouped = EnumeratedProvider(
                [skill_text(s) for s in base.skills.values()],
                groups=[[skill_text(dup_a), skill_text(dup_b)]],
            )
            merged_lib, merge_pairs = merge(base, grouped, config.merge_similarity)
            assert len(merge_pairs) == 1
            assert sum(s.success for s in merged_lib.skills.values()) == sum(
                s.success for s in base.skills.values()
            )
            assert sum(s.failure for s in merged_lib.skills.values()) == sum(
                s.failure for s in base.skills.values()
            )


# -- 9: evolution-dynamics replay and atomic versioning ------------------------------------------

def _synth_payload(tag: str, count: int) -> tuple[str, list]:
    items = [
        {
            "instruction": f"corrective rule {tag}-{i:03d}",
            "heuristic": f"corrective heuristic {tag}-{i:03d}",
            "confidence": 0.5,
        }
        for i in range(count)
    ]
    skills = [
        make_skill(item["instruction"], item["heuristic"], 0.5) for item in items
    ]
    return json.dumps({"skills": items}), skills


def _replay_records(tag: str, n: int, victim_ids=(), start_at: int = 0) -> list:
    from geoskill.inference_engine import RecordGroundTruth

    truth = RecordGroundTruth(GeoCoordinate(42.5, 1.53), "AD")
    records = []
    for i in range(start_at, start_at + n):
        records.append(
            make_record(
                query_id=f"replay-{tag}-{i}",
                country="FR",
                lat=46.0,
                lon=2.0,
                trajectory=tuple(victim_ids),
                outcome=1,
                ground_truth=truth,
            )
        )
    return records


def test_criterion_09_evolution_dynamics_replay(tmp_path, expert_manifest):
    with criterion(9, 30.0, "library sizes replay 1080 -> 1350 -> 1510 -> 1425 atomically"):
        records, _ = parse_trajectory_records(EXPERT_DIR / "trajectories.jsonl")
        library = compile_library(records)
        assert len(library.skills) == 1080

        reply_1, synth_1 = _synth_payload("s1", 270)
        reply_2, synth_2 = _synth_payload("s2", 160)
        reply_3, synth_3 = _synth_payload("s3", 30)
        all_texts = [skill_text(s) for s in library.skills.values()]
        all_texts += [skill_text(s) for s in synth_1 + synth_2 + synth_3]
        merge_groups = [
            [skill_text(synth_2[2 * j]), skill_text(synth_2[2 * j + 1])] for j in range(40)
        ]
        victims = [s.id for s in synth_1[:75]]

        config = EvolutionConfig(max_synthesized_per_batch=300)

        def run_step(lib, reply, batch_records, groups):
            gateway = Gateway(
                backends={
                    ModelAlias.OFFLINE_REFINEMENT: MockBackend(
                        {"mode": "ordinal", "responses": [reply]}
                    )
                },
                sleep=lambda _s: None,
            )
            provider = EnumeratedProvider(all_texts, groups=groups)
            return evolve_step(lib, batch_records, config, gateway, provider)

        out_1 = run_step(library, reply_1, _replay_records("t1", 20), groups=())
        assert len(out_1.library.skills) == 1350
        assert out_1.library.version == 1

        out_2 = run_step(out_1.library, reply_2, _replay_records("t2", 20), groups=())
        assert len(out_2.library.skills) == 1510
        assert out_2.library.version == 2

        step3_records = _replay_records("t3v", 4, victim_ids=victims) + _replay_records(
            "t3p", 16, start_at=4
        )
        out_3 = run_step(out_2.library, reply_3, step3_records, groups=merge_groups)
        assert len(out_3.library.skills) == 1425
        assert out_3.library.version == 3
        assert out_3.report.merged_away == 40
        assert out_3.report.pruned == 75

        history = [o.report.to_dict() for o in (out_1, out_2, out_3)]
        rows = evolution_report(history)
        assert [r["skills_before"] for r in rows] == [1080, 1350, 1510]
        assert [r["skills_after"] for r in rows] == [1350, 1510, 1425]

        # Atomic version transitions: hard-kill the writer mid-save at every
        # file boundary; the prior version must stay the loadable head.
        library_dir = tmp_path / "crash-lib"
        save_library(out_1.library, library_dir)
        helper = Path(__file__).parent / "crash_helper.py"
        for writes_allowed in (0, 1, 2, 3):
            result = subprocess.run(
                [sys.executable, str(helper), str(library_dir), str(writes_allowed)],
                capture_output=True,
            )
            assert result.returncode == 9, result.stderr.decode()
            survivor = load_library(library_dir)
            assert survivor.version == 1
            assert len(survivor.skills) == 1350
        result = subprocess.run(
            [sys.executable, str(helper), str(library_dir), "10"], capture_output=True
        )
        assert result.returncode == 0, result.stderr.decode()
        assert load_library(library_dir).version == 2


# -- 10: end-to-end mocked inference -----------------------------------------------------------

def test_criterion_10_end_to_end_andorra(andorra_meta):
    with criterion(10, 10.0, "offline Andorra pipeline: vote -> AD, grounded, deterministic"):
        def run():
            engine = make_andorra_engine("script_vote.json", clock=FixedClock())
            return engine.vote("fixture://andorra.jpg", n_rollouts=3, seed=1)

        prediction, record = run()
        assert prediction.country == "AD"
        assert validate_grounding(prediction, record.scene, record.retrieved_skill_ids) == []
        assert len(record.graph["nodes"]) == 12 and len(record.graph["edges"]) == 53

        from geoskill.graph_composer import TaskSkillGraph

        stages = {n["id"]: Stage(n["stage"]) for n in record.graph["nodes"]}
        graph = TaskSkillGraph(
            nodes=tuple(sorted(stages)),
            edges=frozenset((a, b) for a, b in record.graph["edges"]),
            stages=stages,
            confidences={sid: 0.5 for sid in stages},
        )
        assert validate_trajectory(graph, prediction.trajectory) is None

        distractor = GroundedClaim(
            "White stucco walls indicate a Greek island village",
            ("ocr_snippets[9]",),
            (record.retrieved_skill_ids[0],),
        )
        tampered = GeoPrediction(
            country=prediction.country,
            region=prediction.region,
            coordinate=prediction.coordinate,
            confidence=prediction.confidence,
            claims=prediction.claims + (distractor,),
            trajectory=prediction.trajectory,
        )
        violations = validate_grounding(tampered, record.scene, record.retrieved_skill_ids)
        assert len(violations) == 1 and "White stucco" in violations[0]

        rerun_prediction, rerun_record = run()
        assert json.dumps(rerun_record.to_dict(), sort_keys=True) == json.dumps(
            record.to_dict(), sort_keys=True
        )
        assert rerun_prediction == prediction


# -- 11: ablation plumbing -----------------------------------------------------------------------

def test_criterion_11_ablation_plumbing():
    with criterion(11, 10.0, "the four ablation modes differ structurally as specified"):
        def run(mode, script, seed=0):
            holder = {}

            def wrap(inner):
                recorder = RecordingBackend(inner)
                holder["backend"] = recorder
                return recorder

            engine = make_andorra_engine(script, backend_wrapper=wrap)
            _prediction, record = engine.infer("fixture://andorra.jpg", mode=mode, seed=seed)
            reasoning_prompt = holder["backend"].requests[1].messages[0].text
            return record, reasoning_prompt

        # wo_skill: no skill section at all; empty retrieval is legal.
        base = json.loads((ANDORRA_DIR / "script_single.json").read_text())
        scene_reply, full_reply = base["responses"]
        stripped = json.loads(full_reply)
        for claim in stripped["claims"]:
            claim["skills"] = []
        stripped["trajectory"] = []
        wo_script = _temp_script([scene_reply, json.dumps(stripped)])
        record, prompt = run("wo_skill", wo_script)
        assert "Reasoning plan" not in prompt and "Available skills" not in prompt
        assert record.retrieved_skill_ids == ()
        assert record.graph == {"nodes": [], "edges": []}

        # random_skill: seeded uniform draw, identical across runs.
        record_a, prompt_a = run("random_skill", "script_single.json", seed=11)
        record_b, _prompt_b = run("random_skill", "script_single.json", seed=11)
        assert record_a.retrieved_skill_ids == record_b.retrieved_skill_ids
        assert "Reasoning plan" in prompt_a

        # shuffled_order: same node set, different edges, same count.
        no_traj = json.loads(full_reply)
        no_traj["trajectory"] = []
        shuffle_script = _temp_script([scene_reply, json.dumps(no_traj)])
        full_record, _ = run("full", shuffle_script, seed=4)
        shuffled_record, _ = run("shuffled_order", shuffle_script, seed=4)
        assert shuffled_record.graph["nodes"] == full_record.graph["nodes"]
        assert shuffled_record.graph["edges"] != full_record.graph["edges"]
        assert len(shuffled_record.graph["edges"]) == len(full_record.graph["edges"])

        # atomic_only: unordered skill set, no graph in the prompt or record.
        record, prompt = run("atomic_only", shuffle_script)
        assert "Available skills (unordered)" in prompt
        assert "Reasoning plan" not in prompt
        assert record.graph == {"nodes": [], "edges": []}
        assert record.prediction.trajectory == ()
        assert len(record.retrieved_skill_ids) == 12

        for path in _TEMP_SCRIPTS:
            path.unlink(missing_ok=True)


_TEMP_SCRIPTS: list[Path] = []


def _temp_script(responses: list) -> Path:
    import tempfile

    tmp = tempfile.NamedTemporaryFile("w", suffix=".json", delete=False)
    json.dump({"mode": "ordinal", "responses": responses}, tmp)
    tmp.close()
    path = Path(tmp.name)
    _TEMP_SCRIPTS.append(path)
    return path
