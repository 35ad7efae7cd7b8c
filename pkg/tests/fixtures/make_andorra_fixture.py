"""Generate the Andorra case-study fixture: a 12-skill library whose
composed task graph has exactly 12 nodes and 53 edges, plus the scripted
mock responses that drive the end-to-end offline pipeline.

Deterministic; re-running reproduces the committed files byte-for-byte.
"""

from __future__ import annotations

import json
from pathlib import Path

from geoskill.graph_composer import compose_graph
from geoskill.skill_model import (
    Provenance,
    ProvenanceKind,
    RelationPrior,
    SkillLibrary,
    Stage,
    make_skill,
    save_library,
)

HERE = Path(__file__).parent
OUT_DIR = HERE / "andorra"

_EXPERT = Provenance(ProvenanceKind.EXPERT, "andorra-case")


def build_skills():
    def sk(instruction, heuristic, confidence, stage, countries=(), regions=()):
        return make_skill(
            instruction,
            heuristic,
            confidence,
            countries=countries,
            regions=regions,
            stage=stage,
            provenance=_EXPERT,
        )

    globals_ = [
        sk(
            "Read the overall terrain profile before any country guess",
            "Steep forested mountain valleys with tight switchbacks suggest a high European range, not lowland plains",
            0.8,
            Stage.GLOBAL_REGION,
            regions=("pyrenees",),
        ),
        sk(
            "Judge the climate band from vegetation density and light",
            "Mixed conifer and broadleaf cover at altitude indicates a temperate montane zone",
            0.7,
            Stage.GLOBAL_REGION,
        ),
        sk(
            "Use script and language family as a coarse filter",
            "Romance-language signage narrows the search to southwestern Europe",
            0.75,
            Stage.GLOBAL_REGION,
        ),
    ]
    countries_ = [
        sk(
            "Match Catalan-only public signage against candidate states",
            "Catalan as the sole official signage language is unique to Andorra",
            0.9,
            Stage.COUNTRY,
            countries=("AD",),
            regions=("pyrenees",),
        ),
        sk(
            "Check the license plate shape and crest",
            "Small white plates with a national crest and no EU band fit Andorra",
            0.8,
            Stage.COUNTRY,
            countries=("AD",),
            regions=("pyrenees",),
        ),
        sk(
            "Look for duty-free retail density in mountain towns",
            "Clusters of perfume and electronics superstores on a mountain road indicate Andorra",
            0.75,
            Stage.COUNTRY,
            countries=("AD",),
            regions=("pyrenees",),
        ),
        sk(
            "Check road identifiers beginning with CG",
            "Carretera General numbering marks the Andorran trunk network",
            0.85,
            Stage.COUNTRY,
            countries=("AD",),
            regions=("pyrenees",),
        ),
        sk(
            "Cross-check ski infrastructure near urban cores",
            "Ski lifts rising directly above dense apartment blocks match Andorran valley towns",
            0.7,
            Stage.COUNTRY,
            countries=("AD",),
            regions=("pyrenees",),
        ),
    ]
    locals_ = [
        sk(
            "Resolve the street from Cami-prefixed signs",
            "Cami street signs mark minor mountain lanes in Catalan-speaking Pyrenean towns",
            0.8,
            Stage.LOCAL,
            regions=("pyrenees", "catalonia"),
        ),
        sk(
            "Use stone-and-stucco walls with wooden balconies",
            "Granite base walls under dark wooden balconies are typical of Pyrenean valley parishes",
            0.7,
            Stage.LOCAL,
            regions=("pyrenees", "catalonia"),
        ),
        sk(
            "Follow roadside water channels",
            "Concrete snowmelt channels along the kerb appear on steep Pyrenean lanes",
            0.65,
            Stage.LOCAL,
            regions=("pyrenees",),
        ),
        sk(
            "Read parish boundary plaques",
            "Parish name plaques in Catalan pinpoint the commune within a Pyrenean valley",
            0.75,
            Stage.LOCAL,
            regions=("pyrenees", "catalonia"),
        ),
    ]
    return globals_, countries_, locals_


SCENE_RESPONSE = {
    "script_language_patterns": ["catalan", "romance"],
    "driving_side": "right",
    "road_marking_style": "white edge lines with a yellow center line on a mountain road",
    "pole_signage": "european square chevrons on galvanized posts",
    "vegetation_climate": "steep coniferous slopes with late snow patches",
    "built_environment": "stone and stucco walls with dark wooden balconies",
    "ocr_snippets": ["Camí de la Llobatera", "Ctra. general"],
}


def reasoning_response(g3, c1, c2, l1, l2, lat, lon, confidence):
    return {
        "country": "AD",
        "region": "Camí de la Llobatera",
        "lat": lat,
        "lon": lon,
        "confidence": confidence,
        "claims": [
            {
                "claim": "Public signage is written in Catalan",
                "evidence": ["script_language_patterns", "ocr_snippets[0]"],
                "skills": [g3, c1],
            },
            {
                "claim": "The street sign uses the Cami prefix of Catalan-speaking Pyrenean lanes",
                "evidence": ["ocr_snippets[0]"],
                "skills": [l1],
            },
            {
                "claim": "Stone-and-stucco walls with wooden balconies match Pyrenean valley parishes",
                "evidence": ["built_environment"],
                "skills": [l2],
            },
            {
                "claim": "Traffic drives on the right",
                "evidence": ["driving_side"],
                "skills": [c2],
            },
        ],
        "trajectory": [g3, c1, l1],
    }


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    globals_, countries_, locals_ = build_skills()
    skills = globals_ + countries_ + locals_
    c = countries_
    priors = (
        RelationPrior(c[0].id, c[1].id, support=1),
        RelationPrior(c[0].id, c[2].id, support=1),
        RelationPrior(c[0].id, c[3].id, support=1),
        RelationPrior(c[1].id, c[2].id, support=1),
        RelationPrior(c[1].id, c[3].id, support=1),
        RelationPrior(c[2].id, c[3].id, support=1),
    )
    library = SkillLibrary(
        version=0,
        skills={s.id: s for s in skills},
        relation_priors=priors,
    )
    graph = compose_graph(skills, priors)
    assert len(graph.nodes) == 12, len(graph.nodes)
    assert len(graph.edges) == 53, len(graph.edges)
    save_library(library, OUT_DIR / "library")

    g3 = globals_[2].id
    c1, c2 = countries_[0].id, countries_[1].id
    l1, l2 = locals_[0].id, locals_[1].id
    scene = json.dumps(SCENE_RESPONSE, ensure_ascii=False)

    def reply(lat, lon, confidence):
        return json.dumps(
            reasoning_response(g3, c1, c2, l1, l2, lat, lon, confidence), ensure_ascii=False
        )

    single = {"mode": "ordinal", "responses": [scene, reply(42.5562, 1.5332, 0.86)]}
    vote = {
        "mode": "ordinal",
        "responses": [
            scene,
            reply(42.5562, 1.5332, 0.86),
            scene,
            reply(42.5601, 1.5418, 0.82),
            scene,
            reply(42.5449, 1.521, 0.78),
        ],
    }
    france = dict(reasoning_response(g3, c1, c2, l1, l2, 42.7625, 1.6184, 0.9))
    france["country"] = "FR"
    france["region"] = "Ariege"
    vote_mixed = {
        "mode": "ordinal",
        "responses": [
            scene,
            reply(42.5562, 1.5332, 0.86),
            scene,
            reply(42.5601, 1.5418, 0.82),
            scene,
            json.dumps(france, ensure_ascii=False),
        ],
    }

    for name, payload in (
        ("script_single.json", single),
        ("script_vote.json", vote),
        ("script_vote_mixed.json", vote_mixed),
    ):
        (OUT_DIR / name).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

    meta = {
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "skill_ids": {
            "global": [s.id for s in globals_],
            "country": [s.id for s in countries_],
            "local": [s.id for s in locals_],
        },
        "trajectory": [g3, c1, l1],
        "vote_coordinates": [[42.5562, 1.5332], [42.5601, 1.5418], [42.5449, 1.521]],
    }
    (OUT_DIR / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"nodes": meta["nodes"], "edges": meta["edges"]}, indent=2))


if __name__ == "__main__":
    main()
