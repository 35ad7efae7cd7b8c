from __future__ import annotations

import itertools
import json
from pathlib import Path

import pytest

from geoskill.config import RunConfig, config_from_dict
from geoskill.inference_engine import InferenceEngine, RecordWriter
from geoskill.model_gateway import Gateway, MockBackend, ModelAlias
from geoskill.retrieval import HashedNgramEmbedder, build_index
from geoskill.skill_model import load_library

FIXTURES = Path(__file__).parent / "fixtures"
EXPERT_DIR = FIXTURES / "expert"
ANDORRA_DIR = FIXTURES / "andorra"


class FixedClock:
    """Deterministic clock for bit-reproducible records."""

    def __init__(self, start: float = 1000.0, step: float = 0.25):
        self._ticker = itertools.count()
        self.start = start
        self.step = step

    def __call__(self) -> float:
        return self.start + next(self._ticker) * self.step


class EnumeratedProvider:
    """Test embedding provider assigning each known text its own one-hot
    axis; texts listed in the same group share an axis (cosine 1), all other
    pairs are orthogonal. Unseen texts (e.g. a merged survivor whose tag set
    changed) get fresh slack axes in first-seen order, staying orthogonal to
    everything. Deterministic and collision-free by construction."""

    def __init__(self, texts, groups=(), slack: int = 64):
        grouped = {}
        axis = 0
        for group in groups:
            for text in group:
                grouped[text] = axis
            axis += 1
        for text in sorted(texts):
            if text not in grouped:
                grouped[text] = axis
                axis += 1
        self._axis = grouped
        self._next_slack = axis
        self.dimension = axis + slack

    def embed(self, text: str) -> list[float]:
        if text not in self._axis:
            if self._next_slack >= self.dimension:
                raise RuntimeError("EnumeratedProvider slack exhausted")
            self._axis[text] = self._next_slack
            self._next_slack += 1
        vec = [0.0] * self.dimension
        vec[self._axis[text]] = 1.0
        return vec


@pytest.fixture(scope="session")
def expert_manifest() -> dict:
    return json.loads((EXPERT_DIR / "manifest.json").read_text())


@pytest.fixture(scope="session")
def andorra_meta() -> dict:
    return json.loads((ANDORRA_DIR / "meta.json").read_text())


@pytest.fixture()
def andorra_library():
    return load_library(ANDORRA_DIR / "library")


def andorra_config(**inference_overrides) -> RunConfig:
    data = {
        "library_dir": str(ANDORRA_DIR / "library"),
        "retrieval": {"k": 12, "score_threshold": 0.0},
        "inference": dict(inference_overrides),
    }
    return config_from_dict(data)


def make_andorra_engine(
    script_name: str,
    record_path=None,
    clock=None,
    backend_wrapper=None,
    **inference_overrides,
):
    """Engine wired to the Andorra fixture library and a fresh mock script."""
    config = andorra_config(**inference_overrides)
    library = load_library(ANDORRA_DIR / "library")
    provider = HashedNgramEmbedder(config.retrieval.embedding_dim)
    index = build_index(library, provider)
    backend = MockBackend.from_file(ANDORRA_DIR / script_name)
    if backend_wrapper is not None:
        backend = backend_wrapper(backend)
    gateway = Gateway(
        backends={
            ModelAlias.ONLINE_INFERENCE: backend,
            ModelAlias.OFFLINE_REFINEMENT: backend,
        },
        sleep=lambda _s: None,
    )
    writer = RecordWriter(record_path) if record_path else None
    return InferenceEngine(
        library,
        index,
        gateway,
        config,
        record_writer=writer,
        clock=clock or FixedClock(),
    )


class RecordingBackend:
    """Wraps a backend and captures every request for prompt assertions."""

    def __init__(self, inner):
        self.inner = inner
        self.name = f"recording-{inner.name}"
        self.requests = []

    def send(self, request):
        self.requests.append(request)
        return self.inner.send(request)


def make_record(
    query_id="q1",
    country="AD",
    lat=42.5,
    lon=1.5,
    trajectory=(),
    claim_skills=(),
    retrieved=(),
    grounding_flags=(),
    outcome=None,
    ground_truth=None,
    confidence=0.8,
):
    """Synthetic inference record for evolution-path tests."""
    from geoskill.inference_engine import (
        GeoPrediction,
        GroundedClaim,
        InferenceRecord,
        SceneParse,
    )
    from geoskill.skill_model import GeoCoordinate

    claims = tuple(
        GroundedClaim(f"claim via {sid}", ("driving_side",), (sid,)) for sid in claim_skills
    )
    prediction = GeoPrediction(
        country=country,
        region="r",
        coordinate=GeoCoordinate(lat, lon),
        confidence=confidence,
        claims=claims,
        trajectory=tuple(trajectory),
    )
    return InferenceRecord(
        query_id=query_id,
        mode="full",
        seed=0,
        prediction=prediction,
        retrieved_skill_ids=tuple(retrieved),
        candidate_count=len(retrieved),
        graph={"nodes": [], "edges": []},
        rollouts=(),
        scene=SceneParse(),
        template_hashes={},
        started_at=0.0,
        finished_at=0.0,
        grounding_flags=tuple(grounding_flags),
        outcome=outcome,
        ground_truth=ground_truth,
    )
