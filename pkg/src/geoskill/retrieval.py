"""Hybrid lexical + semantic skill retrieval with score thresholding and
greedy maximal-marginal-relevance diversity control.

The index is an exact-scan structure: at library scale (~10^3 skills) a full
scan is both correct and fast, so no approximate-nearest-neighbor machinery
is used. Indexes are immutable after build; retrieval is a pure function of
(index, query, parameters).
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import httpx
import numpy as np

from .skill_model import AtomicSkill, SkillLibrary

DEFAULT_K = 7
DEFAULT_SCORE_THRESHOLD = 0.05
DEFAULT_DIVERSITY_LAMBDA = 0.7
DEFAULT_BM25_K1 = 1.5
DEFAULT_BM25_B = 0.75
DEFAULT_EMBEDDING_DIM = 256

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase Unicode-alphanumeric word segmentation, no stemming."""
    return _TOKEN_RE.findall(text.lower())


def skill_text(skill: AtomicSkill) -> str:
    """Text form of a skill used for indexing and similarity: instruction,
    heuristic, then sorted region tags."""
    parts = [skill.instruction, skill.heuristic]
    parts.extend(sorted(skill.regions))
    return " ".join(p for p in parts if p)


class EmbeddingProvider(Protocol):
    """Deterministic text -> unit-norm vector of a fixed dimension."""

    dimension: int

    def embed(self, text: str) -> list[float]: ...


class HashedNgramEmbedder:
    """Deterministic fallback embedding: feature-hashed character n-grams,
    L2-normalized. No model, no network; identical texts always map to
    identical vectors."""

    def __init__(self, dimension: int = DEFAULT_EMBEDDING_DIM, ngram_sizes: Sequence[int] = (3, 4, 5)):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.ngram_sizes = tuple(ngram_sizes)

    def embed(self, text: str) -> list[float]:
        normalized = " " + " ".join(text.lower().split()) + " "
        vec = [0.0] * self.dimension
        for n in self.ngram_sizes:
            for i in range(max(0, len(normalized) - n + 1)):
                gram = normalized[i : i + n]
                digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
                h = int.from_bytes(digest, "big")
                sign = 1.0 if h & 1 == 0 else -1.0
                vec[(h >> 1) % self.dimension] += sign
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            return vec
        return [v / norm for v in vec]


@lru_cache(maxsize=8)
def _default_embedder(dimension: int) -> HashedNgramEmbedder:
    return HashedNgramEmbedder(dimension)


def fallback_embed(text: str, dimension: int = DEFAULT_EMBEDDING_DIM) -> list[float]:
    return _default_embedder(dimension).embed(text)


class RemoteEmbeddingProvider:
    """Embedding over the model-gateway transport: POST {"texts": [...]}
    returns {"vectors": [[...]]}. Vectors are re-normalized defensively."""

    def __init__(self, url: str, dimension: int, timeout_s: float = 30.0):
        self.url = url
        self.dimension = dimension
        self.timeout_s = timeout_s

    def embed(self, text: str) -> list[float]:
        response = httpx.post(self.url, json={"texts": [text]}, timeout=self.timeout_s)
        response.raise_for_status()
        vectors = response.json()["vectors"]
        vec = [float(x) for x in vectors[0]]
        if len(vec) != self.dimension:
            raise ValueError(
                f"provider returned dimension {len(vec)}, expected {self.dimension}"
            )
        norm = math.sqrt(sum(v * v for v in vec))
        return [v / norm for v in vec] if norm else vec


class UnknownSkillError(KeyError):
    """Unknown skill id asked of an index."""


@dataclass(frozen=True)
class SkillIndex:
    library_version: int
    ids: tuple[str, ...]
    token_counts: dict[str, Counter]
    doc_lengths: dict[str, int]
    doc_freq: Counter
    avg_doc_length: float
    embeddings: np.ndarray  # one unit row per id, aligned with `ids`
    positions: dict[str, int]
    provider: EmbeddingProvider
    k1: float = DEFAULT_BM25_K1
    b: float = DEFAULT_BM25_B

    @property
    def size(self) -> int:
        return len(self.ids)

    def row(self, skill_id: str) -> int:
        return self.positions[skill_id]


def build_index(
    library: SkillLibrary,
    provider: EmbeddingProvider,
    k1: float = DEFAULT_BM25_K1,
    b: float = DEFAULT_BM25_B,
) -> SkillIndex:
    """Build the lexical + dense index covering exactly the library's skills."""
    ids = tuple(sorted(library.skills))
    token_counts: dict[str, Counter] = {}
    doc_lengths: dict[str, int] = {}
    doc_freq: Counter = Counter()
    vectors = []
    for sid in ids:
        text = skill_text(library.skills[sid])
        toks = tokenize(text)
        counts = Counter(toks)
        token_counts[sid] = counts
        doc_lengths[sid] = len(toks)
        for term in counts:
            doc_freq[term] += 1
        try:
            vec = provider.embed(text)
        except Exception as exc:
            raise RuntimeError(f"embedding failed for skill {sid}: {exc}") from exc
        if len(vec) != provider.dimension:
            raise RuntimeError(f"bad embedding dimension for skill {sid}")
        vectors.append(vec)
    matrix = (
        np.asarray(vectors, dtype=np.float64)
        if vectors
        else np.zeros((0, provider.dimension), dtype=np.float64)
    )
    avgdl = (sum(doc_lengths.values()) / len(ids)) if ids else 0.0
    return SkillIndex(
        library_version=library.version,
        ids=ids,
        token_counts=token_counts,
        doc_lengths=doc_lengths,
        doc_freq=doc_freq,
        avg_doc_length=avgdl,
        embeddings=matrix,
        positions={sid: i for i, sid in enumerate(ids)},
        provider=provider,
        k1=k1,
        b=b,
    )


def _idf(index: SkillIndex, term: str) -> float:
    df = index.doc_freq.get(term, 0)
    if df == 0:
        return 0.0
    # Non-negative Okapi variant: log(1 + (N - df + 0.5)/(df + 0.5)); the
    # classic RSJ form goes negative for common terms, which would violate
    # the score >= 0 contract.
    return math.log(1.0 + (index.size - df + 0.5) / (df + 0.5))


def bm25_score(index: SkillIndex, query_terms: Sequence[str], skill_id: str) -> float:
    """Okapi BM25 of one indexed skill against the query terms. Terms absent
    from the corpus contribute 0; query term repetitions accumulate."""
    if skill_id not in index.token_counts:
        raise UnknownSkillError(skill_id)
    counts = index.token_counts[skill_id]
    dl = index.doc_lengths[skill_id]
    norm = index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length) if index.avg_doc_length else 0.0
    score = 0.0
    for term in query_terms:
        tf = counts.get(term, 0)
        if tf == 0:
            continue
        score += _idf(index, term) * (tf * (index.k1 + 1.0)) / (tf + norm)
    return score


@dataclass(frozen=True)
class WeightedQuery:
    """Query composed of weighted text parts (e.g. task prior + scene parse).
    Weights are normalized to sum to 1."""

    parts: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("query needs at least one part")
        if any(w < 0 for _t, w in self.parts):
            raise ValueError("negative query weight")
        total = sum(w for _t, w in self.parts)
        if total <= 0:
            raise ValueError("query needs at least one positive weight")
        object.__setattr__(
            self, "parts", tuple((t, w / total) for t, w in self.parts)
        )


def _minmax(scores: list[float]) -> list[float]:
    lo, hi = min(scores), max(scores)
    if hi > lo:
        return [(s - lo) / (hi - lo) for s in scores]
    # Degenerate spread: all-equal positives are all fully relevant, an
    # all-zero column stays zero.
    return [1.0 if hi > 0 else 0.0 for _ in scores]


def hybrid_scores(
    index: SkillIndex,
    query: WeightedQuery,
    lexical_weight: float = 0.5,
    semantic_weight: float = 0.5,
) -> dict[str, float]:
    """Hybrid relevance per skill: per-part minmax-normalized BM25 blended
    with embedding cosine, aggregated over parts by their weights."""
    if index.size == 0:
        return {}
    wl, ws = lexical_weight, semantic_weight
    total = wl + ws
    if total <= 0:
        raise ValueError("lexical_weight + semantic_weight must be positive")
    wl, ws = wl / total, ws / total
    combined = {sid: 0.0 for sid in index.ids}
    for text, weight in query.parts:
        terms = tokenize(text)
        raw = [bm25_score(index, terms, sid) for sid in index.ids]
        lex = _minmax(raw)
        qvec = np.asarray(index.provider.embed(text), dtype=np.float64)
        cos = index.embeddings @ qvec
        for i, sid in enumerate(index.ids):
            combined[sid] += weight * (wl * lex[i] + ws * float(cos[i]))
    return combined


def hybrid_retrieve(
    index: SkillIndex,
    query: WeightedQuery,
    k: int = DEFAULT_K,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    diversity_lambda: float = DEFAULT_DIVERSITY_LAMBDA,
    lexical_weight: float = 0.5,
    semantic_weight: float = 0.5,
) -> list[tuple[str, float]]:
    """Top-k skills by hybrid score, reranked greedily by MMR.

    Candidates below *score_threshold* are dropped before selection. With
    diversity_lambda=1 the result is exactly the top-k by hybrid score. Ties
    break by skill id ascending; the returned scores are the hybrid relevance
    scores in selection order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = hybrid_scores(index, query, lexical_weight, semantic_weight)
    candidates = sorted(
        ((sid, s) for sid, s in scores.items() if s >= score_threshold),
        key=lambda item: (-item[1], item[0]),
    )
    if not candidates:
        return []

    lam = diversity_lambda
    selected: list[tuple[str, float]] = []
    remaining = list(candidates)
    rows = {sid: index.row(sid) for sid, _s in candidates}
    while remaining and len(selected) < k:
        best = None
        best_key = None
        for sid, rel in remaining:
            if selected:
                sims = index.embeddings[[rows[s] for s, _ in selected]] @ index.embeddings[rows[sid]]
                penalty = float(np.max(sims))
            else:
                penalty = 0.0
            objective = lam * rel - (1.0 - lam) * penalty
            key = (-objective, sid)
            if best_key is None or key < best_key:
                best_key = key
                best = (sid, rel)
        assert best is not None
        selected.append(best)
        remaining = [(sid, s) for sid, s in remaining if sid != best[0]]
    return selected
