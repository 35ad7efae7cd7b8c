"""Compose retrieved skills into a per-query task graph and derive the
ordered coarse-to-fine reasoning plan.

Edges are induced without any learned weights, from three auditable rules:
expert relation priors, stage + tag compatibility, and globally applicable
coarse skills feeding every downstream stage.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from .skill_model import AtomicSkill, RelationPrior, Stage


@dataclass(frozen=True)
class TaskSkillGraph:
    """DAG over retrieved skills; edges never point from a later stage to an
    earlier one."""

    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    stages: Mapping[str, Stage]
    confidences: Mapping[str, float]


class GraphInvariantError(RuntimeError):
    """An internal graph invariant (acyclicity) was violated."""


def _find_cycle(nodes: Sequence[str], adjacency: Mapping[str, list[str]]) -> list[str] | None:
    """Return one cycle as a node list, or None. Deterministic DFS order."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    parent: dict[str, str] = {}

    for start in nodes:
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        color[start] = GRAY
        while stack:
            node, child_idx = stack[-1]
            children = adjacency.get(node, [])
            if child_idx < len(children):
                stack[-1] = (node, child_idx + 1)
                child = children[child_idx]
                if color[child] == GRAY:
                    # child is an ancestor on the DFS stack: walk parents
                    # from node back up to it to recover the cycle.
                    path = [node]
                    cursor = node
                    while cursor != child:
                        cursor = parent[cursor]
                        path.append(cursor)
                    path.reverse()
                    return path
                if color[child] == WHITE:
                    color[child] = GRAY
                    parent[child] = node
                    stack.append((child, 0))
            else:
                color[node] = BLACK
                stack.pop()
    return None


def compose_graph(
    retrieved: Sequence[AtomicSkill],
    relation_priors: Iterable[RelationPrior] = (),
) -> TaskSkillGraph:
    """Induce the task graph over the retrieved skills.

    An edge (a, b) is included iff stage(a) <= stage(b), a != b, and one of:
      (i)  a relation prior a -> b exists with support > failure;
      (ii) stage(a) < stage(b) and the pair shares a country code or region tag;
      (iii) stage(a) < stage(b) and a has an empty country set (globally
            applicable skills feed everything downstream).
    Any cycle (only possible among same-stage prior edges) is broken by
    dropping its lowest-support edge.
    """
    if not retrieved:
        raise ValueError("retrieved skill set must be non-empty")
    skills = {s.id: s for s in retrieved}
    nodes = tuple(sorted(skills))
    stages = {sid: skills[sid].stage for sid in nodes}
    confidences = {sid: skills[sid].confidence for sid in nodes}

    prior_support: dict[tuple[str, str], int] = {}
    for prior in relation_priors:
        if prior.from_id in skills and prior.to_id in skills and prior.support > prior.failure:
            key = (prior.from_id, prior.to_id)
            prior_support[key] = max(prior_support.get(key, 0), prior.support)

    edges: set[tuple[str, str]] = set()
    for a in nodes:
        for b in nodes:
            if a == b:
                continue
            ra, rb = stages[a].rank, stages[b].rank
            if ra > rb:
                continue
            if (a, b) in prior_support:
                edges.add((a, b))
            elif ra < rb and (
                (skills[a].countries & skills[b].countries)
                or (skills[a].regions & skills[b].regions)
            ):
                edges.add((a, b))
            elif ra < rb and not skills[a].countries:
                edges.add((a, b))

    # Cross-stage edges always advance the stage, so any cycle lies entirely
    # within one stage and consists of prior edges only.
    while True:
        adjacency: dict[str, list[str]] = {n: [] for n in nodes}
        for a, b in sorted(edges):
            adjacency[a].append(b)
        cycle = _find_cycle(nodes, adjacency)
        if cycle is None:
            break
        cycle_edges = [
            (cycle[i], cycle[(i + 1) % len(cycle)]) for i in range(len(cycle))
        ]
        cycle_edges = [e for e in cycle_edges if e in edges]
        victim = min(
            cycle_edges, key=lambda e: (prior_support.get(e, 0), e[0], e[1])
        )
        edges.discard(victim)

    return TaskSkillGraph(
        nodes=nodes, edges=frozenset(edges), stages=stages, confidences=confidences
    )


def order_plan(graph: TaskSkillGraph) -> list[str]:
    """Deterministic topological order refined by (stage ascending,
    confidence descending, id ascending)."""
    indegree = {n: 0 for n in graph.nodes}
    adjacency: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for a, b in graph.edges:
        adjacency[a].append(b)
        indegree[b] += 1

    def key(node: str) -> tuple[int, float, str]:
        return (graph.stages[node].rank, -graph.confidences[node], node)

    heap = [key(n) for n in graph.nodes if indegree[n] == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        _rank, _neg_conf, node = heapq.heappop(heap)
        order.append(node)
        for child in adjacency[node]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(heap, key(child))
    if len(order) != len(graph.nodes):
        raise GraphInvariantError("cycle detected; compose_graph must prevent this")
    return order


def validate_trajectory(graph: TaskSkillGraph, trajectory: Sequence[str]) -> int | None:
    """None iff every consecutive pair is an edge of *graph*, otherwise the
    index of the first violating step."""
    node_set = set(graph.nodes)
    for i, sid in enumerate(trajectory):
        if sid not in node_set:
            return i
    for i in range(len(trajectory) - 1):
        if (trajectory[i], trajectory[i + 1]) not in graph.edges:
            return i
    return None


def shuffle_edges(graph: TaskSkillGraph, seed: int) -> TaskSkillGraph:
    """Ablation support: re-draw the edge set at the same size, uniformly
    over node pairs and ignoring the stage constraint.

    Sampled edges are oriented along a seeded random node permutation, which
    keeps the result executable (acyclic) while destroying the coarse-to-fine
    order; the edge count is capped at n(n-1)/2 forward pairs.
    """
    rng = random.Random(seed)
    nodes = list(graph.nodes)
    rng.shuffle(nodes)
    position = {n: i for i, n in enumerate(nodes)}
    forward_pairs = [
        (a, b) if position[a] < position[b] else (b, a)
        for a, b in combinations(sorted(graph.nodes), 2)
    ]
    count = min(len(graph.edges), len(forward_pairs))
    sampled = rng.sample(forward_pairs, count) if count else []
    return TaskSkillGraph(
        nodes=graph.nodes,
        edges=frozenset(sampled),
        stages=dict(graph.stages),
        confidences=dict(graph.confidences),
    )


def graph_dump(graph: TaskSkillGraph) -> dict:
    """Canonical serializable form used by the trajectory log."""
    return {
        "nodes": [{"id": n, "stage": graph.stages[n].value} for n in graph.nodes],
        "edges": [[a, b] for a, b in sorted(graph.edges)],
    }


def empty_graph() -> TaskSkillGraph:
    return TaskSkillGraph(nodes=(), edges=frozenset(), stages={}, confidences={})
