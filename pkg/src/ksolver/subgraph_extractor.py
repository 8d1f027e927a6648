"""k-hop subgraph retrieval between question and answer entities.

The contract is the brute-force definition: a node or edge belongs to the
subgraph iff it lies on at least one simple path of length <= k between a
question entity and an answer entity, with edges traversable in both
directions (a reversed hop costs one like a forward hop). Edges among
included nodes that sit on no qualifying path are excluded.
"""

from __future__ import annotations

import json
import logging

from .errors import NoAnswerReachable
from .grounding import GroundedInstance
from .kg_store import Edge, EntityId, KnowledgeGraph, Neighbor

logger = logging.getLogger(__name__)

DEFAULT_HOP_BUDGET = 2


class Subgraph:
    """The extracted k-hop graph for one QA pair.

    Read-only once built; adjacency is pre-sorted the same way as the
    parent graph so traversal menus are deterministic.
    """

    def __init__(
        self,
        parent: KnowledgeGraph,
        nodes: frozenset[EntityId],
        edges: frozenset[Edge],
        hop_budget: int,
        reachability: dict[str, bool],
    ):
        self.parent = parent
        self.nodes = nodes
        self.edges = edges
        self.hop_budget = hop_budget
        self.reachability = dict(reachability)
        forward: dict[EntityId, list[tuple[int, EntityId]]] = {n: [] for n in nodes}
        backward: dict[EntityId, list[tuple[int, EntityId]]] = {n: [] for n in nodes}
        for head, rel, tail in edges:
            forward[head].append((rel, tail))
            backward[tail].append((rel, head))
        catalog = parent.relations
        key = lambda item: (catalog.by_id(item[0]).name, parent.name(item[1]))
        self._forward = {n: sorted(adj, key=key) for n, adj in forward.items()}
        self._backward = {n: sorted(adj, key=key) for n, adj in backward.items()}

    def neighbors(self, head: EntityId, include_reversed: bool = True) -> list[Neighbor]:
        """Subgraph-restricted adjacency, sorted like KnowledgeGraph.neighbors."""
        if head not in self.nodes:
            return []
        catalog = self.parent.relations
        out = [
            Neighbor(catalog.by_id(rel), tail, False) for rel, tail in self._forward[head]
        ]
        if include_reversed:
            out.extend(
                Neighbor(catalog.by_id(rel), h, True) for rel, h in self._backward[head]
            )
            out.sort(
                key=lambda n: (n.relation.name, self.parent.name(n.tail), n.is_reversed)
            )
        return out

    def to_json(self) -> dict:
        name = self.parent.name
        rel = lambda rid: self.parent.relations.by_id(rid).name
        return {
            "nodes": sorted(name(n) for n in self.nodes),
            "edges": sorted([name(h), rel(r), name(t)] for h, r, t in self.edges),
            "hop_budget": self.hop_budget,
            "reachability": {k: self.reachability[k] for k in sorted(self.reachability)},
        }

    def dumps(self) -> str:
        """Byte-stable JSON dump for caching and debugging."""
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def _paths_from(
    g: KnowledgeGraph,
    start: EntityId,
    answer_union: frozenset[EntityId],
    k: int,
    nodes_out: set[EntityId],
    edges_out: set[Edge],
) -> None:
    # Depth-first enumeration of all simple paths of length <= k from start;
    # every prefix ending on an answer entity is a qualifying path.
    on_path: list[EntityId] = [start]
    on_path_set: set[EntityId] = {start}
    path_edges: list[Edge] = []

    def recurse(current: EntityId, depth: int) -> None:
        for nb in g.neighbors(current, include_reversed=True):
            v = nb.tail
            if v in on_path_set:
                continue
            edge = (
                Edge(v, nb.relation.id, current)
                if nb.is_reversed
                else Edge(current, nb.relation.id, v)
            )
            on_path.append(v)
            on_path_set.add(v)
            path_edges.append(edge)
            if v in answer_union:
                nodes_out.update(on_path)
                edges_out.update(path_edges)
            if depth + 1 < k:
                recurse(v, depth + 1)
            on_path.pop()
            on_path_set.remove(v)
            path_edges.pop()

    recurse(start, 0)


def extract(
    g: KnowledgeGraph, grounded: GroundedInstance, k: int = DEFAULT_HOP_BUDGET
) -> Subgraph:
    """Retrieve the subgraph of all qualifying paths for one grounded QA pair.

    Raises NoAnswerReachable when no choice has a single reachable answer
    entity (the exception carries the empty subgraph and the per-choice
    reachability map so callers can continue into fallback).
    """
    if k < 1:
        raise ValueError(f"hop budget must be >= 1, got {k}")
    answer_union = grounded.all_answer_entities()
    nodes: set[EntityId] = set()
    edges: set[Edge] = set()
    for vq in sorted(grounded.question_entities):
        _paths_from(g, vq, answer_union, k, nodes, edges)

    reachability = {
        label: bool(grounded.choice_entities[label] & nodes)
        for label, _ in grounded.qa.choices
    }
    subgraph = Subgraph(g, frozenset(nodes), frozenset(edges), k, reachability)
    if not nodes:
        raise NoAnswerReachable(grounded.qa.id, subgraph, reachability)
    unreachable = [label for label, ok in reachability.items() if not ok]
    if unreachable:
        logger.debug("%s: choices with no reachable entity: %s", grounded.qa.id, unreachable)
    return subgraph


def reachability_report(s: Subgraph, grounded: GroundedInstance) -> dict[str, bool]:
    """Per-choice flag: does any of the choice's entities appear in the subgraph."""
    return {
        label: bool(grounded.choice_entities[label] & s.nodes)
        for label, _ in grounded.qa.choices
    }
