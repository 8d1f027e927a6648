"""Multi-relational knowledge graph store.

Loads an entity vocabulary plus a typed edge list into an immutable
in-memory graph with constant-time adjacency in both directions. The
backward index is kept separate from the forward edge list so the
reported edge count stays equal to the file's logical content.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

from .errors import (
    InvalidEntity,
    MalformedLine,
    NotFound,
    SelfLoop,
    UnknownEntity,
    UnknownRelation,
)

logger = logging.getLogger(__name__)

EntityId = int

DEFAULT_CATALOG_RESOURCE = "relations_conceptnet.json"

_WHITESPACE = re.compile(r"\s+")


def normalize_name(text: str) -> str:
    """Canonical entity-name form: lowercase, trimmed, spaces to underscores."""
    return _WHITESPACE.sub("_", text.strip().lower())


@dataclass(frozen=True)
class Entity:
    id: EntityId
    canonical_name: str
    surface_forms: tuple[str, ...] = ()


@dataclass(frozen=True)
class RelationType:
    id: int
    name: str
    reversed_of: int | None = None


class Edge(NamedTuple):
    head: EntityId
    relation: int
    tail: EntityId


class Neighbor(NamedTuple):
    """One adjacency entry: relation, neighboring entity, traversal direction.

    is_reversed marks a backward traversal of a stored edge; downstream
    rendering suffixes the relation name with "*".
    """

    relation: RelationType
    tail: EntityId
    is_reversed: bool


class Step(NamedTuple):
    """One walked hop: the directed use of a stored edge.

    head/tail are in walk orientation; for a reversed hop the stored edge
    runs tail -> head.
    """

    head: EntityId
    relation: int
    tail: EntityId
    is_reversed: bool

    def stored_edge(self) -> Edge:
        if self.is_reversed:
            return Edge(self.tail, self.relation, self.head)
        return Edge(self.head, self.relation, self.tail)


class RelationCatalog:
    """Relation-type catalog with optional reverse pairings (involution checked)."""

    def __init__(self, relations: list[RelationType], version: str = "custom"):
        self.version = version
        self._relations = tuple(relations)
        self._by_name = {r.name: r for r in relations}
        if len(self._by_name) != len(relations):
            raise ValueError("duplicate relation names in catalog")
        for r in relations:
            if r.reversed_of is None:
                continue
            partner = self._relations[r.reversed_of]
            if partner.reversed_of != r.id:
                raise ValueError(
                    f"reverse pairing is not an involution: {r.name} <-> {partner.name}"
                )

    def __len__(self) -> int:
        return len(self._relations)

    def __iter__(self) -> Iterator[RelationType]:
        return iter(self._relations)

    def by_id(self, rid: int) -> RelationType:
        return self._relations[rid]

    def get(self, name: str) -> RelationType | None:
        return self._by_name.get(name)


def load_relation_catalog(source: str | Path | dict) -> RelationCatalog:
    """Load a relation catalog from a JSON config (path or parsed dict).

    Schema: {"catalog_version": str, "relations": [{"name": str,
    "reverse_of": str|null}, ...]}. Pairings may be declared on either
    side; the loader closes and validates the involution.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            config = json.load(fh)
    else:
        config = source
    entries = config["relations"]
    names = [normalize_name(e["name"]) for e in entries]
    index = {n: i for i, n in enumerate(names)}
    if len(index) != len(names):
        raise ValueError("duplicate relation names in catalog config")
    reverse_ids: list[int | None] = [None] * len(names)
    for i, entry in enumerate(entries):
        rev = entry.get("reverse_of")
        if rev is None:
            continue
        rev = normalize_name(rev)
        if rev not in index:
            raise ValueError(f"reverse_of names unknown relation {rev!r}")
        j = index[rev]
        reverse_ids[i] = j
        if reverse_ids[j] is None:
            reverse_ids[j] = i
    relations = [
        RelationType(id=i, name=n, reversed_of=reverse_ids[i])
        for i, n in enumerate(names)
    ]
    return RelationCatalog(relations, version=config.get("catalog_version", "custom"))


def default_relation_catalog() -> RelationCatalog:
    """The shipped 34-relation ConceptNet-style catalog (17 pairs)."""
    text = resources.files("ksolver.data").joinpath(DEFAULT_CATALOG_RESOURCE).read_text(
        encoding="utf-8"
    )
    return load_relation_catalog(json.loads(text))


class KnowledgeGraph:
    """Immutable multi-relational graph: vocabulary, catalog, dual adjacency.

    Construct through load_graph(); instances are safe to share across
    threads. Adjacency lists are pre-sorted at load so queries are
    deterministic without per-call work beyond a merge.
    """

    def __init__(
        self,
        entities: list[Entity],
        catalog: RelationCatalog,
        edges: list[Edge],
    ):
        self._entities = tuple(entities)
        self._catalog = catalog
        self._by_name: dict[str, EntityId] = {}
        for ent in entities:
            self._by_name[ent.canonical_name] = ent.id
            for alias in ent.surface_forms:
                self._by_name.setdefault(alias, ent.id)
        forward: list[list[tuple[int, EntityId]]] = [[] for _ in entities]
        backward: list[list[tuple[int, EntityId]]] = [[] for _ in entities]
        for head, rel, tail in edges:
            forward[head].append((rel, tail))
            backward[tail].append((rel, head))
        key = lambda item: (catalog.by_id(item[0]).name, entities[item[1]].canonical_name)
        self._forward = tuple(tuple(sorted(adj, key=key)) for adj in forward)
        self._backward = tuple(tuple(sorted(adj, key=key)) for adj in backward)
        self._edges = frozenset(edges)

    @property
    def relations(self) -> RelationCatalog:
        return self._catalog

    @property
    def num_entities(self) -> int:
        return len(self._entities)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def entity(self, eid: EntityId) -> Entity:
        if not 0 <= eid < len(self._entities):
            raise InvalidEntity(f"entity id {eid} out of range")
        return self._entities[eid]

    def name(self, eid: EntityId) -> str:
        return self.entity(eid).canonical_name

    def entities(self) -> Iterator[Entity]:
        return iter(self._entities)

    def edges(self) -> frozenset[Edge]:
        return self._edges

    def has_edge(self, edge: Edge) -> bool:
        return edge in self._edges

    def resolve(self, name: str) -> EntityId:
        """Exact lookup by canonical name (input normalized first)."""
        eid = self._by_name.get(normalize_name(name))
        if eid is None:
            raise NotFound(f"entity {name!r} not in vocabulary")
        return eid

    def neighbors(self, head: EntityId, include_reversed: bool = False) -> list[Neighbor]:
        """Adjacency of head, sorted by (relation name, tail name, direction).

        Forward edges always; backward edges (is_reversed=True) when
        include_reversed is set.
        """
        if not 0 <= head < len(self._entities):
            raise InvalidEntity(f"entity id {head} out of range")
        out = [
            Neighbor(self._catalog.by_id(rel), tail, False)
            for rel, tail in self._forward[head]
        ]
        if include_reversed:
            out.extend(
                Neighbor(self._catalog.by_id(rel), h, True)
                for rel, h in self._backward[head]
            )
            out.sort(
                key=lambda n: (
                    n.relation.name,
                    self._entities[n.tail].canonical_name,
                    n.is_reversed,
                )
            )
        return out


def _iter_lines(source: str | Path | Iterable[str]) -> Iterator[tuple[int, str]]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                yield i, line.rstrip("\n")
    else:
        for i, line in enumerate(source, start=1):
            yield i, line.rstrip("\n")


def load_graph(
    vocab_source: str | Path | Iterable[str],
    edge_source: str | Path | Iterable[str],
    relation_catalog: RelationCatalog | str | Path | None = None,
) -> KnowledgeGraph:
    """Load and validate a knowledge graph from line-oriented sources.

    Vocabulary: one canonical entity name per line; optional tab-separated
    surface-form aliases after the name; '#' comments and blank lines
    ignored. Edges: TSV `relation \\t head \\t tail [\\t weight]`; the
    weight column is parsed and discarded. Duplicate edges collapse to
    one; self-loops, unknown names, and malformed lines abort the load
    with their line number.
    """
    if relation_catalog is None:
        catalog = default_relation_catalog()
    elif isinstance(relation_catalog, RelationCatalog):
        catalog = relation_catalog
    else:
        catalog = load_relation_catalog(relation_catalog)

    entities: list[Entity] = []
    seen_names: set[str] = set()
    for lineno, raw in _iter_lines(vocab_source):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        canonical = normalize_name(parts[0])
        if not canonical:
            raise MalformedLine("empty entity name", lineno)
        if canonical in seen_names:
            raise MalformedLine(f"duplicate entity name {canonical!r}", lineno)
        seen_names.add(canonical)
        aliases = tuple(normalize_name(p) for p in parts[1:] if p.strip())
        entities.append(Entity(len(entities), canonical, aliases))

    name_to_id = {e.canonical_name: e.id for e in entities}

    edges: list[Edge] = []
    seen_edges: set[Edge] = set()
    for lineno, raw in _iter_lines(edge_source):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise MalformedLine(
                f"expected 3 or 4 tab-separated fields, got {len(parts)}", lineno
            )
        rel_name, head_name, tail_name = (normalize_name(p) for p in parts[:3])
        if len(parts) == 4:
            try:
                float(parts[3])
            except ValueError:
                raise MalformedLine(f"non-numeric weight {parts[3]!r}", lineno) from None
        relation = catalog.get(rel_name)
        if relation is None:
            raise UnknownRelation(f"relation {rel_name!r} not in catalog", lineno)
        head = name_to_id.get(head_name)
        if head is None:
            raise UnknownEntity(f"entity {head_name!r} not in vocabulary", lineno)
        tail = name_to_id.get(tail_name)
        if tail is None:
            raise UnknownEntity(f"entity {tail_name!r} not in vocabulary", lineno)
        if head == tail:
            raise SelfLoop(f"self-loop on {head_name!r}", lineno)
        edge = Edge(head, relation.id, tail)
        if edge in seen_edges:
            continue
        seen_edges.add(edge)
        edges.append(edge)

    graph = KnowledgeGraph(entities, catalog, edges)
    logger.info(
        "loaded knowledge graph: %d entities, %d edges, %d relation types",
        graph.num_entities,
        graph.num_edges,
        len(catalog),
    )
    return graph
