from __future__ import annotations

import random

import pytest

from ksolver import default_relation_catalog, load_graph, load_relation_catalog
from ksolver.errors import (
    InvalidEntity,
    MalformedLine,
    NotFound,
    SelfLoop,
    UnknownEntity,
    UnknownRelation,
)

VOCAB = ["child", "play", "fun"]
EDGES = ["capableof\tchild\tplay", "hasproperty\tplay\tfun"]


def test_minimal_load_counts():
    g = load_graph(VOCAB, EDGES)
    assert g.num_entities == 3
    assert g.num_edges == 2


def test_duplicate_edges_deduplicated():
    g = load_graph(VOCAB, EDGES + EDGES)
    assert g.num_edges == 2


def test_load_idempotent_under_concatenation():
    once = load_graph(VOCAB, EDGES)
    twice = load_graph(VOCAB, EDGES + EDGES)
    assert once.edges() == twice.edges()
    for eid in range(once.num_entities):
        assert once.neighbors(eid, include_reversed=True) == twice.neighbors(
            eid, include_reversed=True
        )


def test_unknown_entity_reports_line_number():
    with pytest.raises(UnknownEntity) as exc:
        load_graph(VOCAB, EDGES + ["capableof\tchild\tghost"])
    assert exc.value.line_number == 3


def test_unknown_relation_reports_line_number():
    with pytest.raises(UnknownRelation) as exc:
        load_graph(VOCAB, ["flibbers\tchild\tplay"])
    assert exc.value.line_number == 1


def test_self_loop_rejected():
    with pytest.raises(SelfLoop):
        load_graph(VOCAB, ["capableof\tplay\tplay"])


def test_malformed_line_rejected():
    with pytest.raises(MalformedLine):
        load_graph(VOCAB, ["capableof\tchild"])
    with pytest.raises(MalformedLine):
        load_graph(VOCAB, ["capableof\tchild\tplay\tNaN-ish\textra"])


def test_comments_blanks_and_weights_ignored():
    g = load_graph(
        ["# comment", "", *VOCAB],
        ["# header", "", "capableof\tchild\tplay\t1.25", "hasproperty\tplay\tfun"],
    )
    assert g.num_entities == 3
    assert g.num_edges == 2


def test_duplicate_vocab_entry_rejected():
    with pytest.raises(MalformedLine):
        load_graph(["child", "Child "], EDGES[:1])


def test_neighbors_forward_only():
    g = load_graph(VOCAB, EDGES)
    out = g.neighbors(g.resolve("child"))
    assert [(n.relation.name, g.name(n.tail), n.is_reversed) for n in out] == [
        ("capableof", "play", False)
    ]


def test_neighbors_include_reversed_marks_direction():
    g = load_graph(VOCAB, EDGES)
    out = g.neighbors(g.resolve("play"), include_reversed=True)
    assert [(n.relation.name, g.name(n.tail), n.is_reversed) for n in out] == [
        ("capableof", "child", True),
        ("hasproperty", "fun", False),
    ]


def test_neighbors_invalid_entity():
    g = load_graph(VOCAB, EDGES)
    with pytest.raises(InvalidEntity):
        g.neighbors(99)


def test_star_graph_neighbors_sorted():
    # Independent expectation: enumerate the spokes and sort by the stated
    # key (relation name, tail name).
    spokes = [("usedfor", "swim"), ("atlocation", "zoo"), ("causes", "ache"),
              ("isa", "beast"), ("atlocation", "barn")]
    vocab = ["center"] + sorted({t for _, t in spokes})
    edges = [f"{rel}\tcenter\t{tail}" for rel, tail in spokes]
    g = load_graph(vocab, edges)
    out = g.neighbors(g.resolve("center"))
    assert len(out) == 5
    expected = sorted(spokes, key=lambda p: (p[0], p[1]))
    assert [(n.relation.name, g.name(n.tail)) for n in out] == expected


def test_resolve_entity_normalization():
    g = load_graph(VOCAB, EDGES)
    child = g.resolve("child")
    assert g.resolve("Child ") == child
    assert g.resolve("CHILD") == child
    with pytest.raises(NotFound):
        g.resolve("dragon")


def test_surface_form_aliases_resolve():
    g = load_graph(["child\tkid\tyoungster", "play", "fun"], EDGES)
    assert g.resolve("kid") == g.resolve("child")
    assert g.resolve("Youngster") == g.resolve("child")


def test_default_catalog_size_and_involution():
    catalog = default_relation_catalog()
    assert len(catalog) == 34
    for rel in catalog:
        assert rel.reversed_of is not None
        assert catalog.by_id(rel.reversed_of).reversed_of == rel.id


def test_catalog_involution_validation():
    with pytest.raises(ValueError):
        load_relation_catalog(
            {
                "relations": [
                    {"name": "a", "reverse_of": "b"},
                    {"name": "b", "reverse_of": "c"},
                    {"name": "c"},
                ]
            }
        )


def test_custom_catalog_without_pairings():
    catalog = load_relation_catalog({"relations": [{"name": f"r{i}"} for i in range(34)]})
    assert len(catalog) == 34
    assert all(rel.reversed_of is None for rel in catalog)


def test_edge_visibility_both_directions_property():
    # For every edge (h, r, t): t is a forward neighbor of h, and h is a
    # reversed neighbor of t.
    rng = random.Random(7)
    rels = [r.name for r in default_relation_catalog()]
    for _ in range(10):
        n = rng.randint(4, 12)
        vocab = [f"e{i}" for i in range(n)]
        lines = set()
        for _ in range(rng.randint(3, 20)):
            u, v = rng.sample(range(n), 2)
            lines.add(f"{rng.choice(rels)}\t{vocab[u]}\t{vocab[v]}")
        g = load_graph(vocab, sorted(lines))
        for h, r, t in g.edges():
            fwd = g.neighbors(h)
            assert any(n.tail == t and n.relation.id == r and not n.is_reversed for n in fwd)
            back = g.neighbors(t, include_reversed=True)
            assert any(n.tail == h and n.relation.id == r and n.is_reversed for n in back)
