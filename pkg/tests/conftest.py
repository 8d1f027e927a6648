from __future__ import annotations

import pytest

from ksolver import QAInstance, extract, ground, load_graph

CHAIN_VOCAB = ["child", "play", "fun", "sadness"]
CHAIN_EDGES = ["capableof\tchild\tplay", "hasproperty\tplay\tfun"]


@pytest.fixture
def chain_graph():
    return load_graph(CHAIN_VOCAB, CHAIN_EDGES)


@pytest.fixture
def chain_qa():
    return QAInstance(
        id="q1",
        question="where do children play?",
        choices=(("A", "sadness"), ("B", "fun")),
        answer_key="B",
    )


@pytest.fixture
def chain_grounded(chain_graph, chain_qa):
    return ground(chain_graph, chain_qa)


@pytest.fixture
def chain_subgraph(chain_graph, chain_grounded):
    return extract(chain_graph, chain_grounded, k=2)
