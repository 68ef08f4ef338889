"""Shared builders for small knowledge graphs and working graphs."""
from __future__ import annotations

import numpy as np
import pytest

from workgraph.graph_builder import build_working_graph
from workgraph.kg_store import augment_inverse_edges, load_kg
from workgraph.retrieval import Subgraph, TopicEntities, induced_edges


def kg_from_triples(triples, augment=True):
    kg = load_kg("".join(f"{h}\t{r}\t{t}\n" for h, r, t in triples))
    return augment_inverse_edges(kg) if augment else kg


def random_kg(rng: np.random.Generator, n: int, m: int, n_edges: int, augment=True):
    """Random triples over ``e0..e{n-1}``; every entity appears at least once."""
    triples = {("e0", f"r{j}", "e1") for j in range(m)}  # every relation present: one shared layout
    for v in range(n):  # one edge per entity so ids follow first appearance
        t = int(rng.integers(n))
        triples.add((f"e{v}", f"r{int(rng.integers(m))}", f"e{t}"))
    while len(triples) < n + m + n_edges:
        h, t = (int(x) for x in rng.integers(n, size=2))
        triples.add((f"e{h}", f"r{int(rng.integers(m))}", f"e{t}"))
    return kg_from_triples(sorted(triples), augment)


def random_working_graph(rng: np.random.Generator, max_nodes: int = 12, m: int = 3, p: float = 0.3,
                         example_id: str = "ex", choice: int = 0):
    """Working graph over a random KG: random topics split into V_q / V_a, random scores."""
    n = int(rng.integers(2, max_nodes))  # entities; plus z gives <= max_nodes nodes
    kg = random_kg(rng, n, m, int(p * n * n))
    nodes = tuple(range(kg.num_entities))
    n_topics = int(rng.integers(1, min(4, kg.num_entities) + 1))
    topics = [int(v) for v in rng.choice(kg.num_entities, size=n_topics, replace=False)]
    cut = int(rng.integers(0, n_topics + 1))
    tp = TopicEntities(frozenset(topics[:cut]), frozenset(topics[cut:]))
    sub = Subgraph(nodes, induced_edges(kg, nodes), tp.all, kg)
    scores = {v: float(rng.uniform(0.05, 0.95)) for v in nodes}
    tokens = [f"w{int(x)}" for x in rng.integers(0, 20, size=int(rng.integers(1, 6)))]
    return build_working_graph(sub, tp, scores, example_id, choice, tokens)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
