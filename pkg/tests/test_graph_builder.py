import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import kg_from_triples, random_working_graph
from workgraph.errors import DataError
from workgraph.graph_builder import (A, O, Q, Z, RelationLayout, build_working_graph, connect_z_to_all,
                                     drop_z_edges, permute_entities)
from workgraph.retrieval import Subgraph, TopicEntities, induced_edges, retrieve_subgraph

EDGES = [("e0", "r0", "e1"), ("e1", "r0", "e2"), ("e0", "r1", "e3"), ("e3", "r0", "e2"), ("e4", "r1", "e5")]


def example_graph():
    kg = kg_from_triples(EDGES)
    e = {n: kg.entity_id(n) for n in kg.entity_names}
    topics = TopicEntities(frozenset({e["e0"]}), frozenset({e["e2"]}))
    sub = retrieve_subgraph(kg, topics, 2)
    scores = {v: 0.25 for v in sub.nodes}
    return kg, e, topics, build_working_graph(sub, topics, scores, "ex", 0, ["q"])


def test_example_types_and_z_edges():
    kg, e, topics, wg = example_graph()
    lay = wg.layout
    assert wg.num_nodes == 5
    types = dict(zip(wg.names, wg.node_types.tolist()))
    assert types == {"z": Z, "e0": Q, "e1": O, "e2": A, "e3": O}
    assert wg.names[:3] == ("z", "e0", "e2")  # topics first
    z_edges = {(s, r, d) for s, r, d in wg.edges() if (s == 0 or d == 0) and s != d}
    assert z_edges == {(0, lay.zq, 1), (1, lay.zq_inv, 0), (0, lay.za, 2), (2, lay.za_inv, 0)}
    assert wg.relevance[0] == 1.0 and (wg.relevance[1:] == 0.25).all()
    assert sum(1 for s, r, d in wg.edges() if r == lay.selfloop and s == d) == wg.num_nodes


def test_relation_layout_is_disjoint():
    lay = RelationLayout(3)
    special = [lay.selfloop, lay.zq, lay.za, lay.zq_inv, lay.za_inv]
    assert special == [6, 7, 8, 9, 10] and lay.num_relations == 11
    assert len(lay.names(["a", "b", "c"])) == 11


def test_empty_subgraph_gives_z_only():
    kg = kg_from_triples(EDGES)
    wg = build_working_graph(Subgraph((), (), frozenset(), kg), TopicEntities(frozenset(), frozenset()), {})
    assert wg.num_nodes == 1 and wg.edges() == [(0, wg.layout.selfloop, 0)]
    assert drop_z_edges(wg) is wg


def test_overlapping_topic_is_answer_with_both_relations():
    kg = kg_from_triples([("e5", "r0", "e6")])
    v = kg.entity_id("e5")
    topics = TopicEntities(frozenset({v}), frozenset({v}))
    nodes = (0, 1)
    wg = build_working_graph(Subgraph(nodes, induced_edges(kg, nodes), frozenset({v}), kg), topics,
                             {0: .5, 1: .5})
    assert wg.node_types[1] == A
    assert {(0, wg.layout.zq, 1), (0, wg.layout.za, 1)} <= set(wg.edges())


def test_build_errors():
    kg, e, topics, _ = example_graph()
    sub = retrieve_subgraph(kg, topics, 2)
    with pytest.raises(DataError):
        build_working_graph(sub, topics, {})
    with pytest.raises(DataError):
        build_working_graph(sub, TopicEntities(frozenset({e["e5"]}), frozenset()), {v: .1 for v in sub.nodes})


def test_connect_z_to_all_and_drop():
    *_, wg = example_graph()
    full = connect_z_to_all(wg)
    assert full.num_edges == wg.num_edges + 4  # two non-topic entities, one pair each
    assert connect_z_to_all(full).num_edges == full.num_edges
    dropped = drop_z_edges(wg)
    assert dropped.num_edges == wg.num_edges - 4
    assert (0, wg.layout.selfloop, 0) in dropped.edges()
    assert not any((s == 0) != (d == 0) for s, _, d in dropped.edges())


@given(st.integers(0, 100_000))
@settings(max_examples=60, deadline=None)
def test_working_graph_invariants(seed):
    wg = random_working_graph(np.random.default_rng(seed))
    n = wg.num_nodes
    assert (wg.node_types == Z).sum() == 1 and wg.node_types[0] == Z
    assert ((wg.src >= 0) & (wg.src < n) & (wg.dst >= 0) & (wg.dst < n)).all()
    from_z = set(wg.dst[(wg.src == 0) & (wg.dst != 0)].tolist())
    assert set(np.flatnonzero(wg.topic_mask).tolist()) <= from_z
    topics = np.flatnonzero(wg.topic_mask)
    # topics occupy 1..|topics| in ascending entity id, the rest follow ascending
    assert topics.tolist() == list(range(1, len(topics) + 1))
    ids = wg.entity_ids
    assert list(ids[topics]) == sorted(ids[topics])
    assert list(ids[len(topics) + 1:]) == sorted(ids[len(topics) + 1:])
    assert wg.rel.max() < wg.num_relations


def test_permute_entities_round_trip(rng):
    wg = random_working_graph(rng)
    perm = rng.permutation(wg.num_nodes - 1)
    moved = permute_entities(wg, perm)
    inverse = np.argsort(perm)
    back = permute_entities(moved, inverse)
    assert back.names == wg.names
    assert sorted(back.edges()) == sorted(wg.edges())
    with pytest.raises(ValueError):
        permute_entities(wg, [0] * (wg.num_nodes - 1) if wg.num_nodes > 2 else [5])
