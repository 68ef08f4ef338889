import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from workgraph.errors import DataError, KGFormatError
from workgraph.kg_store import (RelationId, augment_inverse_edges, load_entity_embeddings, load_kg,
                                read_kg, serialize_kg)

FIVE = "e0\tr0\te1\ne1\tr0\te2\ne0\tr1\te3\ne3\tr0\te4\ne4\tr1\te5\n"


def test_counts_before_augmentation():
    kg = load_kg(FIVE)
    assert (kg.num_entities, kg.num_relations, kg.num_edges) == (6, 2, 5)
    assert kg.entity_names == ("e0", "e1", "e2", "e3", "e4", "e5")


def test_duplicate_triple_dropped():
    kg = load_kg(FIVE + "e0\tr0\te1\n")
    assert kg.num_edges == 5


def test_wrong_field_count_reports_line():
    with pytest.raises(KGFormatError) as info:
        load_kg("a\tr\tb\n\nbad line\n")
    assert info.value.line_number == 3
    assert "line 3" in str(info.value)


def test_empty_field_and_empty_input():
    with pytest.raises(KGFormatError):
        load_kg("a\t\tb\n")
    with pytest.raises(KGFormatError):
        load_kg("\n\n")


def test_augmentation_doubles_and_pairs():
    kg = augment_inverse_edges(load_kg(FIVE))
    assert (kg.num_edges, kg.num_relations) == (10, 4)
    e0, e1 = kg.entity_id("e0"), kg.entity_id("e1")
    assert (RelationId(2, is_inverse=True), e0) in kg.neighbors(e1)
    assert kg.relation_name(2) == "r0^-1"
    assert kg.selfloop == RelationId(4, is_selfloop=True)
    assert kg.relation_name(kg.selfloop) == "self"
    with pytest.raises(DataError):
        augment_inverse_edges(kg)


def test_self_edge_keeps_both_directions():
    kg = augment_inverse_edges(load_kg("e0\tr0\te0\n"))
    assert kg.neighbors(0) == [(RelationId(0), 0), (RelationId(1, is_inverse=True), 0)]


def test_neighbors_basic_cases():
    kg = load_kg("a\tr\tb\nc\tr\ta\n")
    assert kg.neighbors(kg.entity_id("b")) == []  # only a tail before augmentation
    aug = augment_inverse_edges(kg)
    assert len(aug.neighbors(aug.entity_id("a"))) == 2
    with pytest.raises(IndexError):
        aug.neighbors(99)


def test_star_graph_degree():
    # center with 7 outgoing and 7 incoming edges: degree 7 before augmentation
    lines = [f"c\tr0\tl{i}\n" for i in range(7)] + [f"m{i}\tr1\tc\n" for i in range(7)]
    kg = load_kg("".join(lines))
    c = kg.entity_id("c")
    assert len(kg.neighbors(c)) == 7
    assert len(augment_inverse_edges(kg).neighbors(c)) == 14


def test_read_kg_from_file(tmp_path):
    path = tmp_path / "kg.tsv"
    path.write_text(FIVE, encoding="utf-8")
    assert read_kg(path, augment=True).num_edges == 10


def test_entity_embeddings(tmp_path):
    kg = load_kg(FIVE)
    emb = load_entity_embeddings("e0\t1 2\ne3\t0.5 -1\nunknown\t9 9\n", kg)
    assert emb.dim == 2
    assert emb.present.tolist() == [True, False, False, True, False, False]
    np.testing.assert_array_equal(emb.vectors[3], [0.5, -1.0])
    with pytest.raises(KGFormatError):
        load_entity_embeddings("e0\t1 2\ne1\t1\n", kg)


triples = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 2), st.integers(0, 7)), min_size=1, max_size=40)


def _text(ts):
    return "".join(f"n{h}\trel{r}\tn{t}\n" for h, r, t in ts)


@given(triples)
@settings(max_examples=80, deadline=None)
def test_adjacency_covers_augmented_edges(ts):
    kg = augment_inverse_edges(load_kg(_text(ts)))
    assert sum(kg.degree(v) for v in range(kg.num_entities)) == kg.num_edges == 2 * len(set(ts))
    listed = sorted((v, r.index, t) for v in range(kg.num_entities) for r, t in kg.neighbors(v))
    assert listed == sorted(zip(kg.heads.tolist(), kg.relations.tolist(), kg.tails.tolist()))
    for v in range(kg.num_entities):
        assert kg.neighbors(v) == kg.neighbors(v)


@given(triples)
@settings(max_examples=80, deadline=None)
def test_serialize_round_trip(ts):
    text = _text(ts)
    kg = load_kg(text)
    assert sorted(serialize_kg(kg).splitlines()) == sorted(set(text.splitlines()))
    assert serialize_kg(augment_inverse_edges(kg)) == serialize_kg(kg)


def test_graph_is_read_only():
    kg = load_kg(FIVE)
    with pytest.raises(ValueError):
        kg.heads[0] = 3
