import math
import re

import pytest
from hypothesis import given, settings, strategies as st

from workgraph import tasks
from workgraph.errors import DataError
from workgraph.retrieval import QAExample


@pytest.fixture(scope="module")
def toy():
    return tasks.gen_toy_kg(50, 3, 0.05, seed=0)


@pytest.fixture(scope="module")
def queries(toy):
    return tasks.gen_logical_queries(toy, 50, seed=1)


def test_toy_kg_is_deterministic_and_sized(toy):
    again = tasks.gen_toy_kg(50, 3, 0.05, seed=0)
    assert again.tsv() == toy.tsv()
    assert tasks.gen_toy_kg(50, 3, 0.05, seed=1).tsv() != toy.tsv()
    # 3 relations * 50*49 ordered pairs * 0.05
    mean = 3 * 50 * 49 * 0.05
    sd = math.sqrt(3 * 50 * 49 * 0.05 * 0.95)
    assert abs(len(toy.triples) - mean) <= 3 * sd
    assert all(h != t for h, _, t in toy.triples)


def test_toy_kg_round_trips_through_tsv(toy):
    kg = toy.to_kg()
    assert kg.num_entities == len({h for h, _, _ in toy.triples} | {t for _, _, t in toy.triples})
    assert kg.num_edges == len(toy.triples)


def test_empty_toy_kg_raises():
    with pytest.raises(DataError):
        tasks.gen_toy_kg(20, 2, 0.0, seed=0)
    with pytest.raises(ValueError):
        tasks.gen_toy_kg(5, 2, 0.5, seed=0)


def test_marked_names():
    kg = tasks.gen_toy_kg(40, 2, 0.1, seed=2, marker="red", marker_fraction=0.25)
    assert len(kg.marked) == 10
    assert sum(n.startswith("red_") for n in kg.entity_names) == 10


def brute_force_answers(question: str, kg) -> set[str]:
    """Evaluate a logical query by scanning the triple list directly."""
    ent = {n: i for i, n in enumerate(kg.entity_names)}
    rel = {n: i for i, n in enumerate(kg.relation_names)}
    T = set(kg.triples)

    def tails(a, r):
        return {t for (h, rr, t) in T if h == a and rr == r}

    m = re.fullmatch(r"which entity has relation (\S+) from an entity that has relation (\S+) from (\S+)", question)
    if m:
        mids = tails(ent[m[3]], rel[m[2]])
        ans = set().union(*(tails(x, rel[m[1]]) for x in mids)) if mids else set()
        return {kg.entity_names[v] for v in ans}
    m = re.fullmatch(r"which entity has relation (\S+) from (\S+) and (not )?relation (\S+) from (\S+)", question)
    if m:
        left, right = tails(ent[m[2]], rel[m[1]]), tails(ent[m[5]], rel[m[4]])
        ans = left - right if m[3] else left & right
        return {kg.entity_names[v] for v in ans}
    m = re.fullmatch(r"which entity has relation (\S+) from (\S+)", question)
    return {kg.entity_names[v] for v in tails(ent[m[2]], rel[m[1]])}


def test_gold_agrees_with_brute_force(toy, queries):
    assert len(queries) == 200
    for ex in queries:
        answers = brute_force_answers(ex.question, toy)
        anchors = set(ex.meta["anchors"])
        hits = [c for c in ex.choices if c in answers and c not in anchors]
        assert hits == [ex.choices[ex.answer_index]], ex.id
        assert len(ex.choices) == tasks.NUM_CANDIDATES


def test_answer_set_matches_brute_force(toy, queries):
    out = toy.out_sets()
    ent = {n: i for i, n in enumerate(toy.entity_names)}
    rel = {n: i for i, n in enumerate(toy.relation_names)}
    for ex in queries:
        q = tasks.LogicalQuery(ex.meta["pattern"], tuple(ent[a] for a in ex.meta["anchors"]),
                               tuple(rel[r] for r in ex.meta["relations"]))
        assert q.text(toy) == ex.question
        got = {toy.entity_names[v] for v in tasks.answer_set(q, out)}
        assert got == brute_force_answers(ex.question, toy)


def test_parse_round_trip(queries):
    for ex in queries:
        parsed = tasks.parse_logical_query(ex)
        assert parsed["pattern"] == ex.meta["pattern"]
        assert parsed["anchors"] == ex.meta["anchors"]
        assert parsed["relations"] == ex.meta["relations"]
        assert parsed["gold"] == ex.choices[ex.answer_index]
    with pytest.raises(DataError):
        tasks.parse_logical_query(QAExample("x", "what is this", ("a",), 0))


def test_generation_is_seeded(toy, queries):
    assert tasks.gen_logical_queries(toy, 50, seed=1) == queries


def test_negated_queries_have_near_misses(toy, queries):
    for ex in queries:
        if ex.meta["pattern"] != "negated_conjunction":
            continue
        q = ex.question.replace(" and not ", " and ")
        left = brute_force_answers(q.split(" and ")[0], toy)
        assert left & brute_force_answers(q, toy)


@given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 20))
@settings(max_examples=20, deadline=None)
def test_split_sizes(n_train, n_test, seed):
    exs = [QAExample(f"e{i}", "q", ("a", "b"), 0, {"pattern": p}) for p in "ab" for i in range(60)]
    tr, te = tasks.split_examples(exs, 2 * n_train, 2 * n_test, seed)
    assert len(tr) == 2 * n_train and len(te) == 2 * n_test
    assert not {id(x) for x in tr} & {id(x) for x in te}


def test_split_too_small_raises():
    exs = [QAExample("e", "q", ("a",), 0)]
    with pytest.raises(DataError):
        tasks.split_examples(exs, 1, 1, 0)


def test_negation_pairs(toy):
    ds = tasks.gen_negation_qa(toy, 100, seed=3)
    assert len(ds.pairs) == 200
    for pos, neg in zip(ds.pairs[::2], ds.pairs[1::2]):
        assert pos.choices == neg.choices and pos.meta["pair"] == neg.meta["pair"]
        assert not pos.meta["negated"] and neg.meta["negated"]
        assert pos.answer_index != neg.answer_index
        assert tasks.negation_gold(pos.question, pos.choices, toy) == pos.answer_index
        assert tasks.negation_gold(neg.question, neg.choices, toy) == neg.answer_index
    assert len(ds.substitutions) == 100
    for pair, sub in zip(ds.pairs[1::2], ds.substitutions):
        a, b = pair.question.split(), sub.question.split()
        assert len(a) == len(b) and sum(x != y for x, y in zip(a, b)) == 1
        assert sub.answer_index == tasks.negation_gold(sub.question, sub.choices, toy)


def test_bridge_questions():
    kg = tasks.gen_toy_kg(80, 3, 0.03, 5, marker="red", marker_fraction=0.2)
    exs = tasks.gen_bridge_qa(kg, 60, seed=21)
    idx = {n: i for i, n in enumerate(kg.entity_names)}
    for ex in exs:
        anchors = [idx[a] for a in ex.meta["anchors"]]
        assert tasks.bridge_gold(anchors, [idx[c] for c in ex.choices], kg) == [ex.answer_index]
        assert 1 <= ex.meta["num_anchors"] <= 6
    with pytest.raises(ValueError):
        tasks.gen_bridge_qa(tasks.gen_toy_kg(30, 2, 0.1, 0), 1, seed=0)


def test_entity_count_split():
    items = [QAExample(f"e{i}", "q", ("a",), 0, {"num_topic_entities": c}) for i, c in enumerate([1, 2, 3, 4, 5])]
    few, many = tasks.gen_entity_count_split(items)
    assert [x.meta["num_topic_entities"] for x in few] == [1, 2, 3]
    assert [x.meta["num_topic_entities"] for x in many] == [4, 5]
    few, many = tasks.gen_entity_count_split(items, threshold=10)
    assert len(few) == 5 and many == []
