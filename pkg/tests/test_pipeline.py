import json

import numpy as np
import pytest

from workgraph import tasks
from workgraph.errors import DataError
from workgraph.kg_store import augment_inverse_edges
from workgraph.pipeline import PreprocessConfig, PreprocessStats, load_cache, preprocess, save_cache
from workgraph.relevance import OverlapScorer


@pytest.fixture(scope="module")
def setup():
    toy = tasks.gen_toy_kg(50, 3, 0.05, 3)
    kg = augment_inverse_edges(toy.to_kg())
    exs = tasks.gen_negation_qa(toy, 5, seed=0).pairs
    return toy, kg, exs


def test_one_graph_per_choice(setup):
    _, kg, exs = setup
    stats = PreprocessStats()
    items = preprocess(kg, exs, OverlapScorer(), stats=stats)
    assert len(exs) == 10 and sum(it.num_choices for it in items) == 40
    assert stats.summary()["graphs"] == 40
    for ex, it in zip(exs, items):
        assert it.example_id == ex.id and it.answer_index == ex.answer_index
        assert it.meta["num_topic_entities"] >= 2
        for c, g in enumerate(it.graphs):
            assert g.choice_index == c and g.names[0] == "z"
            assert ex.choices[c] in g.names


def test_budget_is_respected(setup):
    _, kg, exs = setup
    for mode in ("relevance", "random"):
        items = preprocess(kg, exs, OverlapScorer(), PreprocessConfig(max_nodes=5, prune=mode))
        for it in items:
            for g in it.graphs:
                kept = g.num_nodes - 1
                assert kept <= max(5, int(g.topic_mask.sum()))
    with pytest.raises(ValueError):
        PreprocessConfig(prune="largest")


def test_cache_round_trip(tmp_path, setup):
    _, kg, exs = setup
    items = preprocess(kg, exs, OverlapScorer())
    save_cache(tmp_path, items, {"note": 1})
    back = load_cache(tmp_path)
    assert json.loads((tmp_path / "stats.json").read_text()) == {"note": 1}
    assert len(back) == len(items)
    for a, b in zip(items, back):
        assert (a.example_id, a.answer_index) == (b.example_id, b.answer_index)
        for ga, gb in zip(a.graphs, b.graphs):
            for field in ("entity_ids", "node_types", "relevance", "src", "rel", "dst"):
                np.testing.assert_array_equal(getattr(ga, field), getattr(gb, field))
            assert ga.names == gb.names and ga.context_tokens == gb.context_tokens
            assert ga.layout == gb.layout and ga.relation_names == gb.relation_names


def test_incomplete_cache_raises(tmp_path):
    with pytest.raises(DataError):
        load_cache(tmp_path)
