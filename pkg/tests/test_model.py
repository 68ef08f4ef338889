import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import kg_from_triples, random_working_graph
from modelkit import full_model_gradient_error, model_for, random_item
from workgraph import tensor_core as tc
from workgraph.errors import DataError
from workgraph.graph_builder import O, Q, build_working_graph, drop_z_edges, permute_entities
from workgraph.kg_store import EntityEmbeddings
from workgraph.model import GraphReasoner, ModelConfig, TokenVocab, collate, load_external_context_vectors
from workgraph.retrieval import Subgraph, TopicEntities, induced_edges


def forward(model, graphs, **kw):
    batch = collate(graphs, model.vocab)
    return batch, model.forward(batch, **kw)


def test_config_validation_and_defaults():
    cfg = ModelConfig()
    assert (cfg.D, cfg.L, cfg.dropout_p, cfg.d_lm) == (200, 5, 0.2, 200)
    with pytest.raises(ValueError):
        ModelConfig(D=7)
    with pytest.raises(ValueError):
        ModelConfig(L=0)
    assert ModelConfig.from_dict(ModelConfig(D=8).to_dict()) == ModelConfig(D=8)


def test_parameter_widths_at_default_size():
    m = GraphReasoner(ModelConfig(), num_relations=11, num_entities=5, vocab=TokenVocab(["a"]))
    s = m.store
    assert s["gnn.f_u.weight"].shape == (4, 100)
    assert s["gnn.f_r.0.weight"].shape == (11 + 8, 200)
    assert s["gnn.layer0.f_m.weight"].shape == (500, 200)
    assert s["gnn.layer0.f_q.weight"].shape == (400, 200)
    assert s["gnn.layer0.f_k.weight"].shape == (600, 200)
    assert s["gnn.f_rho.1.weight"].shape == (100, 100)
    assert s["head.0.weight"].shape == (600, 200)
    assert "gnn.layer4.f_n.bn.gamma" in s and "gnn.layer5.f_m.weight" not in s


def test_encoder_is_bag_of_tokens(rng):
    wg = random_working_graph(rng)
    vocab = TokenVocab(["a", "b", "c"])
    model = GraphReasoner(ModelConfig(D=8, L=1), wg.num_relations, 20, vocab)
    g1 = replace(wg, context_tokens=("a", "b", "c"))
    g2 = replace(wg, context_tokens=("c", "a", "b"))
    g3 = replace(wg, context_tokens=("zzz",))
    z = model.encode_context(collate([g1, g2, g3], vocab)).data
    np.testing.assert_allclose(z[0], z[1], atol=1e-15)
    assert z.shape == (3, 8)
    with pytest.raises(DataError):
        collate([replace(wg, context_tokens=())], vocab)


def test_zero_embedding_gives_zero_initial_state(rng):
    wg = random_working_graph(rng)
    n_ent = int(wg.entity_ids.max()) + 1
    emb = EntityEmbeddings(np.zeros((n_ent, 6)), np.ones(n_ent, dtype=bool))
    model = GraphReasoner(ModelConfig(D=8, L=1), wg.num_relations, n_ent, TokenVocab.from_graphs([wg]), emb)
    batch = collate([wg], model.vocab)
    h0 = model.init_node_states(batch, model.encode_context(batch)).data
    assert h0.shape == (wg.num_nodes, 8)
    np.testing.assert_array_equal(h0[1:], 0.0)
    missing = EntityEmbeddings(np.zeros((n_ent, 6)), np.zeros(n_ent, dtype=bool))
    model = GraphReasoner(ModelConfig(D=8, L=1), wg.num_relations, n_ent, TokenVocab.from_graphs([wg]), missing)
    with pytest.raises(DataError):
        model(collate([wg], model.vocab))


def test_relation_embedding_depends_on_endpoint_types():
    kg = kg_from_triples([("a", "r", "b"), ("c", "r", "d")])
    a, b, c, d = (kg.entity_id(n) for n in "abcd")
    nodes = tuple(sorted((a, b, c, d)))
    topics = TopicEntities(frozenset({a}), frozenset())
    wg = build_working_graph(Subgraph(nodes, induced_edges(kg, nodes), topics.all, kg), topics,
                             {v: .5 for v in nodes}, context_tokens=["x"])
    model = GraphReasoner(ModelConfig(D=8, L=1), wg.num_relations, 4, TokenVocab(["x"]))
    batch = collate([wg], model.vocab)
    _, r = model.type_relation_embed(batch)
    fwd = [e for e, (s, rel, t) in enumerate(wg.edges()) if rel == 0]
    types = [(wg.node_types[wg.src[e]], wg.node_types[wg.dst[e]]) for e in fwd]
    assert (Q, O) in types and (O, O) in types
    assert not np.allclose(r.data[fwd[0]], r.data[fwd[1]])
    assert model.relation_rows <= wg.num_relations * 16


def test_self_loop_only_node_and_single_node_graph():
    kg = kg_from_triples([("a", "r", "b")])
    wg = build_working_graph(Subgraph((), (), frozenset(), kg), TopicEntities(frozenset(), frozenset()), {},
                             context_tokens=["x"])
    model = GraphReasoner(ModelConfig(D=8, L=2, batch_norm=False), wg.num_relations, 2, TokenVocab(["x"]))
    batch, res = forward(model, [wg])
    assert all(a.tolist() == [1.0] for a in res.attention)
    np.testing.assert_array_equal(res.pooled.data, 0.0)  # no entity rows to pool


def test_gamma_is_scaled_dot_product(rng):
    wg = random_working_graph(rng)
    model = GraphReasoner(ModelConfig(D=8, L=1, dropout_p=0.0, batch_norm=False), wg.num_relations, 40, TokenVocab.from_graphs([wg]))
    batch = collate([wg], model.vocab)
    z = model.encode_context(batch)
    h = model.init_node_states(batch, z)
    u, r = model.type_relation_embed(batch)
    rho = model.embed_relevance(batch)
    alpha = model.compute_attention(0, h, u, r, rho, batch).data
    lay = model.layers[0]
    q = lay["f_q"](tc.concat([h, u, rho], 1)).data
    k = lay["f_k"](tc.concat([tc.take_rows(h, batch.dst), tc.take_rows(u, batch.dst),
                              tc.take_rows(rho, batch.dst), r], 1)).data
    gamma = (q[batch.src] * k).sum(1) / math.sqrt(8)
    expect = np.exp(gamma - gamma.max())
    denom = np.bincount(batch.src, weights=expect, minlength=batch.num_nodes)
    np.testing.assert_allclose(alpha, expect / denom[batch.src], rtol=1e-12)


def test_zero_update_path_is_pure_residual(rng):
    item = random_item(rng)
    model = model_for([item], L=2)
    for layer in range(2):
        model.store[f"gnn.layer{layer}.f_n.1.weight"].data[:] = 0.0
    batch = collate(item.graphs, model.vocab)
    z = model.encode_context(batch)
    h0 = model.init_node_states(batch, z)
    res = model.forward(batch)
    np.testing.assert_allclose(res.h.data, h0.data, atol=0)


def test_pooling_modes(rng):
    item = random_item(rng)
    for mode in ("mean", "attention"):
        model = model_for([item], pooling=mode)
        batch, res = forward(model, item.graphs)
        if mode == "attention":
            sums = np.bincount(batch.node_graph[batch.entity_nodes], weights=res.pool_weights)
            np.testing.assert_allclose(sums, 1.0, atol=1e-9)
        else:
            h = res.h.data
            for i in range(batch.num_graphs):
                rows = [v for v in batch.entity_nodes if batch.node_graph[v] == i]
                np.testing.assert_allclose(res.pooled.data[i], h[rows].mean(0), atol=1e-12)


def test_one_entity_graph_pools_to_that_entity():
    kg = kg_from_triples([("a", "r", "b")])
    a = kg.entity_id("a")
    topics = TopicEntities(frozenset({a}), frozenset())
    wg = build_working_graph(Subgraph((a,), (), topics.all, kg), topics, {a: .5}, context_tokens=["x"])
    for mode in ("mean", "attention"):
        model = GraphReasoner(ModelConfig(D=8, L=1, pooling=mode), wg.num_relations, 2, TokenVocab(["x"]))
        _, res = forward(model, [wg])
        np.testing.assert_allclose(res.pooled.data[0], res.h.data[1], atol=1e-12)


def test_identical_choices_tie(rng):
    wg = random_working_graph(rng)
    model = GraphReasoner(ModelConfig(D=8, L=2, dropout_p=0.0, batch_norm=False), wg.num_relations, 40, TokenVocab.from_graphs([wg]))
    _, res = forward(model, [wg, wg])
    assert res.logits.data[0] == res.logits.data[1]


def test_attention_normalized_per_source_every_layer(rng):
    for mode in ("outgoing", "incoming"):
        item = random_item(rng)
        model = model_for([item], L=3, normalize_attention_over=mode)
        batch, res = forward(model, item.graphs)
        seg = batch.src if mode == "outgoing" else batch.dst
        for a in res.attention:
            np.testing.assert_allclose(np.bincount(seg, weights=a, minlength=batch.num_nodes), 1.0, atol=1e-6)


def test_message_count_and_relation_rows(rng):
    item = random_item(rng)
    model = model_for([item], L=3)
    batch = collate(item.graphs, model.vocab)
    model.message_count = 0
    model(batch)
    assert model.message_count == 3 * batch.num_edges
    assert model.relation_rows <= model.num_relations * 16


def test_dropped_z_edges_isolate_z(rng):
    item = random_item(rng)
    graphs = [drop_z_edges(g) for g in item.graphs]
    model = model_for([item], L=2)
    base = forward(model, graphs)[1].z_gnn.data
    model.store["gnn.entity_table"].data[:] += rng.normal(size=model.store["gnn.entity_table"].shape)
    np.testing.assert_allclose(forward(model, graphs)[1].z_gnn.data, base, atol=1e-9)
    # with z-edges in place the same perturbation moves z
    with_edges = forward(model, item.graphs)[1].z_gnn.data
    model.store["gnn.entity_table"].data[:] *= 2.0
    assert not np.allclose(forward(model, item.graphs)[1].z_gnn.data, with_edges)


def test_permutation_equivariance(rng):
    item = random_item(rng)
    model = model_for([item], L=2)
    _, res = forward(model, item.graphs)
    moved = [permute_entities(g, rng.permutation(g.num_nodes - 1)) for g in item.graphs]
    _, res2 = forward(model, moved)
    for field in ("logits", "z_gnn", "pooled"):
        np.testing.assert_allclose(getattr(res2, field).data, getattr(res, field).data, atol=1e-9)


def test_save_load_round_trip(tmp_path, rng):
    item = random_item(rng)
    model = model_for([item], L=2, batch_norm=True)
    model.save(tmp_path, {"ablations": []})
    again = GraphReasoner.load(tmp_path)
    batch = collate(item.graphs, model.vocab)
    np.testing.assert_array_equal(model(batch).data, again(batch).data)
    other = model_for([item], L=2, D=16)
    with pytest.raises(DataError):
        other.store.load_state_dict(tc.load_tensors(tmp_path / "checkpoint.wgt"))


def test_external_context_vectors(rng):
    vecs = load_external_context_vectors("ex\t0\t1 2 3 4 5 6 7 8\nex\t1\t0 0 0 0 0 0 0 0\n")
    assert vecs[("ex", 0)].tolist() == [1, 2, 3, 4, 5, 6, 7, 8]
    item = random_item(rng, num_choices=2)
    model = model_for([item])
    batch = collate(item.graphs, model.vocab, vecs)
    np.testing.assert_array_equal(model.encode_context(batch).data, np.stack([vecs[("ex", 0)], vecs[("ex", 1)]]))
    with pytest.raises(DataError):
        collate(item.graphs, model.vocab, {})
    with pytest.raises(DataError):
        load_external_context_vectors("ex\t0\t1 2\nex\t1\t1\n")


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_full_model_gradients(seed):
    assert full_model_gradient_error(seed, checks=5) <= 1e-4
