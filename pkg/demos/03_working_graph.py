"""
The working graph
=================

A context node z joins the retrieved subgraph. It links to every question
entity and every answer entity through two extra relations (and their
inverses), and every node gets a self-loop.
"""

from workgraph import augment_inverse_edges, build_working_graph, link_entities, load_kg, retrieve_subgraph
from workgraph.graph_builder import NODE_TYPE_NAMES, drop_z_edges
from workgraph.relevance import OverlapScorer, score_subgraph
from workgraph.retrieval import tokenize

kg = augment_inverse_edges(load_kg("e0\tr\te1\ne1\ts\te2\ne2\tr\te3\n"))
q, a = tokenize("where is e0"), tokenize("e2")
topics = link_entities(q, a, kg)
sub = retrieve_subgraph(kg, topics, 2)
wg = build_working_graph(sub, topics, score_subgraph(q + a, sub, OverlapScorer()), "demo", 0, q + a)

# z first, then topic entities, then the rest
for i, name in enumerate(wg.names):
    print(i, name, NODE_TYPE_NAMES[wg.node_types[i]], f"rho={wg.relevance[i]:.3f}")
for s, r, t in wg.edges():
    print(f"  {wg.names[s]} -{wg.relation_names[r]}-> {wg.names[t]}")

# the ablation without z edges keeps only KG edges and self-loops
print("edges:", wg.num_edges, "without z edges:", drop_z_edges(wg).num_edges)
