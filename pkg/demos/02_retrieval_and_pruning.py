"""
Linking, k-hop retrieval and relevance pruning
==============================================

Question and answer tokens are matched to entity names (longest span
first). The subgraph keeps every node on a path of length <= k between two
distinct topic entities. When it is over budget, the highest-relevance
non-topic nodes survive.
"""

from workgraph import augment_inverse_edges, link_entities, load_kg, prune_subgraph, retrieve_subgraph
from workgraph.relevance import OverlapScorer, score_subgraph
from workgraph.retrieval import tokenize

kg = augment_inverse_edges(load_kg("""revolving_door\tat_location\tbank
bank\tused_for\tmoney
revolving_door\tis_a\tdoor
door\tpart_of\tbuilding
bank\tis_a\tbuilding
money\trelated_to\tsecurity
"""))

question = tokenize("A revolving door is convenient for two direction travel, but also serves as security at a")
answer = tokenize("bank")
topics = link_entities(question, answer, kg)
print("question entities:", sorted(kg.entity_name(v) for v in topics.v_q))
print("answer entities:", sorted(kg.entity_name(v) for v in topics.v_a))

for k in (1, 2, 3):
    sub = retrieve_subgraph(kg, topics, k)
    print(f"k={k}:", [kg.entity_name(v) for v in sub.nodes])

# score every retrieved node against the context, then keep a budget of 4
sub = retrieve_subgraph(kg, topics, 3)
scores = score_subgraph(question + answer, sub, OverlapScorer())
for v in sub.nodes:
    print(f"  {kg.entity_name(v):15s} rho={scores[v]:.3f}")
small = prune_subgraph(sub, scores, 4)
print("pruned:", [kg.entity_name(v) for v in small.nodes])
