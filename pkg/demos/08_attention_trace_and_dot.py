"""
Attention traces and DOT export
===============================

After a short training run, a best-first walk from z over the highest
attention weights (z, then a topic entity, then another entity) gives a
reasoning trace. The DOT export draws edge width by weight and marks the
trace in red.
"""

from pathlib import Path

from workgraph import experiments
from workgraph.explain import attention_for_graph, export_dot, trace_attention
from workgraph.trainer import TrainConfig, train

kg, train_items, test_items = experiments.negation_data()
model = experiments.build_model(train_items, kg.num_entities, experiments.ModelConfig(D=16, L=2), seed=0)
train(train_items[:100], model, TrainConfig(epochs=5, lr_encoder=3e-3, lr_gnn=3e-3))

item = test_items[1]
wg = item.graphs[item.answer_index]
record = attention_for_graph(model, wg)
trace = trace_attention(record, wg, min_alpha=0.05)
print(" ".join(wg.context_tokens))
for step in trace.steps:
    print(f"  {wg.names[step.src]} -> {wg.names[step.dst]}  alpha={step.alpha:.3f}")

out = Path("trace_demo.dot")
out.write_text(export_dot(wg, trace, record, name=item.example_id), encoding="utf-8")
print("wrote", out, "(render with: dot -Tsvg trace_demo.dot > trace.svg)")
