"""
Training on logical queries over a toy KG
=========================================

Queries ask for the one entity among ten candidates that satisfies a
one-hop, two-hop, conjunctive or negated-conjunctive pattern. The full
model is compared with the same bag-of-tokens encoder scoring choices
without any graph. A short run takes a couple of minutes on one CPU.
"""

import logging

from workgraph import experiments

logging.basicConfig(level=logging.INFO, format="%(message)s")
logging.getLogger("workgraph.trainer").setLevel(logging.WARNING)

kg, train_items, test_items = experiments.logical_query_data()
print(len(train_items), "train and", len(test_items), "test queries;", kg)
print("example:", train_items[0].graphs[0].context_tokens)

# one seed, fewer epochs than the acceptance run
res = experiments.run_logical_queries(seeds=(0,), train_kw={"epochs": 6})
print(res.summary())
