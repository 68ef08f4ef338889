"""
Relevance vs. random pruning under a tight node budget
======================================================

Bridge questions are answered through a marked ("red") entity two steps
from an anchor. The relevance scorer favors marked names, so pruning by
relevance keeps the bridges that random pruning tends to drop. Accuracy
is reported on the questions with many topic entities.
"""

import logging

from workgraph import experiments

logging.basicConfig(level=logging.INFO, format="%(message)s")
logging.getLogger("workgraph.trainer").setLevel(logging.WARNING)

kg, train_items, test_items, budget, stats = experiments.pruning_data("relevance")
print("node budget", budget, "| retrieved", stats.summary()["retrieved_nodes"], "| kept", stats.summary()["kept_nodes"])

res = experiments.run_pruning(seeds=(0,), train_kw={"epochs": 8})
print(res.summary())
