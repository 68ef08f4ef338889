"""Seeded desk-scale comparisons built from the synthetic tasks.

Each runner generates its data once, then trains one model pair per seed
(seed controls parameter init, shuffling and dropout) and reports the
per-seed metrics together with their means.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tasks
from .graph_builder import drop_z_edges
from .kg_store import augment_inverse_edges
from .model import GraphReasoner, ModelConfig, TokenVocab
from .pipeline import PreprocessConfig, PreprocessStats, preprocess
from .relevance import OverlapScorer
from .trainer import QAItem, TrainConfig, evaluate, train

logger = logging.getLogger(__name__)


@dataclass
class Comparison:
    """Metric of a system vs. a reference system across seeds."""

    metric: str
    system: str
    reference: str
    seeds: list[int]
    system_scores: list[float] = field(default_factory=list)
    reference_scores: list[float] = field(default_factory=list)
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def system_mean(self) -> float:
        return float(np.mean(self.system_scores))

    @property
    def reference_mean(self) -> float:
        return float(np.mean(self.reference_scores))

    @property
    def margin(self) -> float:
        """Mean difference in absolute points (percent)."""
        return 100.0 * (self.system_mean - self.reference_mean)

    def summary(self) -> str:
        return (f"{self.metric}: {self.system}={self.system_mean:.4f} {self.reference}={self.reference_mean:.4f} "
                f"margin={self.margin:+.1f} points over seeds {self.seeds} ({self.seconds:.0f}s)")


def build_model(items: Sequence[QAItem], num_entities: int, config: ModelConfig, seed: int) -> GraphReasoner:
    vocab = TokenVocab.from_graphs(g for it in items for g in it.graphs)
    return GraphReasoner(config, items[0].graphs[0].num_relations, num_entities, vocab, seed=seed)


def fit_and_score(train_items, test_items, num_entities: int, model_config: ModelConfig,
                  train_config: TrainConfig, metric: Callable, graph_fn=None) -> float:
    model = build_model(train_items, num_entities, model_config, train_config.seed)
    train(train_items, model, train_config, graph_fn=graph_fn)
    return metric(evaluate(test_items, model, ks=(1, 3), graph_fn=graph_fn))


# ---------------------------------------------------------------- logical queries

LOGICAL_MODEL = dict(D=32, L=2, dropout_p=0.1)
LOGICAL_TRAIN = dict(epochs=12, batch_size=32, lr_encoder=3e-3, lr_gnn=3e-3)


def logical_query_data(kg_seed: int = 0, data_seed: int = 1, n_train: int = 600, n_test: int = 200):
    toy = tasks.gen_toy_kg(50, 3, 0.05, kg_seed)
    kg = augment_inverse_edges(toy.to_kg())
    per = (n_train + n_test) // len(tasks.PATTERNS)
    exs = tasks.gen_logical_queries(toy, per, seed=data_seed)
    tr, te = tasks.split_examples(exs, n_train, n_test, seed=data_seed + 1)
    items = preprocess(kg, tr + te, OverlapScorer())
    return kg, items[:len(tr)], items[len(tr):]


def run_logical_queries(seeds: Sequence[int] = (0, 1, 2), model_kw: dict | None = None,
                        train_kw: dict | None = None) -> Comparison:
    """Hit@3 of the full model vs. the same encoder without GNN or KG."""
    t0 = time.time()
    kg, tr, te = logical_query_data()
    out = Comparison("hit@3", "full_model", "encoder_only", list(seeds))
    model_kw = {**LOGICAL_MODEL, **(model_kw or {})}
    train_kw = {**LOGICAL_TRAIN, **(train_kw or {})}
    hit3 = lambda rep: rep.hit_at_k[3]  # noqa: E731
    for seed in seeds:
        tcfg = TrainConfig(seed=seed, **train_kw)
        out.system_scores.append(fit_and_score(tr, te, kg.num_entities, ModelConfig(**model_kw), tcfg, hit3))
        out.reference_scores.append(fit_and_score(tr, te, kg.num_entities,
                                                  ModelConfig(**model_kw, use_gnn=False), tcfg, hit3))
        logger.info("seed %d: full_model %.3f encoder_only %.3f", seed, out.system_scores[-1], out.reference_scores[-1])
    out.seconds = time.time() - t0
    return out


def logical_loss_ratio(epochs: int = 50, seed: int = 0, model_kw: dict | None = None) -> tuple[float, list]:
    """Train-loss ratio (after ``epochs`` / before training) on the logical-query task."""
    kg, tr, _ = logical_query_data()
    model = build_model(tr, kg.num_entities, ModelConfig(**{**LOGICAL_MODEL, **(model_kw or {})}), seed)
    res = train(tr, model, TrainConfig(seed=seed, **{**LOGICAL_TRAIN, "epochs": epochs}))
    return res.loss_curve[epochs][1] / res.loss_curve[0][1], res.loss_curve


def run_overfit(n: int = 20, max_epochs: int = 200, seed: int = 0) -> tuple[int | None, float]:
    """Epochs until ``n`` logical queries are all ranked first on their own training set.

    Returns (first epoch at 100% train accuracy or None, final train accuracy).
    """
    kg, tr, _ = logical_query_data()
    items = tr[:n]
    model = build_model(items, kg.num_entities, ModelConfig(D=32, L=2, dropout_p=0.0), seed)
    reached: list[int] = []

    def check(epoch, loss, acc):
        if evaluate(items, model, (1,)).accuracy == 1.0:
            reached.append(epoch)
            return True
        return False

    train(items, model, TrainConfig(seed=seed, epochs=max_epochs, batch_size=n, lr_encoder=3e-3, lr_gnn=3e-3),
          on_epoch=check)
    return (reached[0] if reached else None), evaluate(items, model, (1,)).accuracy


# ---------------------------------------------------------------- negation

NEGATION_MODEL = dict(D=32, L=2, dropout_p=0.1)
NEGATION_TRAIN = dict(epochs=20, batch_size=32, lr_encoder=3e-3, lr_gnn=3e-3)


def negation_data(kg_seed: int = 3, train_pairs: int = 300, test_pairs: int = 100):
    toy = tasks.gen_toy_kg(50, 3, 0.05, kg_seed)
    kg = augment_inverse_edges(toy.to_kg())
    tr = tasks.gen_negation_qa(toy, train_pairs, seed=11).pairs
    te = tasks.gen_negation_qa(toy, test_pairs, seed=12).pairs
    return kg, preprocess(kg, tr, OverlapScorer()), preprocess(kg, te, OverlapScorer())


def run_negation(seeds: Sequence[int] = (0, 1, 2), model_kw: dict | None = None,
                 train_kw: dict | None = None) -> Comparison:
    """Accuracy of the full model vs. the variant without z <-> entity edges."""
    t0 = time.time()
    kg, tr, te = negation_data()
    out = Comparison("accuracy", "full_model", "no_z_edges", list(seeds))
    model_kw = {**NEGATION_MODEL, **(model_kw or {})}
    train_kw = {**NEGATION_TRAIN, **(train_kw or {})}
    acc = lambda rep: rep.accuracy  # noqa: E731
    for seed in seeds:
        tcfg = TrainConfig(seed=seed, **train_kw)
        out.system_scores.append(fit_and_score(tr, te, kg.num_entities, ModelConfig(**model_kw), tcfg, acc))
        out.reference_scores.append(fit_and_score(tr, te, kg.num_entities, ModelConfig(**model_kw), tcfg, acc,
                                                  graph_fn=drop_z_edges))
        logger.info("seed %d: full_model %.3f no_z_edges %.3f", seed, out.system_scores[-1], out.reference_scores[-1])
    out.seconds = time.time() - t0
    return out


# ---------------------------------------------------------------- relevance pruning

PRUNING_MODEL = dict(D=32, L=2, dropout_p=0.1)
PRUNING_TRAIN = dict(epochs=15, batch_size=32, lr_encoder=3e-3, lr_gnn=3e-3)


def pruning_data(prune: str, budget: int | None = None, kg_seed: int = 5, n_train: int = 400,
                 n_test: int = 200, prune_seed: int = 0):
    toy = tasks.gen_toy_kg(80, 3, 0.03, kg_seed, marker="red", marker_fraction=0.2)
    kg = augment_inverse_edges(toy.to_kg())
    exs = tasks.gen_bridge_qa(toy, n_train + n_test, seed=21)
    stats = PreprocessStats()
    if budget is None:  # measure unpruned subgraph sizes first
        preprocess(kg, exs, OverlapScorer(), PreprocessConfig(prune="none"), stats)
        budget = max(1, int(0.5 * float(np.mean(stats.retrieved_nodes))))
        stats = PreprocessStats()
    items = preprocess(kg, exs, OverlapScorer(), PreprocessConfig(max_nodes=budget, prune=prune, seed=prune_seed),
                       stats)
    return kg, items[:n_train], items[n_train:], budget, stats


def run_pruning(seeds: Sequence[int] = (0, 1, 2), model_kw: dict | None = None,
                train_kw: dict | None = None) -> Comparison:
    """Many-entity-split accuracy with relevance pruning vs. random pruning at half the mean subgraph size."""
    t0 = time.time()
    out = Comparison("accuracy_many_entities", "relevance_pruning", "random_pruning", list(seeds))
    model_kw = {**PRUNING_MODEL, **(model_kw or {})}
    train_kw = {**PRUNING_TRAIN, **(train_kw or {})}
    kg, tr_rel, te_rel, budget, st_rel = pruning_data("relevance")
    acc = lambda rep: rep.accuracy  # noqa: E731
    _, many_rel = tasks.gen_entity_count_split(te_rel)
    out.details.update(budget=budget, many=len(many_rel), stats=st_rel.summary())
    for seed in seeds:
        _, tr_rnd, te_rnd, _, _ = pruning_data("random", budget, prune_seed=seed)
        _, many_rnd = tasks.gen_entity_count_split(te_rnd)
        tcfg = TrainConfig(seed=seed, **train_kw)
        out.system_scores.append(fit_and_score(tr_rel, many_rel, kg.num_entities, ModelConfig(**model_kw), tcfg, acc))
        out.reference_scores.append(fit_and_score(tr_rnd, many_rnd, kg.num_entities, ModelConfig(**model_kw),
                                                  tcfg, acc))
        logger.info("seed %d: relevance %.3f random %.3f", seed, out.system_scores[-1], out.reference_scores[-1])
    out.seconds = time.time() - t0
    return out
