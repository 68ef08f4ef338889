"""Example -> per-choice working graphs, plus the on-disk graph cache."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import DataError
from .graph_builder import RelationLayout, WorkingGraph, build_working_graph
from .kg_store import KnowledgeGraph
from .relevance import Scorer, score_subgraph
from .retrieval import (DEFAULT_HOPS, DEFAULT_MAX_NODES, QAExample, Subgraph, TopicEntities,
                        link_entities, prune_subgraph, random_scores, retrieve_subgraph)
from .trainer import QAItem

logger = logging.getLogger(__name__)

PRUNE_MODES = ("relevance", "random", "none")
CACHE_TENSORS = "graphs.wgt"
CACHE_INDEX = "index.json"
CACHE_STATS = "stats.json"


@dataclass
class PreprocessConfig:
    k: int = DEFAULT_HOPS
    max_nodes: int = DEFAULT_MAX_NODES
    prune: str = "relevance"
    seed: int = 0

    def __post_init__(self):
        if self.prune not in PRUNE_MODES:
            raise ValueError(f"prune must be one of {PRUNE_MODES}")


@dataclass
class PreprocessStats:
    retrieved_nodes: list[int] = field(default_factory=list)
    kept_nodes: list[int] = field(default_factory=list)
    edges: list[int] = field(default_factory=list)
    skipped_names: int = 0
    no_topic_choices: int = 0

    def summary(self) -> dict:
        def dist(xs):
            if not xs:
                return {"mean": 0.0, "max": 0, "min": 0}
            return {"mean": float(np.mean(xs)), "max": int(max(xs)), "min": int(min(xs))}
        return {"graphs": len(self.kept_nodes), "retrieved_nodes": dist(self.retrieved_nodes),
                "kept_nodes": dist(self.kept_nodes), "edges": dist(self.edges),
                "skipped_names": self.skipped_names, "no_topic_choices": self.no_topic_choices}


def choice_graph(kg: KnowledgeGraph, example: QAExample, choice: int, scorer: Scorer,
                 config: PreprocessConfig, rng: np.random.Generator,
                 stats: PreprocessStats | None = None) -> WorkingGraph:
    q_tokens = example.question_tokens
    a_tokens = example.choice_tokens(choice)
    topics = link_entities(q_tokens, a_tokens, kg)
    context = q_tokens + a_tokens
    if topics.all:
        sub = retrieve_subgraph(kg, topics, config.k)
    else:
        sub = Subgraph((), (), frozenset(), kg)
    scores = score_subgraph(context, sub, scorer) if sub.nodes else {}
    if stats is not None:
        stats.retrieved_nodes.append(sub.num_nodes)
        stats.skipped_names += len(sub.skipped)
        stats.no_topic_choices += int(not topics.all)
    if config.prune != "none" and sub.num_nodes > config.max_nodes:
        keys = scores if config.prune == "relevance" else random_scores(sub, rng)
        sub = prune_subgraph(sub, keys, config.max_nodes)
    wg = build_working_graph(sub, topics, scores, example.id, choice, context)
    if stats is not None:
        stats.kept_nodes.append(sub.num_nodes)
        stats.edges.append(wg.num_edges)
    return wg


def example_topics(kg: KnowledgeGraph, example: QAExample) -> set[int]:
    out: set[int] = set()
    for i in range(len(example.choices)):
        out |= link_entities(example.question_tokens, example.choice_tokens(i), kg).all
    return out


def preprocess(kg: KnowledgeGraph, examples: Iterable[QAExample], scorer: Scorer,
               config: PreprocessConfig | None = None,
               stats: PreprocessStats | None = None) -> list[QAItem]:
    """Build working graphs for every (example, choice). ``kg`` must be augmented."""
    config = config or PreprocessConfig()
    rng = np.random.default_rng(config.seed)
    items = []
    for ex in examples:
        graphs = [choice_graph(kg, ex, i, scorer, config, rng, stats) for i in range(len(ex.choices))]
        topics = set().union(*(set(g.entity_ids[g.topic_mask].tolist()) for g in graphs))
        meta = dict(ex.meta)
        meta["num_topic_entities"] = len(topics)
        items.append(QAItem(ex.id, graphs, ex.answer_index, meta))
    return items


# ---------------------------------------------------------------- cache

_ARRAYS = ("entity_ids", "node_types", "relevance", "src", "rel", "dst")


def save_cache(directory: str | Path, items: Sequence[QAItem], stats: Mapping | None = None) -> None:
    """Concatenate every graph's arrays into one tensor container plus a JSON index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    graphs = [g for it in items for g in it.graphs]
    if graphs:
        layout = graphs[0].layout
        if any(g.layout != layout for g in graphs):
            raise DataError("cached graphs must share one relation layout")
    tensors = {}
    for name in _ARRAYS:
        parts = [np.asarray(getattr(g, name), dtype=np.float64) for g in graphs]
        tensors[name] = np.concatenate(parts) if parts else np.zeros(0)
    tensors["num_nodes"] = np.array([g.num_nodes for g in graphs], dtype=np.float64)
    tensors["num_edges"] = np.array([g.num_edges for g in graphs], dtype=np.float64)
    tc.save_tensors(directory / CACHE_TENSORS, tensors)
    index = {
        "num_kg_relations": graphs[0].layout.num_kg_relations if graphs else 0,
        "relation_names": list(graphs[0].relation_names) if graphs else [],
        "items": [{
            "id": it.example_id, "answer_index": it.answer_index, "meta": dict(it.meta),
            "graphs": [{"names": list(g.names), "context_tokens": list(g.context_tokens)} for g in it.graphs],
        } for it in items],
    }
    (directory / CACHE_INDEX).write_text(json.dumps(index, sort_keys=True), encoding="utf-8")
    if stats is not None:
        (directory / CACHE_STATS).write_text(json.dumps(stats, indent=1, sort_keys=True), encoding="utf-8")


def load_cache(directory: str | Path) -> list[QAItem]:
    directory = Path(directory)
    try:
        index = json.loads((directory / CACHE_INDEX).read_text(encoding="utf-8"))
        tensors = tc.load_tensors(directory / CACHE_TENSORS)
    except FileNotFoundError as exc:
        raise DataError(f"graph cache incomplete: {exc.filename}") from None
    layout = RelationLayout(int(index["num_kg_relations"]))
    rel_names = tuple(index["relation_names"])
    n_nodes = tensors["num_nodes"].astype(np.int64)
    n_edges = tensors["num_edges"].astype(np.int64)
    node_off = np.concatenate([[0], np.cumsum(n_nodes)])
    edge_off = np.concatenate([[0], np.cumsum(n_edges)])
    items = []
    gi = 0
    for rec in index["items"]:
        graphs = []
        for ci, grec in enumerate(rec["graphs"]):
            a, b = node_off[gi], node_off[gi + 1]
            c, d = edge_off[gi], edge_off[gi + 1]
            graphs.append(WorkingGraph(
                entity_ids=tensors["entity_ids"][a:b].astype(np.int64),
                names=tuple(grec["names"]),
                node_types=tensors["node_types"][a:b].astype(np.int64),
                relevance=tensors["relevance"][a:b].copy(),
                src=tensors["src"][c:d].astype(np.int64),
                rel=tensors["rel"][c:d].astype(np.int64),
                dst=tensors["dst"][c:d].astype(np.int64),
                layout=layout, relation_names=rel_names,
                example_id=rec["id"], choice_index=ci,
                context_tokens=tuple(grec["context_tokens"]),
            ))
            gi += 1
        items.append(QAItem(rec["id"], graphs, int(rec["answer_index"]), rec["meta"]))
    if gi != n_nodes.shape[0]:
        raise DataError("graph cache index and tensors disagree")
    return items
