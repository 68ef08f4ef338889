"""Working graphs: a retrieved subgraph joined to a QA-context node ``z``.

Local node 0 is ``z``; entities follow, topic entities first (ascending id)
then the rest (ascending id). Relation ids on a working graph extend the
augmented KG relations::

    [0, m)        KG relations
    [m, 2m)       their inverses
    2m            self-loop
    2m+1, 2m+2    z->question entity, z->answer entity
    2m+3, 2m+4    inverses of the two z relations
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .kg_store import INVERSE_SUFFIX, SELFLOOP_NAME, EntityId
from .retrieval import Subgraph, TopicEntities

Z, Q, A, O = 0, 1, 2, 3
NODE_TYPE_NAMES = ("Z", "Q", "A", "O")
NUM_NODE_TYPES = 4


@dataclass(frozen=True)
class RelationLayout:
    num_kg_relations: int  # forward relations only

    @property
    def selfloop(self) -> int:
        return 2 * self.num_kg_relations

    @property
    def zq(self) -> int:
        return 2 * self.num_kg_relations + 1

    @property
    def za(self) -> int:
        return 2 * self.num_kg_relations + 2

    @property
    def zq_inv(self) -> int:
        return 2 * self.num_kg_relations + 3

    @property
    def za_inv(self) -> int:
        return 2 * self.num_kg_relations + 4

    @property
    def num_relations(self) -> int:
        return 2 * self.num_kg_relations + 5

    def is_z_relation(self, rel: int) -> bool:
        return rel > self.selfloop

    def names(self, kg_relation_names: Sequence[str]) -> tuple[str, ...]:
        base = list(kg_relation_names[: self.num_kg_relations])
        return tuple(base + [n + INVERSE_SUFFIX for n in base]
                     + [SELFLOOP_NAME, "r_zq", "r_za", "r_zq" + INVERSE_SUFFIX, "r_za" + INVERSE_SUFFIX])


@dataclass(frozen=True)
class WorkingGraph:
    """Typed, scored graph over local node indices.

    ``entity_ids[0]`` is -1 for ``z``. Arrays are treated as immutable.
    """

    entity_ids: np.ndarray
    names: tuple[str, ...]
    node_types: np.ndarray
    relevance: np.ndarray
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    layout: RelationLayout
    relation_names: tuple[str, ...]
    example_id: str = ""
    choice_index: int = 0
    context_tokens: tuple[str, ...] = ()
    meta: Mapping[str, object] = field(default_factory=dict, compare=False)

    @property
    def num_nodes(self) -> int:
        return int(self.node_types.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def num_relations(self) -> int:
        return self.layout.num_relations

    @property
    def topic_mask(self) -> np.ndarray:
        return (self.node_types == Q) | (self.node_types == A)

    def edges(self) -> list[tuple[int, int, int]]:
        return list(zip(self.src.tolist(), self.rel.tolist(), self.dst.tolist()))

    def with_edges(self, src, rel, dst) -> "WorkingGraph":
        return replace(self, src=np.asarray(src, dtype=np.int64), rel=np.asarray(rel, dtype=np.int64),
                       dst=np.asarray(dst, dtype=np.int64))


def build_working_graph(sub: Subgraph, topics: TopicEntities, scores: Mapping[EntityId, float],
                        example_id: str = "", choice_index: int = 0,
                        context_tokens: Sequence[str] = ()) -> WorkingGraph:
    """Join ``z`` to the subgraph's question and answer entities.

    Entities in both V_q and V_a are typed A and receive both z relations.
    Every z-edge gets an inverse and every node a self-loop.
    """
    node_set = set(sub.nodes)
    absent = sorted(v for v in topics.all if v not in node_set)
    if absent:
        raise DataError(f"topic entities {absent} are not in the subgraph")
    missing = [v for v in sub.nodes if v not in scores]
    if missing:
        raise DataError(f"no relevance score for node(s) {missing[:5]}")

    topic_ids = sorted(topics.all)
    rest = [v for v in sub.nodes if v not in topics.all]
    order = topic_ids + rest
    local = {v: i + 1 for i, v in enumerate(order)}
    n = len(order) + 1

    types = np.full(n, O, dtype=np.int64)
    types[0] = Z
    for v in topics.v_q:
        types[local[v]] = Q
    for v in topics.v_a:
        types[local[v]] = A

    relevance = np.ones(n)
    relevance[1:] = [float(scores[v]) for v in order]

    kg = sub.origin
    layout = RelationLayout(kg.num_base_relations)
    src, rel, dst = [], [], []
    for h, r, t in sub.edges:
        src.append(local[h])
        rel.append(r)
        dst.append(local[t])
    for group, fwd, inv in ((topics.v_q, layout.zq, layout.zq_inv), (topics.v_a, layout.za, layout.za_inv)):
        for v in sorted(group):
            src += [0, local[v]]
            rel += [fwd, inv]
            dst += [local[v], 0]
    src += list(range(n))
    rel += [layout.selfloop] * n
    dst += list(range(n))

    names = ("z",) + tuple(kg.entity_names[v] for v in order)
    return WorkingGraph(
        entity_ids=np.array([-1] + order, dtype=np.int64),
        names=names,
        node_types=types,
        relevance=relevance,
        src=np.array(src, dtype=np.int64),
        rel=np.array(rel, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        layout=layout,
        relation_names=layout.names(kg.base_relation_names),
        example_id=example_id,
        choice_index=choice_index,
        context_tokens=tuple(context_tokens),
    )


def connect_z_to_all(wg: WorkingGraph) -> WorkingGraph:
    """Ablation: add a z->v edge pair (forward relation r_zq) for every entity lacking one."""
    layout = wg.layout
    linked = {d for s, d in zip(wg.src.tolist(), wg.dst.tolist()) if s == 0 and d != 0}
    extra = [v for v in range(1, wg.num_nodes) if v not in linked]
    if not extra:
        return wg
    src, rel, dst = wg.src.tolist(), wg.rel.tolist(), wg.dst.tolist()
    for v in extra:
        src += [0, v]
        rel += [layout.zq, layout.zq_inv]
        dst += [v, 0]
    return wg.with_edges(src, rel, dst)


def drop_z_edges(wg: WorkingGraph) -> WorkingGraph:
    """Ablation: remove every edge touching z except z's self-loop."""
    keep = ~(((wg.src == 0) | (wg.dst == 0)) & (wg.src != wg.dst))
    if keep.all():
        return wg
    return wg.with_edges(wg.src[keep], wg.rel[keep], wg.dst[keep])


def permute_entities(wg: WorkingGraph, perm: Sequence[int]) -> WorkingGraph:
    """Relabel entity nodes: old local index ``i + 1`` moves to ``perm[i] + 1``.

    z stays at index 0 and edges are relabeled consistently; used by the
    equivariance checks.
    """
    n = wg.num_nodes - 1
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(n)):
        raise ValueError("perm must be a permutation of range(num_nodes - 1)")
    new_of_old = np.concatenate([[0], perm + 1])
    old_of_new = np.empty_like(new_of_old)
    old_of_new[new_of_old] = np.arange(n + 1)
    return replace(
        wg,
        entity_ids=wg.entity_ids[old_of_new],
        names=tuple(wg.names[i] for i in old_of_new),
        node_types=wg.node_types[old_of_new],
        relevance=wg.relevance[old_of_new],
        src=new_of_old[wg.src],
        dst=new_of_old[wg.dst],
    )
