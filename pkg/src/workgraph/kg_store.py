"""Immutable multi-relational knowledge graph with inverse augmentation.

Entities and relations get dense integer ids in first-appearance order.
Edges are stored directed; :func:`augment_inverse_edges` materializes a
paired inverse relation for every forward relation so that traversal and
message passing see both directions.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DataError, KGFormatError

EntityId = int

INVERSE_SUFFIX = "^-1"
SELFLOOP_NAME = "self"


class RelationId(NamedTuple):
    index: int
    is_inverse: bool = False
    is_selfloop: bool = False


class Edge(NamedTuple):
    head: EntityId
    relation: RelationId
    tail: EntityId


def _as_lines(source: str | Iterable[str]) -> Iterable[str]:
    if isinstance(source, str):
        return source.splitlines()
    return source


class KnowledgeGraph:
    """Entities, relations and a per-node outgoing adjacency index.

    Edge arrays are read-only numpy views; the object exposes no mutating
    API. ``num_relations`` counts forward relations, plus their inverses
    once augmented; the dedicated self-loop relation is not counted.
    """

    def __init__(
        self,
        entity_names: Sequence[str],
        base_relation_names: Sequence[str],
        heads: np.ndarray,
        relations: np.ndarray,
        tails: np.ndarray,
        augmented: bool = False,
    ):
        self._entity_names = tuple(entity_names)
        self._base_relation_names = tuple(base_relation_names)
        self.augmented = augmented
        self.entity_index = {name: i for i, name in enumerate(self._entity_names)}
        if len(self.entity_index) != len(self._entity_names):
            raise DataError("entity names must be unique")

        m = len(self._base_relation_names)
        self.num_base_relations = m
        self.num_relations = 2 * m if augmented else m
        rel_ids = [RelationId(i) for i in range(m)]
        rel_names = list(self._base_relation_names)
        if augmented:
            rel_ids += [RelationId(m + i, is_inverse=True) for i in range(m)]
            rel_names += [name + INVERSE_SUFFIX for name in self._base_relation_names]
        self.selfloop = RelationId(self.num_relations, is_selfloop=True)
        self.relation_ids: tuple[RelationId, ...] = tuple(rel_ids)
        self.relation_names: tuple[str, ...] = tuple(rel_names)
        self.relation_index = {name: rid for name, rid in zip(rel_names, rel_ids)}

        self.heads = np.asarray(heads, dtype=np.int64)
        self.relations = np.asarray(relations, dtype=np.int64)
        self.tails = np.asarray(tails, dtype=np.int64)
        for arr in (self.heads, self.relations, self.tails):
            arr.setflags(write=False)

        # CSR adjacency; a stable sort keeps load order within each node
        n = len(self._entity_names)
        order = np.argsort(self.heads, kind="stable")
        counts = np.bincount(self.heads, minlength=n)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        self._adj_offsets = offsets
        self._adj_rel = self.relations[order]
        self._adj_tail = self.tails[order]
        for arr in (self._adj_offsets, self._adj_rel, self._adj_tail):
            arr.setflags(write=False)

    @property
    def entity_names(self) -> tuple[str, ...]:
        return self._entity_names

    @property
    def base_relation_names(self) -> tuple[str, ...]:
        return self._base_relation_names

    @property
    def num_entities(self) -> int:
        return len(self._entity_names)

    @property
    def num_edges(self) -> int:
        return int(self.heads.shape[0])

    def entity_id(self, name: str) -> EntityId:
        try:
            return self.entity_index[name]
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    def entity_name(self, v: EntityId) -> str:
        self._check_entity(v)
        return self._entity_names[v]

    def relation_name(self, rel: RelationId | int) -> str:
        index = rel.index if isinstance(rel, RelationId) else int(rel)
        if index == self.selfloop.index:
            return SELFLOOP_NAME
        return self.relation_names[index]

    @property
    def edges(self) -> list[Edge]:
        rids = self.relation_ids
        return [
            Edge(int(h), rids[r], int(t))
            for h, r, t in zip(self.heads, self.relations, self.tails)
        ]

    def _check_entity(self, v: EntityId) -> None:
        if not (0 <= v < len(self._entity_names)):
            raise IndexError(f"entity id {v} out of range [0, {self.num_entities})")

    def neighbors(self, v: EntityId) -> list[tuple[RelationId, EntityId]]:
        """Outgoing edges of ``v`` as ``(relation, tail)`` pairs in load order."""
        self._check_entity(v)
        lo, hi = self._adj_offsets[v], self._adj_offsets[v + 1]
        rids = self.relation_ids
        return [(rids[r], int(t)) for r, t in zip(self._adj_rel[lo:hi], self._adj_tail[lo:hi])]

    def neighbor_arrays(self, v: EntityId) -> tuple[np.ndarray, np.ndarray]:
        """Relation indices and tails of ``v``'s outgoing edges (no copies)."""
        lo, hi = self._adj_offsets[v], self._adj_offsets[v + 1]
        return self._adj_rel[lo:hi], self._adj_tail[lo:hi]

    def degree(self, v: EntityId) -> int:
        return int(self._adj_offsets[v + 1] - self._adj_offsets[v])

    @cached_property
    def name_index(self) -> dict[tuple[str, ...], EntityId]:
        """Entity names as lowercase token tuples, for span matching."""
        index: dict[tuple[str, ...], EntityId] = {}
        for i, name in enumerate(self._entity_names):
            key = tuple(tok for tok in name.lower().replace("_", " ").split() if tok)
            if key:
                index.setdefault(key, i)
        return index

    @cached_property
    def max_name_length(self) -> int:
        return max((len(k) for k in self.name_index), default=0)

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(|V|={self.num_entities}, |R|={self.num_relations}, "
            f"|E|={self.num_edges}, augmented={self.augmented})"
        )


def load_kg(source: str | Iterable[str]) -> KnowledgeGraph:
    """Parse ``head<TAB>relation<TAB>tail`` lines into a graph.

    ``source`` is either the whole text or an iterable of lines. Blank lines
    are skipped and duplicate triples are dropped.
    """
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    seen: set[tuple[int, int, int]] = set()
    heads: list[int] = []
    rels: list[int] = []
    tails: list[int] = []
    for lineno, raw in enumerate(_as_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise KGFormatError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
        h_name, r_name, t_name = fields
        if not (h_name and r_name and t_name):
            raise KGFormatError("empty field", lineno)
        h = entities.setdefault(h_name, len(entities))
        r = relations.setdefault(r_name, len(relations))
        t = entities.setdefault(t_name, len(entities))
        key = (h, r, t)
        if key in seen:
            continue
        seen.add(key)
        heads.append(h)
        rels.append(r)
        tails.append(t)
    if not heads:
        raise KGFormatError("edge list is empty")
    return KnowledgeGraph(list(entities), list(relations), np.array(heads), np.array(rels), np.array(tails))


def read_kg(path: str | Path, augment: bool = False) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as fh:
        kg = load_kg(fh)
    return augment_inverse_edges(kg) if augment else kg


def augment_inverse_edges(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Return a new graph with an inverse edge ``(t, r^-1, h)`` per edge."""
    if kg.augmented:
        raise DataError("knowledge graph is already inverse-augmented")
    m = kg.num_base_relations
    heads = np.concatenate([kg.heads, kg.tails])
    rels = np.concatenate([kg.relations, kg.relations + m])
    tails = np.concatenate([kg.tails, kg.heads])
    return KnowledgeGraph(kg.entity_names, kg.base_relation_names, heads, rels, tails, augmented=True)


def serialize_kg(kg: KnowledgeGraph) -> str:
    """TSV text of the forward triples, in stored order."""
    names = kg.entity_names
    rnames = kg.base_relation_names
    m = kg.num_base_relations
    out = []
    for h, r, t in zip(kg.heads, kg.relations, kg.tails):
        if r < m:
            out.append(f"{names[h]}\t{rnames[r]}\t{names[t]}\n")
    return "".join(out)


@dataclass(frozen=True)
class EntityEmbeddings:
    """Entity vectors aligned to a graph's vocabulary; ``present`` marks loaded rows."""

    vectors: np.ndarray
    present: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def load_entity_embeddings(source: str | Iterable[str], kg: KnowledgeGraph) -> EntityEmbeddings:
    """Parse ``entity_name<TAB>v1 v2 ... vd`` lines.

    Names absent from the graph are ignored; entities without a line are
    left unmarked in ``present``.
    """
    rows: dict[int, np.ndarray] = {}
    dim = None
    for lineno, raw in enumerate(_as_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise KGFormatError("expected name<TAB>vector", lineno)
        try:
            vec = np.array([float(x) for x in fields[1].split()], dtype=np.float64)
        except ValueError as exc:
            raise KGFormatError(f"bad vector component: {exc}", lineno) from None
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise KGFormatError(f"vector has {vec.shape[0]} components, expected {dim}", lineno)
        v = kg.entity_index.get(fields[0])
        if v is not None:
            rows[v] = vec
    if dim is None:
        raise DataError("embedding file is empty")
    vectors = np.zeros((kg.num_entities, dim))
    present = np.zeros(kg.num_entities, dtype=bool)
    for v, vec in rows.items():
        vectors[v] = vec
        present[v] = True
    return EntityEmbeddings(vectors, present)
