"""Entity linking, k-hop path subgraph extraction and relevance pruning."""
from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .kg_store import EntityId, KnowledgeGraph

DEFAULT_HOPS = 2
DEFAULT_MAX_NODES = 200

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, punctuation and underscores."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class QAExample:
    """One multiple-choice question record.

    Fields beyond the four required ones are kept verbatim in ``meta`` and
    written back out on serialization.
    """

    id: str
    question: str
    choices: tuple[str, ...]
    answer_index: int
    meta: Mapping[str, object] = field(default_factory=dict)

    @property
    def question_tokens(self) -> list[str]:
        return tokenize(self.question)

    def choice_tokens(self, i: int) -> list[str]:
        return tokenize(self.choices[i])

    def context_tokens(self, i: int) -> list[str]:
        return self.question_tokens + self.choice_tokens(i)

    def to_record(self) -> dict:
        rec = {"id": self.id, "question": self.question, "choices": list(self.choices),
               "answer_index": self.answer_index}
        rec.update(self.meta)
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "QAExample":
        try:
            ex_id, question = str(rec["id"]), str(rec["question"])
            choices = tuple(str(c) for c in rec["choices"])
            answer = int(rec["answer_index"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad question record: {exc!r}") from None
        if not choices:
            raise DataError(f"record {ex_id}: no choices")
        if not 0 <= answer < len(choices):
            raise DataError(f"record {ex_id}: answer_index {answer} out of range")
        meta = {k: v for k, v in rec.items() if k not in ("id", "question", "choices", "answer_index")}
        return cls(ex_id, question, choices, answer, meta)


def read_examples(source: str | Path | Iterable[str]) -> list[QAExample]:
    """Read JSON-lines question records from a path or an iterable of lines."""
    if isinstance(source, str) and not source.strip():
        lines = []
    elif isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    elif isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = list(source)
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        out.append(QAExample.from_record(rec))
    return out


def dumps_examples(examples: Iterable[QAExample]) -> str:
    return "".join(json.dumps(ex.to_record(), sort_keys=True) + "\n" for ex in examples)


def write_examples(path: str | Path, examples: Iterable[QAExample]) -> None:
    Path(path).write_text(dumps_examples(examples), encoding="utf-8")


@dataclass(frozen=True)
class TopicEntities:
    v_q: frozenset[EntityId]
    v_a: frozenset[EntityId]

    @property
    def all(self) -> frozenset[EntityId]:
        return self.v_q | self.v_a


def _match_spans(tokens: Sequence[str], kg: KnowledgeGraph) -> set[EntityId]:
    index = kg.name_index
    max_len = kg.max_name_length
    found: set[EntityId] = set()
    i = 0
    while i < len(tokens):
        for n in range(min(max_len, len(tokens) - i), 0, -1):
            hit = index.get(tuple(tokens[i:i + n]))
            if hit is not None:
                found.add(hit)
                i += n
                break
        else:
            i += 1
    return found


def link_entities(question_tokens: Sequence[str], answer_tokens: Sequence[str],
                  kg: KnowledgeGraph) -> TopicEntities:
    """Greedy left-to-right longest-span match of token n-grams to entity names."""
    return TopicEntities(frozenset(_match_spans(question_tokens, kg)),
                         frozenset(_match_spans(answer_tokens, kg)))


@dataclass(frozen=True)
class Subgraph:
    """Induced subgraph of an augmented KG.

    ``nodes`` is sorted ascending; ``edges`` holds ``(head, relation index,
    tail)`` triples. ``skipped`` lists topic ids that were not in the graph.
    """

    nodes: tuple[EntityId, ...]
    edges: tuple[tuple[int, int, int], ...]
    topics: frozenset[EntityId]
    origin: KnowledgeGraph = field(repr=False, compare=False)
    skipped: tuple[EntityId, ...] = ()

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


def _bfs(kg: KnowledgeGraph, source: int, depth: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if d == depth:
            continue
        _, tails = kg.neighbor_arrays(u)
        for t in tails.tolist():
            if t not in dist:
                dist[t] = d + 1
                queue.append(t)
    return dist


def induced_edges(kg: KnowledgeGraph, nodes: Iterable[int]) -> tuple[tuple[int, int, int], ...]:
    node_set = set(nodes)
    out = []
    for u in sorted(node_set):
        rels, tails = kg.neighbor_arrays(u)
        for r, t in zip(rels.tolist(), tails.tolist()):
            if t in node_set:
                out.append((u, r, t))
    return tuple(out)


def retrieve_subgraph(kg: KnowledgeGraph, topics: TopicEntities, k: int = DEFAULT_HOPS) -> Subgraph:
    """Nodes on walks of length <= k between two distinct topic entities.

    A node ``v`` qualifies iff ``dist(a, v) + dist(v, b) <= k`` for some
    topic pair ``a != b``, using breadth-first distances on the augmented
    graph. Topic entities are always included.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not kg.augmented:
        raise DataError("retrieval expects an inverse-augmented knowledge graph")
    present = sorted(v for v in topics.all if 0 <= v < kg.num_entities)
    skipped = tuple(sorted(v for v in topics.all if not 0 <= v < kg.num_entities))

    # best and second-best distance per node, from distinct topics
    best: dict[int, list[int]] = {}
    for a in present:
        for v, d in _bfs(kg, a, k).items():
            slot = best.setdefault(v, [])
            slot.append(d)
    nodes = set(present)
    for v, ds in best.items():
        if len(ds) >= 2:
            ds.sort()
            if ds[0] + ds[1] <= k:
                nodes.add(v)
    nodes_sorted = tuple(sorted(nodes))
    return Subgraph(nodes_sorted, induced_edges(kg, nodes_sorted), frozenset(present), kg, skipped)


def prune_subgraph(sub: Subgraph, scores: Mapping[EntityId, float],
                   max_nodes: int = DEFAULT_MAX_NODES) -> Subgraph:
    """Keep all topic entities plus the highest-scoring other nodes.

    Ties are broken by ascending entity id; induced edges are recomputed.
    """
    missing = [v for v in sub.nodes if v not in scores]
    if missing:
        raise DataError(f"no relevance score for node(s) {missing[:5]}")
    if max_nodes < len(sub.topics):
        raise ValueError(f"max_nodes={max_nodes} is below the {len(sub.topics)} topic entities")
    if len(sub.nodes) <= max_nodes:
        return sub
    others = sorted((v for v in sub.nodes if v not in sub.topics), key=lambda v: (-scores[v], v))
    keep = sorted(set(sub.topics) | set(others[: max_nodes - len(sub.topics)]))
    return Subgraph(tuple(keep), induced_edges(sub.origin, keep), sub.topics, sub.origin, sub.skipped)


def random_scores(sub: Subgraph, rng: np.random.Generator) -> dict[EntityId, float]:
    """Uniform random scores; feeding these to :func:`prune_subgraph` gives random pruning."""
    return {v: float(x) for v, x in zip(sub.nodes, rng.random(len(sub.nodes)))}
