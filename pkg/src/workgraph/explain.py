"""Reasoning traces from attention weights, and DOT export of working graphs."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph_builder import NODE_TYPE_NAMES, WorkingGraph
from .model import GraphReasoner, AttentionRecord, collate

DEFAULT_DIRECTIONS = ("Z", "QA", "O")
DEFAULT_TOP_B = 2
DEFAULT_MIN_ALPHA = 0.1


@dataclass(frozen=True)
class TraceStep:
    src: int
    dst: int
    layer: int  # 1-based
    alpha: float
    edge: int  # index into the working graph's edge arrays


@dataclass
class AttentionTrace:
    steps: list[TraceStep]
    layer: int
    directions: tuple[str, ...]
    top_b: int
    min_alpha: float
    start: int = 0
    meta: dict = field(default_factory=dict)

    def pairs(self) -> list[tuple[int, int]]:
        return [(s.src, s.dst) for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)


def trace_attention(record: AttentionRecord, wg: WorkingGraph, start: int = 0,
                    directions: Sequence[str] = DEFAULT_DIRECTIONS, top_b: int = DEFAULT_TOP_B,
                    min_alpha: float = DEFAULT_MIN_ALPHA, layer: int | None = None) -> AttentionTrace:
    """Best-first expansion over edges ranked by attention weight.

    ``directions[d]`` lists the node-type letters allowed at depth ``d``
    (depth 0 is ``start``). Expanding a node pushes its ``top_b`` highest
    qualifying outgoing edges with weight >= ``min_alpha``; the frontier
    pops the highest weight first, ties by ascending (src, dst, edge index).
    Self-loops and already visited nodes are skipped.
    """
    if not 0 <= start < wg.num_nodes:
        raise IndexError(f"start node {start} not in working graph with {wg.num_nodes} nodes")
    if record.src.shape[0] != wg.num_edges or not record.layers:
        raise ValueError("attention record does not cover this working graph")
    if top_b < 1:
        raise ValueError("top_b must be >= 1")
    layer_no = record.num_layers if layer is None else layer
    alpha = record.alpha(layer_no)
    types = [NODE_TYPE_NAMES[t] for t in wg.node_types.tolist()]
    src, dst = record.src.tolist(), record.dst.tolist()
    out_edges: dict[int, list[int]] = {}
    for e, (s, t) in enumerate(zip(src, dst)):
        if s != t:
            out_edges.setdefault(s, []).append(e)

    directions = tuple(directions)
    visited = {start}
    frontier: list[tuple[float, int, int, int, int]] = []

    def expand(node: int, depth: int) -> None:
        if depth + 1 >= len(directions):
            return
        allowed = directions[depth + 1]
        cands = [e for e in out_edges.get(node, ()) if types[dst[e]] in allowed and alpha[e] >= min_alpha]
        cands.sort(key=lambda e: (-alpha[e], dst[e], e))
        for e in cands[:top_b]:
            heapq.heappush(frontier, (-float(alpha[e]), src[e], dst[e], e, depth + 1))

    if not directions or types[start] in directions[0]:
        expand(start, 0)
    steps = []
    while frontier:
        _, s, t, e, depth = heapq.heappop(frontier)
        if t in visited:
            continue
        visited.add(t)
        steps.append(TraceStep(s, t, layer_no, float(alpha[e]), e))
        expand(t, depth)
    return AttentionTrace(steps, layer_no, directions, top_b, min_alpha, start)


def attention_for_graph(model: GraphReasoner, wg: WorkingGraph, z_lm=None) -> AttentionRecord:
    """Eval-mode forward pass of one working graph, returning its attention record."""
    batch = collate([wg], model.vocab, z_lm)
    return model.forward(batch, training=False).attention_record(batch, 0)


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(wg: WorkingGraph, trace: AttentionTrace | None = None, record: AttentionRecord | None = None,
               layer: int | None = None, name: str = "working_graph") -> str:
    """DOT text for a working graph; identical inputs give identical bytes.

    Nodes are labeled ``name (type, ρ=score)``. With an attention record,
    edge pen width grows with the weight and the exact weight is kept in the
    tooltip. Trace edges are drawn red. Self-loops are omitted.
    """
    alpha = None
    if record is not None:
        alpha = record.alpha(layer if layer is not None else (trace.layer if trace else None))
    highlighted = {s.edge for s in trace.steps} if trace else set()
    lines = [f"digraph {_quote(name)} {{", "  node [shape=box];"]
    for i in range(wg.num_nodes):
        t = NODE_TYPE_NAMES[int(wg.node_types[i])]
        label = f"{wg.names[i]} ({t}, ρ={float(wg.relevance[i]):.3f})"
        lines.append(f"  n{i} [label={_quote(label)}];")
    for e, (s, r, t) in enumerate(wg.edges()):
        if s == t:
            continue
        attrs = [f"label={_quote(wg.relation_names[r])}"]
        if alpha is not None:
            a = float(alpha[e])
            attrs.append(f"penwidth={0.5 + 4.5 * a:.4f}")
            attrs.append(f"tooltip={_quote('alpha=' + repr(a))}")
        if e in highlighted:
            attrs.append("color=red")
        lines.append(f"  n{s} -> n{t} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def hand_record(wg: WorkingGraph, alphas: Sequence[Sequence[float]] | np.ndarray) -> AttentionRecord:
    """Attention record with given per-layer weights, for fixtures and tests."""
    layers = [np.asarray(a, dtype=float) for a in np.atleast_2d(np.asarray(alphas, dtype=float))]
    return AttentionRecord(wg.src.copy(), wg.dst.copy(), wg.rel.copy(), layers)
