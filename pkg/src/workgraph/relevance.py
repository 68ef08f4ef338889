"""Context-conditioned node relevance scores.

Three interchangeable scorers share a ``score(context_tokens, entity_name)``
method. :class:`OverlapScorer` is a deterministic stand-in for a language
model head; :class:`ExternalScorer` serves scores computed elsewhere.
"""
from __future__ import annotations

import logging
import math
from typing import Iterable, Mapping, Sequence

from .errors import DataError
from .kg_store import EntityId, KnowledgeGraph, _as_lines
from .retrieval import Subgraph, tokenize

logger = logging.getLogger(__name__)

SMOOTHING = 0.5
SCORER_KINDS = ("overlap_standin", "external_file", "constant")


class OverlapScorer:
    """``(|T_c & T_e| + 0.5) / (|T_e| + 1)`` over context and name token sets."""

    kind = "overlap_standin"

    def score(self, context_tokens: Sequence[str], entity_name: str) -> float:
        if not entity_name:
            raise ValueError("entity_name must be nonempty")
        name_tokens = set(tokenize(entity_name))
        overlap = len(name_tokens.intersection(context_tokens))
        return (overlap + SMOOTHING) / (len(name_tokens) + 1.0)


class ConstantScorer:
    kind = "constant"

    def __init__(self, value: float = 1.0):
        self.value = value

    def score(self, context_tokens: Sequence[str], entity_name: str) -> float:
        if not entity_name:
            raise ValueError("entity_name must be nonempty")
        return self.value


class ExternalScorer:
    """Looks scores up by entity name; context is ignored.

    With ``fallback`` set, unscored entities get that value instead of
    raising.
    """

    kind = "external_file"

    def __init__(self, scores_by_name: Mapping[str, float], fallback: float | None = None):
        self.scores = dict(scores_by_name)
        self.fallback = fallback

    @classmethod
    def from_ids(cls, scores: Mapping[EntityId, float], kg: KnowledgeGraph,
                 fallback: float | None = None) -> "ExternalScorer":
        return cls({kg.entity_names[v]: s for v, s in scores.items()}, fallback)

    def score(self, context_tokens: Sequence[str], entity_name: str) -> float:
        if not entity_name:
            raise ValueError("entity_name must be nonempty")
        try:
            return self.scores[entity_name]
        except KeyError:
            if self.fallback is not None:
                return self.fallback
            raise DataError(f"no external relevance score for entity {entity_name!r}") from None


Scorer = OverlapScorer | ConstantScorer | ExternalScorer


def make_scorer(kind: str, external: Mapping[str, float] | None = None,
                fallback: float | None = None) -> Scorer:
    if kind == "overlap_standin":
        return OverlapScorer()
    if kind == "constant":
        return ConstantScorer()
    if kind == "external_file":
        if external is None:
            raise ValueError("external_file scorer needs a score map")
        return ExternalScorer(external, fallback)
    raise ValueError(f"unknown scorer kind {kind!r}; expected one of {SCORER_KINDS}")


def _checked(value: float, name: str) -> float:
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise DataError(f"relevance score {value!r} for {name!r} outside [0, 1]")
    return float(value)


def score_node(context_tokens: Sequence[str], entity_name: str, scorer: Scorer) -> float:
    return _checked(scorer.score(context_tokens, entity_name), entity_name)


def score_subgraph(context_tokens: Sequence[str], sub: Subgraph, scorer: Scorer) -> dict[EntityId, float]:
    if not sub.nodes:
        raise ValueError("cannot score an empty subgraph")
    names = sub.origin.entity_names
    ctx = frozenset(context_tokens)
    return {v: score_node(ctx, names[v], scorer) for v in sub.nodes}


def load_external_scores(source: str | Iterable[str], kg: KnowledgeGraph) -> dict[EntityId, float]:
    """Parse ``entity_name<TAB>score`` lines into a map keyed by entity id.

    Unknown names are logged and skipped; out-of-range scores raise.
    """
    out: dict[EntityId, float] = {}
    for lineno, raw in enumerate(_as_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataError(f"line {lineno}: expected name<TAB>score")
        name, text = fields
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"line {lineno}: score {text!r} is not a number") from None
        if not (0.0 <= value <= 1.0):
            raise DataError(f"line {lineno}: score {value} for {name!r} outside [0, 1]")
        v = kg.entity_index.get(name)
        if v is None:
            logger.warning("line %d: unknown entity %r skipped", lineno, name)
            continue
        out[v] = value
    return out
