"""Seeded synthetic benchmarks over random toy knowledge graphs.

* logical queries (one-hop, two-hop, conjunction, negated conjunction) with
  10 candidates and exactly one gold answer,
* paired negation questions whose gold flips when "not" is inserted, plus
  entity-substitution variants,
* bridge questions with a variable number of anchors, for studying
  pruning on large retrieved subgraphs.

Question text is templated so every generated record can be parsed back.
"""
from __future__ import annotations

import re
import statistics
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .kg_store import KnowledgeGraph, load_kg
from .retrieval import QAExample

PATTERNS = ("one_hop", "two_hop", "conjunction", "negated_conjunction")
NUM_CANDIDATES = 10
MAX_REGENERATIONS = 20


@dataclass(frozen=True)
class ToyKG:
    n: int
    m: int
    p: float
    seed: int
    entity_names: tuple[str, ...]
    relation_names: tuple[str, ...]
    triples: tuple[tuple[int, int, int], ...]
    marked: frozenset[int] = frozenset()
    marker: str | None = None

    def tsv(self) -> str:
        e, r = self.entity_names, self.relation_names
        return "".join(f"{e[h]}\t{r[rel]}\t{e[t]}\n" for h, rel, t in self.triples)

    def to_kg(self) -> KnowledgeGraph:
        return load_kg(self.tsv())

    def out_sets(self) -> list[list[set[int]]]:
        """``out[r][h]`` = tails of relation ``r`` from ``h``."""
        out = [[set() for _ in range(self.n)] for _ in range(self.m)]
        for h, r, t in self.triples:
            out[r][h].add(t)
        return out

    def undirected_neighbors(self) -> list[set[int]]:
        nb = [set() for _ in range(self.n)]
        for h, _, t in self.triples:
            nb[h].add(t)
            nb[t].add(h)
        return nb


def _largest_component(n: int, triples) -> int:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for h, _, t in triples:
        a, b = find(h), find(t)
        if a != b:
            parent[a] = b
    sizes: dict[int, int] = {}
    for v in range(n):
        root = find(v)
        sizes[root] = sizes.get(root, 0) + 1
    return max(sizes.values())


def gen_toy_kg(n: int, m: int, p: float, seed: int, marker: str | None = None,
               marker_fraction: float = 0.0) -> ToyKG:
    """Independent Bernoulli(p) edges per relation and ordered pair (no self-edges).

    With ``marker`` set, a ``marker_fraction`` share of entities is named
    ``{marker}_e{i}`` instead of ``e{i}``. The graph is regenerated until its
    largest weakly connected component holds at least 80% of the nodes.
    """
    if n < 10 or m < 2:
        raise ValueError("gen_toy_kg needs n >= 10 and m >= 2")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_REGENERATIONS):
        triples = []
        for r in range(m):
            mask = rng.random((n, n)) < p
            np.fill_diagonal(mask, False)
            hs, ts = np.nonzero(mask)
            triples += [(int(h), r, int(t)) for h, t in zip(hs, ts)]
        if triples and _largest_component(n, triples) >= 0.8 * n:
            break
    else:
        raise DataError(f"no toy KG with a connected component >= 0.8n after {MAX_REGENERATIONS} tries")
    marked = frozenset()
    if marker:
        count = int(round(marker_fraction * n))
        marked = frozenset(int(v) for v in rng.choice(n, size=count, replace=False))
    names = tuple(f"{marker}_e{i}" if i in marked else f"e{i}" for i in range(n))
    return ToyKG(n, m, p, seed, names, tuple(f"r{i}" for i in range(m)), tuple(triples), marked, marker)


# ---------------------------------------------------------------- logical queries

_TEMPLATES = {
    "one_hop": "which entity has relation {r1} from {a}",
    "two_hop": "which entity has relation {r2} from an entity that has relation {r1} from {a}",
    "conjunction": "which entity has relation {r1} from {a} and relation {r2} from {b}",
    "negated_conjunction": "which entity has relation {r1} from {a} and not relation {r2} from {b}",
}
_PARSERS = [
    ("two_hop", re.compile(r"^which entity has relation (\S+) from an entity that has relation (\S+) from (\S+)$")),
    ("negated_conjunction", re.compile(r"^which entity has relation (\S+) from (\S+) and not relation (\S+) from (\S+)$")),
    ("conjunction", re.compile(r"^which entity has relation (\S+) from (\S+) and relation (\S+) from (\S+)$")),
    ("one_hop", re.compile(r"^which entity has relation (\S+) from (\S+)$")),
]


@dataclass(frozen=True)
class LogicalQuery:
    pattern: str
    anchors: tuple[int, ...]
    relations: tuple[int, ...]  # r1[, r2]

    def text(self, kg: ToyKG) -> str:
        e, r = kg.entity_names, kg.relation_names
        fields = {"a": e[self.anchors[0]], "r1": r[self.relations[0]]}
        if len(self.anchors) > 1:
            fields["b"] = e[self.anchors[1]]
        if len(self.relations) > 1:
            fields["r2"] = r[self.relations[1]]
        return _TEMPLATES[self.pattern].format(**fields)


def answer_set(query: LogicalQuery, out: list[list[set[int]]]) -> set[int]:
    """Exact answers via set operations on the relation adjacency."""
    a = query.anchors[0]
    r1 = query.relations[0]
    if query.pattern == "one_hop":
        return set(out[r1][a])
    r2 = query.relations[1]
    if query.pattern == "two_hop":
        res: set[int] = set()
        for x in out[r1][a]:
            res |= out[r2][x]
        return res
    b = query.anchors[1]
    if query.pattern == "conjunction":
        return out[r1][a] & out[r2][b]
    if query.pattern == "negated_conjunction":
        return out[r1][a] - out[r2][b]
    raise ValueError(f"unknown pattern {query.pattern!r}")


def _near_misses(query: LogicalQuery, out) -> set[int]:
    """Entities satisfying part of the query; used as hard negatives."""
    a, r1 = query.anchors[0], query.relations[0]
    if query.pattern == "one_hop":
        return set().union(*(out[r][a] for r in range(len(out)) if r != r1))
    if query.pattern == "two_hop":
        return set(out[r1][a])
    b, r2 = query.anchors[1], query.relations[1]
    if query.pattern == "conjunction":
        return out[r1][a] ^ out[r2][b]
    return out[r1][a] & out[r2][b]


def _sample_query(pattern: str, kg: ToyKG, rng: np.random.Generator) -> LogicalQuery:
    a = int(rng.integers(kg.n))
    if pattern == "one_hop":
        return LogicalQuery(pattern, (a,), (int(rng.integers(kg.m)),))
    r1, r2 = (int(x) for x in rng.integers(kg.m, size=2))
    if pattern == "two_hop":
        return LogicalQuery(pattern, (a,), (r1, r2))
    b = int(rng.integers(kg.n))
    return LogicalQuery(pattern, (a, b), (r1, r2))


def gen_logical_queries(kg: ToyKG, counts: int | Mapping[str, int], seed: int,
                        num_candidates: int = NUM_CANDIDATES, hard_negatives: int = 2,
                        max_attempts: int = 20000) -> list[QAExample]:
    """Queries with exactly one gold answer among ``num_candidates`` entities.

    Anchors are resampled until the answer set is nonempty and enough
    non-answers exist. Negated conjunctions additionally require that the
    negated clause removes at least one entity, so negation matters.
    """
    if isinstance(counts, int):
        counts = {p: counts for p in PATTERNS}
    rng = np.random.default_rng(seed)
    out = kg.out_sets()
    names = kg.entity_names
    examples = []
    for pattern in PATTERNS:
        want = counts.get(pattern, 0)
        made = attempts = 0
        while made < want:
            attempts += 1
            if attempts > max_attempts:
                raise DataError(f"could not sample {want} satisfiable {pattern} queries")
            q = _sample_query(pattern, kg, rng)
            if len(set(q.anchors)) != len(q.anchors):
                continue
            answers = answer_set(q, out)
            excluded = set(q.anchors)
            if not answers - excluded:
                continue
            pool = [v for v in range(kg.n) if v not in answers and v not in excluded]
            if len(pool) < num_candidates - 1:
                continue
            near = sorted(_near_misses(q, out) - answers - excluded)
            if pattern == "negated_conjunction" and not near:
                continue
            gold = int(rng.choice(sorted(answers - excluded)))
            hard = [int(v) for v in rng.permutation(near)[:hard_negatives]]
            rest = [v for v in pool if v not in hard]
            easy = [int(v) for v in rng.choice(rest, size=num_candidates - 1 - len(hard), replace=False)]
            cands = [gold] + hard + easy
            cands = [cands[i] for i in rng.permutation(len(cands))]
            examples.append(QAExample(
                id=f"{pattern}-{made}",
                question=q.text(kg),
                choices=tuple(names[c] for c in cands),
                answer_index=cands.index(gold),
                meta={"task": "logical", "pattern": pattern,
                      "anchors": [names[v] for v in q.anchors],
                      "relations": [kg.relation_names[r] for r in q.relations]},
            ))
            made += 1
    return examples


def parse_logical_query(example: QAExample) -> dict:
    """Recover pattern, anchor names, relation names and gold name from the text."""
    text = example.question
    for pattern, regex in _PARSERS:
        mt = regex.match(text)
        if not mt:
            continue
        g = mt.groups()
        if pattern == "one_hop":
            rel, anchors = [g[0]], [g[1]]
        elif pattern == "two_hop":
            rel, anchors = [g[1], g[0]], [g[2]]
        else:
            rel, anchors = [g[0], g[2]], [g[1], g[3]]
        return {"pattern": pattern, "anchors": anchors, "relations": rel,
                "gold": example.choices[example.answer_index]}
    raise DataError(f"not a logical query: {text!r}")


def split_examples(examples: Sequence[QAExample], n_train: int, n_test: int, seed: int,
                   stratify: bool = True) -> tuple[list[QAExample], list[QAExample]]:
    """Seeded train/test split, stratified by ``meta['pattern']`` when present."""
    rng = np.random.default_rng(seed)
    groups: dict[str, list[QAExample]] = {}
    for ex in examples:
        key = str(ex.meta.get("pattern", "")) if stratify else ""
        groups.setdefault(key, []).append(ex)
    train, test = [], []
    k = len(groups)
    for key in sorted(groups):
        g = [groups[key][i] for i in rng.permutation(len(groups[key]))]
        nt, ne = n_train // k, n_test // k
        if nt + ne > len(g):
            raise DataError(f"group {key!r} has {len(g)} examples, need {nt + ne}")
        train += g[:nt]
        test += g[nt:nt + ne]
    return train, test


# ---------------------------------------------------------------- negation pairs

_NEG_POS = "which entity is linked to {a} by relation {r}"
_NEG_NEG = "which entity is linked to {a} but not by relation {r}"


def _negation_choices(a: int, r: int, out, nb, n: int, rng) -> list[int] | None:
    pos = sorted(out[r][a])
    other = sorted(nb[a] - out[r][a] - {a})
    far = sorted(set(range(n)) - nb[a] - {a})
    if not pos or not other or len(far) < 2:
        return None
    chosen = [int(rng.choice(pos)), int(rng.choice(other))] + [int(x) for x in rng.choice(far, 2, replace=False)]
    return [chosen[i] for i in rng.permutation(4)]


def negation_gold(question: str, choices: Sequence[str], kg: ToyKG) -> int | None:
    """Independent evaluator: index of the single satisfying choice, or None."""
    idx = {name: i for i, name in enumerate(kg.entity_names)}
    rel = {name: i for i, name in enumerate(kg.relation_names)}
    mt = re.match(r"^which entity is linked to (\S+) (but not by|by) relation (\S+)$", question)
    if not mt:
        raise DataError(f"not a negation question: {question!r}")
    a, negated, r = idx[mt.group(1)], mt.group(2) == "but not by", rel[mt.group(3)]
    triples = set(kg.triples)
    hits = []
    for i, name in enumerate(choices):
        c = idx[name]
        by_r = (a, r, c) in triples
        linked = any((a, rr, c) in triples or (c, rr, a) in triples for rr in range(kg.m))
        if (linked and not by_r) if negated else by_r:
            hits.append(i)
    return hits[0] if len(hits) == 1 else None


@dataclass
class NegationDataset:
    pairs: list[QAExample]  # (q, not q) adjacent, sharing choices
    substitutions: list[QAExample]  # anchor swapped, gold recomputed


def gen_negation_qa(kg: ToyKG, count: int, seed: int, max_attempts: int = 100000) -> NegationDataset:
    """``count`` matched pairs of a question and its negation, plus one entity-substituted variant each.

    Choices: one entity linked to the anchor by the asked relation, one linked
    only by other relations, two not linked at all.
    """
    rng = np.random.default_rng(seed)
    out = kg.out_sets()
    nb = kg.undirected_neighbors()
    names, rnames = kg.entity_names, kg.relation_names
    pairs, subs = [], []
    attempts = 0
    while len(pairs) < 2 * count:
        attempts += 1
        if attempts > max_attempts:
            raise DataError("could not build enough negation pairs")
        a, r = int(rng.integers(kg.n)), int(rng.integers(kg.m))
        cands = _negation_choices(a, r, out, nb, kg.n, rng)
        if cands is None:
            continue
        choices = tuple(names[c] for c in cands)
        k = len(pairs) // 2
        for negated, tmpl in ((False, _NEG_POS), (True, _NEG_NEG)):
            question = tmpl.format(a=names[a], r=rnames[r])
            gold = negation_gold(question, choices, kg)
            pairs.append(QAExample(f"neg-{k}-{int(negated)}", question, choices, gold,
                                   {"task": "negation", "pair": k, "negated": negated,
                                    "anchors": [names[a]], "relations": [rnames[r]]}))
        # entity substitution: same template, another anchor with its own choices
        for _ in range(1000):
            a2 = int(rng.integers(kg.n))
            if a2 == a:
                continue
            c2 = _negation_choices(a2, r, out, nb, kg.n, rng)
            if c2 is None:
                continue
            question = _NEG_NEG.format(a=names[a2], r=rnames[r])
            ch2 = tuple(names[c] for c in c2)
            subs.append(QAExample(f"neg-{k}-sub", question, ch2, negation_gold(question, ch2, kg),
                                  {"task": "negation", "pair": k, "negated": True, "substituted": True,
                                   "anchors": [names[a2]], "relations": [rnames[r]]}))
            break
    return NegationDataset(pairs, subs)


# ---------------------------------------------------------------- bridge / stress questions

_BRIDGE = "from {anchors} which entity is reached through a {marker} entity"


def bridge_gold(anchors: Sequence[int], choices: Sequence[int], kg: ToyKG) -> list[int]:
    """Indices of choices with a 2-step undirected walk anchor - marked - choice."""
    nb = kg.undirected_neighbors()
    out = []
    for i, c in enumerate(choices):
        if any(x in kg.marked and c in nb[x] for a in anchors for x in nb[a] if x != c):
            out.append(i)
    return out


def gen_bridge_qa(kg: ToyKG, count: int, seed: int, anchor_range: tuple[int, int] = (1, 6),
                  num_choices: int = 4, max_attempts: int = 200000) -> list[QAExample]:
    """Questions whose gold choice is joined to an anchor through a marked entity.

    Distractors are two steps from an anchor only through unmarked
    entities. The anchor count varies over ``anchor_range`` so retrieved
    subgraphs range from small to large. Anchors and choices are unmarked.
    """
    if kg.marker is None or not kg.marked:
        raise ValueError("bridge questions need a toy KG built with a marker")
    rng = np.random.default_rng(seed)
    nb = kg.undirected_neighbors()
    plain = [v for v in range(kg.n) if v not in kg.marked]
    names = kg.entity_names
    examples = []
    attempts = 0
    while len(examples) < count:
        attempts += 1
        if attempts > max_attempts:
            raise DataError("could not build enough bridge questions")
        k = int(rng.integers(anchor_range[0], anchor_range[1] + 1))
        anchors = sorted(int(v) for v in rng.choice(plain, size=k, replace=False))
        aset = set(anchors)
        via_marked, via_plain = set(), set()
        for a in anchors:
            for x in nb[a]:
                bucket = via_marked if x in kg.marked else via_plain
                bucket.update(nb[x])
        cand_pool = [v for v in plain if v not in aset]
        gold_pool = sorted(v for v in cand_pool if v in via_marked)
        distract = sorted(v for v in cand_pool if v in via_plain and v not in via_marked)
        if not gold_pool or len(distract) < num_choices - 1:
            continue
        gold = int(rng.choice(gold_pool))
        others = [int(v) for v in rng.choice(distract, size=num_choices - 1, replace=False)]
        cands = [gold] + others
        cands = [cands[i] for i in rng.permutation(num_choices)]
        question = _BRIDGE.format(anchors=" or ".join(names[a] for a in anchors), marker=kg.marker)
        examples.append(QAExample(f"bridge-{len(examples)}", question, tuple(names[c] for c in cands),
                                  cands.index(gold),
                                  {"task": "bridge", "anchors": [names[a] for a in anchors],
                                   "num_anchors": k}))
    return examples


def gen_entity_count_split(dataset: Sequence, threshold: float | None = None,
                           count: Callable[[object], int] | None = None) -> tuple[list, list]:
    """Split into (<= threshold, > threshold) topic-entity counts; default threshold is the median."""
    if count is None:
        def count(item):
            return int(item.meta["num_topic_entities"])
    counts = [count(x) for x in dataset]
    if threshold is None:
        threshold = statistics.median(counts) if counts else 0
    few = [x for x, c in zip(dataset, counts) if c <= threshold]
    many = [x for x, c in zip(dataset, counts) if c > threshold]
    return few, many
