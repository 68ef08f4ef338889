"""Cross-entropy training over answer choices, Adam updates and evaluation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import DataError, NumericalError
from .graph_builder import WorkingGraph
from .model import GraphReasoner, GraphBatch, collate
from .tensor_core import ParamStore, Tape, Tensor

logger = logging.getLogger(__name__)

ENCODER_PREFIX = "encoder."


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr_encoder: float = 1e-3
    lr_gnn: float = 1e-3
    epochs: int = 30
    seed: int = 0
    grad_clip_norm: float | None = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.lr_encoder <= 0 or self.lr_gnn <= 0:
            raise ValueError("learning rates must be positive")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QAItem:
    """One question: a working graph per choice and the gold index."""

    example_id: str
    graphs: list[WorkingGraph]
    answer_index: int
    meta: Mapping[str, object] = field(default_factory=dict)

    @property
    def num_choices(self) -> int:
        return len(self.graphs)


def choice_loss(logits: Tensor, answer_index: int) -> Tensor:
    """``-log softmax(logits)[answer_index]`` for one question's choice logits."""
    n = logits.size
    if not 0 <= answer_index < n:
        raise IndexError(f"answer_index {answer_index} outside 0..{n - 1}")
    return tc.cross_entropy_with_logits(tc.reshape(logits, (1, n)), [answer_index])


def batch_choice_loss(logits: Tensor, items: Sequence[QAItem]) -> Tensor:
    """Mean choice loss over questions whose graphs were collated in order."""
    sizes = np.array([it.num_choices for it in items])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    seg = np.repeat(np.arange(len(items)), sizes)
    logp = tc.segment_log_softmax(logits, seg, len(items))
    gold = offsets[:-1] + np.array([it.answer_index for it in items])
    return tc.mul(tc.tsum(tc.take_rows(logp, gold)), -1.0 / len(items))


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float | None) -> tuple[dict[str, np.ndarray], float]:
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or total <= max_norm:
        return dict(grads), total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


class Adam:
    """Adam with per-group learning rates (encoder vs. GNN parameters)."""

    def __init__(self, store: ParamStore, lr_encoder: float, lr_gnn: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 encoder_prefix: str = ENCODER_PREFIX):
        self.store = store
        self.lr = {name: (lr_encoder if name.startswith(encoder_prefix) else lr_gnn) for name in store.params}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = self.lr[name] * (m / c1) / (np.sqrt(v / c2) + self.eps)
            self.store[name].data -= update


def optimizer_step(optimizer: Adam, grads: Mapping[str, np.ndarray], max_norm: float | None) -> float:
    """Clip then apply one Adam step; returns the pre-clip gradient norm."""
    clipped, norm = clip_grad_norm(grads, max_norm)
    optimizer.step(clipped)
    return norm


def iter_batches(items: Sequence[QAItem], batch_size: int, rng: np.random.Generator | None):
    order = np.arange(len(items)) if rng is None else rng.permutation(len(items))
    for start in range(0, len(items), batch_size):
        yield [items[i] for i in order[start:start + batch_size]]


def _collate_items(model: GraphReasoner, items: Sequence[QAItem], graph_fn, z_lm) -> GraphBatch:
    graphs = [graph_fn(g) if graph_fn else g for it in items for g in it.graphs]
    return collate(graphs, model.vocab, z_lm)


def dataset_loss(model: GraphReasoner, items: Sequence[QAItem], batch_size: int = 64, graph_fn=None, z_lm=None) -> float:
    """Eval-mode mean choice loss over a dataset."""
    total = 0.0
    for chunk in iter_batches(items, batch_size, None):
        logits = model(_collate_items(model, chunk, graph_fn, z_lm), training=False)
        total += batch_choice_loss(logits, chunk).item() * len(chunk)
    return total / len(items)


@dataclass
class EvalReport:
    accuracy: float
    hit_at_k: dict[int, float]
    per_example: list[dict]

    def summary(self) -> str:
        hits = ", ".join(f"hit@{k}={v:.4f}" for k, v in sorted(self.hit_at_k.items()))
        return f"n={len(self.per_example)} accuracy={self.accuracy:.4f} {hits}"


def rank_of(scores: Sequence[float], index: int) -> int:
    """0-based rank of ``scores[index]``; ties go to the lower index."""
    s = np.asarray(scores, dtype=float)
    target = s[index]
    return int(np.sum(s > target) + np.sum(s[:index] == target))


def report_from_scores(score_lists: Sequence[Sequence[float]], golds: Sequence[int], ks: Iterable[int] = (1, 3),
                       ids: Sequence[str] | None = None) -> EvalReport:
    ks = sorted(set(int(k) for k in ks))
    ranks = [rank_of(s, g) for s, g in zip(score_lists, golds)]
    n = len(ranks)
    per = []
    for i, (s, g, r) in enumerate(zip(score_lists, golds, ranks)):
        per.append({"id": ids[i] if ids else str(i), "gold": int(g), "pred": int(np.argmax(s)),
                    "rank": r, "scores": [float(x) for x in s]})
    acc = sum(r == 0 for r in ranks) / n if n else 0.0
    hits = {k: (sum(r < k for r in ranks) / n if n else 0.0) for k in ks}
    return EvalReport(acc, hits, per)


def evaluate(items: Sequence[QAItem], model: GraphReasoner, ks: Iterable[int] = (1, 3), batch_size: int = 64,
             graph_fn=None, z_lm=None) -> EvalReport:
    """Accuracy and Hit@k with the model in eval mode (dropout off, running statistics)."""
    scores, golds, ids = [], [], []
    for chunk in iter_batches(items, batch_size, None):
        logits = model(_collate_items(model, chunk, graph_fn, z_lm), training=False).data
        pos = 0
        for it in chunk:
            scores.append(logits[pos:pos + it.num_choices])
            golds.append(it.answer_index)
            ids.append(it.example_id)
            pos += it.num_choices
    return report_from_scores(scores, golds, ks, ids)


@dataclass
class TrainResult:
    loss_curve: list[tuple[int, float, float]]  # (epoch, train_loss, dev_acc); epoch 0 = before training
    best_epoch: int
    best_state: dict[str, np.ndarray]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "dev_acc"])
            for epoch, loss, acc in self.loss_curve:
                w.writerow([epoch, repr(float(loss)), "" if math.isnan(acc) else repr(float(acc))])


def train(items: Sequence[QAItem], model: GraphReasoner, config: TrainConfig, dev: Sequence[QAItem] | None = None,
          graph_fn: Callable[[WorkingGraph], WorkingGraph] | None = None, z_lm=None,
          on_epoch: Callable[[int, float, float], bool | None] | None = None) -> TrainResult:
    """Seeded mini-batch training; keeps the parameters with the best dev accuracy.

    Without a dev set the final parameters are kept. ``graph_fn`` rewrites
    each working graph before collation (used for z-edge ablations).
    Training stops early when ``on_epoch`` returns True.
    """
    if not items:
        raise DataError("training set is empty")
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng([config.seed, 1])
    opt = Adam(model.store, config.lr_encoder, config.lr_gnn)

    def dev_acc() -> float:
        return evaluate(dev, model, (1,), graph_fn=graph_fn, z_lm=z_lm).accuracy if dev else float("nan")

    curve = [(0, dataset_loss(model, items, graph_fn=graph_fn, z_lm=z_lm), dev_acc())]
    best_epoch, best_acc = 0, curve[0][2]
    best_state = model.store.state_dict()
    for epoch in range(1, config.epochs + 1):
        total, count = 0.0, 0
        for chunk in iter_batches(items, config.batch_size, rng):
            batch = _collate_items(model, chunk, graph_fn, z_lm)
            model.store.zero_grad()
            with Tape() as tape:
                logits = model(batch, training=True, rng=drop_rng)
                loss = batch_choice_loss(logits, chunk)
            tape.backward(loss)
            optimizer_step(opt, model.store.grads(), config.grad_clip_norm)
            total += loss.item() * len(chunk)
            count += len(chunk)
        acc = dev_acc()
        curve.append((epoch, total / count, acc))
        logger.info("epoch %d loss %.4f dev_acc %.4f", epoch, total / count, acc)
        if dev is None or acc > best_acc:
            best_epoch, best_acc = epoch, acc
            best_state = model.store.state_dict()
        if on_epoch and on_epoch(epoch, total / count, acc):
            break
    model.store.load_state_dict(best_state)
    return TrainResult(curve, best_epoch, best_state)
