"""Small-model builders and the full-model gradient check shared by several test files."""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from conftest import random_working_graph
from oracles import relative_error
from workgraph import tensor_core as tc
from workgraph.model import GraphReasoner, ModelConfig, TokenVocab, collate
from workgraph.trainer import QAItem, batch_choice_loss


def random_item(rng, num_choices=3, max_nodes=12, example_id="ex"):
    graphs = [random_working_graph(rng, max_nodes, example_id=example_id, choice=i) for i in range(num_choices)]
    return QAItem(example_id, graphs, int(rng.integers(num_choices)))


def model_for(items, seed=0, **config):
    graphs = [g for it in items for g in it.graphs]
    vocab = TokenVocab.from_graphs(graphs)
    n_ent = int(max(g.entity_ids.max() for g in graphs)) + 1
    cfg = ModelConfig(**{"D": 8, "L": 2, "dropout_p": 0.0, "batch_norm": False, **config})
    return GraphReasoner(cfg, graphs[0].num_relations, max(n_ent, 1), vocab, seed=seed)


@contextmanager
def relu_masks(sink: list):
    """Record every ReLU activation pattern computed inside the block."""
    original = tc.relu

    def recording(x):
        sink.append(x.data > 0)
        return original(x)

    tc.relu = recording
    try:
        yield
    finally:
        tc.relu = original


def kink_free_difference(f, x, idx, h=1e-4):
    """Central difference, or None when the +-h stencil flips any ReLU (non-differentiable point)."""
    base, plus, minus = [], [], []
    with relu_masks(base):
        f()
    orig = x[idx]
    x[idx] = orig + h
    with relu_masks(plus):
        fp = f()
    x[idx] = orig - h
    with relu_masks(minus):
        fm = f()
    x[idx] = orig
    same = all(np.array_equal(a, b) and np.array_equal(a, c) for a, b, c in zip(base, plus, minus))
    return (fp - fm) / (2 * h) if same else None


def full_model_gradient_error(seed: int, checks: int = 10) -> float:
    """Max relative error over ``checks`` random parameter entries of one random instance."""
    rng = np.random.default_rng(seed)
    item = random_item(rng, num_choices=int(rng.integers(2, 4)))
    model = model_for([item], seed=seed, D=int(rng.choice([8, 16])), L=int(rng.integers(1, 4)))
    batch = collate(item.graphs, model.vocab)

    def loss():
        return batch_choice_loss(model(batch, training=False), [item])

    model.store.zero_grad()
    with tc.Tape() as tape:
        value = loss()
    tape.backward(value)
    grads = model.store.grads()
    # sample among entries with a nonzero tape gradient so the check is informative
    live = sorted(n for n, g in grads.items() if np.any(g != 0))
    if not live:
        raise AssertionError(f"instance {seed} has no nonzero gradient to check")
    worst = 0.0
    done = tries = 0
    while done < checks:
        tries += 1
        if tries > 20 * checks:
            raise AssertionError(f"instance {seed}: too many stencils cross a ReLU kink")
        name = live[int(rng.integers(len(live)))]
        nz = np.argwhere(grads[name] != 0)
        idx = tuple(int(i) for i in nz[int(rng.integers(len(nz)))])
        num = kink_free_difference(lambda: loss().item(), model.store[name].data, idx)
        if num is None:
            continue
        done += 1
        worst = max(worst, relative_error(grads[name][idx], num))
    return worst
