"""
Reverse-mode autodiff on a tape
===============================

Operations record themselves on the active tape. ``backward`` walks it in
reverse order. Central differences confirm the gradients.
"""

import numpy as np

from workgraph import tensor_core as tc

store = tc.ParamStore(seed=0)
w = store.add("gnn.w", (3, 2))
x = tc.Tensor(np.random.default_rng(1).normal(size=(4, 3)))
seg = np.array([0, 0, 1, 1])


def loss_fn():
    h = tc.relu(tc.matmul(x, w))
    p = tc.segment_softmax(tc.tsum(h, axis=1), seg, 2)
    return tc.tsum(tc.log(p + 1e-3))


store.zero_grad()
with tc.Tape() as tape:
    loss = loss_fn()
print("loss", loss.item(), "recorded ops", len(tape))
tape.backward(loss)

# compare each entry with (f(w + h) - f(w - h)) / 2h
h = 1e-5
numeric = np.zeros_like(w.data)
for idx in np.ndindex(w.shape):
    w.data[idx] += h
    up = loss_fn().item()
    w.data[idx] -= 2 * h
    down = loss_fn().item()
    w.data[idx] += h
    numeric[idx] = (up - down) / (2 * h)
print("analytic\n", w.grad)
print("max abs difference", np.abs(numeric - w.grad).max())
