"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when any
input requires a gradient; outside a tape they run untracked. Backward
replays the tape in exact reverse order::

    with Tape() as tape:
        loss = (w * w).sum()
    tape.backward(loss)
    w.grad  # -> 2 * w.data

Only the broadcasting numpy already performs for elementwise operations is
supported; reductions in backward undo it.
"""
from __future__ import annotations

import io
import math
import struct
import threading
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, NumericalError

DTYPE = np.float64
_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(data: np.ndarray, what: str) -> None:
    if not math.isfinite(float(np.sum(data))) and not np.isfinite(data).all():
        raise NumericalError(f"non-finite value produced by {what}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def relu(self):
        return relu(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out._op = op
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.records.append(out)
    return out


class Tape:
    """Ordered record of tracked operations."""

    def __init__(self):
        self.records: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every tracked leaf."""
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise ValueError("tape is empty; was the loss computed inside the tape?")
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any tracked tensor")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.records):
            g = node.grad
            if g is None:
                continue
            grads = node._backward(g)
            for parent, pg in zip(node._parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                _check_finite(pg, f"backward of {node._op}")
                parent.grad = pg if parent.grad is None else parent.grad + pg
        # release intermediates
        for node in self.records:
            node._backward = None
            node._parents = ()
        self.records = []


def backward(loss: Tensor, tape: Tape, params: "ParamStore | None" = None) -> dict[str, np.ndarray] | None:
    """Run ``tape.backward(loss)``; with ``params``, return every parameter's gradient."""
    tape.backward(loss)
    return params.grads() if params is not None else None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _result(ad * bd, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _result(out, (a, b), back, "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return _result(y, (x,), lambda g: (g / xd,), "log")


# ---------------------------------------------------------------- linear algebra & shape

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _result(ad @ bd, (a, b), back, "matmul")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


# ---------------------------------------------------------------- gather / scatter

def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[index]`` along axis 0 (embedding lookup); backward scatter-adds."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def back(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), back, "take_rows")


embedding_lookup = take_rows


def scatter_add(x: Tensor, index: np.ndarray, num_segments: int) -> Tensor:
    """``out[index[i]] += x[i]``; rows of the output not indexed stay zero."""
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, index, x.data)
    return _result(out, (x,), lambda g: (g[index],), "scatter_add")


def _segment_max(x: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    m = np.full(n, -np.inf)
    np.maximum.at(m, seg, x)
    return m


def segment_softmax(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of a 1-D tensor within each group of equal segment ids."""
    seg = np.asarray(segments, dtype=np.int64)
    if x.ndim != 1:
        raise ValueError("segment_softmax expects a 1-D tensor")
    if x.size == 0:
        return _result(x.data.copy(), (x,), lambda g: (g,), "segment_softmax")
    shifted = x.data - _segment_max(x.data, seg, num_segments)[seg]
    e = np.exp(shifted)
    denom = np.bincount(seg, weights=e, minlength=num_segments)
    y = e / denom[seg]

    def back(g):
        dot = np.bincount(seg, weights=g * y, minlength=num_segments)
        return (y * (g - dot[seg]),)

    return _result(y, (x,), back, "segment_softmax")


def segment_log_softmax(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    seg = np.asarray(segments, dtype=np.int64)
    if x.ndim != 1:
        raise ValueError("segment_log_softmax expects a 1-D tensor")
    shifted = x.data - _segment_max(x.data, seg, num_segments)[seg]
    lse = np.log(np.bincount(seg, weights=np.exp(shifted), minlength=num_segments))
    y = shifted - lse[seg]
    p = np.exp(y)

    def back(g):
        gs = np.bincount(seg, weights=g, minlength=num_segments)
        return (g - p * gs[seg],)

    return _result(y, (x,), back, "segment_log_softmax")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, (x,), back, "softmax")


def cross_entropy_with_logits(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean of ``-log softmax(logits[i])[targets[i]]`` over rows of a 2-D tensor."""
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    b, c = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != b:
        raise ValueError("one target per row required")
    if (targets < 0).any() or (targets >= c).any():
        raise IndexError(f"target index out of range for {c} classes")
    seg = np.repeat(np.arange(b), c)
    logp = segment_log_softmax(reshape(logits, (b * c,)), seg, b)
    picked = take_rows(logp, np.arange(b) * c + targets)
    return mul(tsum(picked), -1.0 / b)


# ---------------------------------------------------------------- normalization & regularization

class BatchNormState:
    """Running statistics shared across calls; updated in place."""

    def __init__(self, running_mean: np.ndarray, running_var: np.ndarray,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = momentum
        self.eps = eps

    @property
    def dim(self) -> int:
        return int(self.running_mean.shape[0])


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Normalize columns of ``x`` ([batch, D]); a batch of one uses running stats."""
    if x.ndim != 2 or x.shape[1] != state.dim:
        raise ValueError(f"batch_norm expects [batch, {state.dim}], got {x.shape}")
    xd, gd = x.data, gamma.data
    n = xd.shape[0]
    if training and n >= 2:
        mu = xd.mean(axis=0)
        var = xd.var(axis=0)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (xd - mu) * inv
        m = state.momentum
        state.running_mean *= 1.0 - m
        state.running_mean += m * mu
        state.running_var *= 1.0 - m
        state.running_var += m * var * (n / (n - 1))

        def back(g):
            dxhat = g * gd
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (xd - state.running_mean) * inv

        def back(g):
            return g * gd * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _result(xhat * gd + beta.data, (x, gamma, beta), back, "batch_norm")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------- parameters & layers

class ParamStore:
    """Named trainable tensors plus non-trainable buffers (e.g. running stats)."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(self, name: str, shape: Sequence[int], init: str | np.ndarray = "glorot") -> Tensor:
        if name in self.params or name in self.buffers:
            raise KeyError(f"parameter {name!r} already registered")
        shape = tuple(int(s) for s in shape)
        if isinstance(init, np.ndarray):
            data = np.array(init, dtype=DTYPE).reshape(shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "glorot":
            fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (1, shape[0])
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-bound, bound, shape)
        elif init == "normal":
            data = self.rng.normal(0.0, 1.0 / math.sqrt(shape[-1]), shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise KeyError(f"buffer {name!r} already registered")
        arr = np.array(value, dtype=DTYPE)
        self.buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in self.params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.params.items()}
        state.update({name: arr.copy() for name, arr in self.buffers.items()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        expected = set(self.params) | set(self.buffers)
        if strict and set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise DataError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, value in state.items():
            target = self.params[name].data if name in self.params else self.buffers.get(name)
            if target is None:
                continue
            value = np.asarray(value, dtype=DTYPE)
            if value.shape != target.shape:
                raise DataError(f"checkpoint shape mismatch for {name}: {value.shape} vs {target.shape}")
            np.copyto(target, value)


class Linear:
    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int, bias: bool = True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = store.add(f"{name}.weight", (in_dim, out_dim))
        self.bias = store.add(f"{name}.bias", (out_dim,), "zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"Linear expects width {self.in_dim}, got {x.shape[-1]}")
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class BatchNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", (dim,), "ones")
        self.beta = store.add(f"{name}.beta", (dim,), "zeros")
        self.state = BatchNormState(store.add_buffer(f"{name}.running_mean", np.zeros(dim)),
                                    store.add_buffer(f"{name}.running_var", np.ones(dim)),
                                    momentum, eps)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.state, training)


class MLP:
    """Linear -> [batch norm] -> ReLU -> Linear."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, hidden: int, out_dim: int,
                 norm: bool = False):
        self.first = Linear(store, f"{name}.0", in_dim, hidden)
        self.norm = BatchNorm(store, f"{name}.bn", hidden) if norm else None
        self.second = Linear(store, f"{name}.1", hidden, out_dim)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        h = self.first(x)
        if self.norm is not None:
            h = self.norm(h, training)
        return self.second(relu(h))


# ---------------------------------------------------------------- named-tensor container

MAGIC = b"WGTENSOR"
FORMAT_VERSION = 1


def dumps_tensors(arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays; records are sorted by name so output is byte-stable."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BI", FORMAT_VERSION, len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def loads_tensors(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if bytes(view[: len(MAGIC)]) != MAGIC:
        raise DataError("not a tensor container (bad magic header)")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<BI", view, pos)
    pos += struct.calcsize("<BI")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported tensor container version {version}")
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", view, pos)
            pos += 8 * ndim
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(view):
                raise DataError("truncated tensor container")
            out[name] = np.frombuffer(view[pos:pos + nbytes], dtype="<f8").reshape(shape).astype(DTYPE)
            pos += nbytes
    except struct.error as exc:
        raise DataError(f"truncated tensor container: {exc}") from None
    return out


def save_tensors(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_tensors(arrays))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    return loads_tensors(Path(path).read_bytes())


def numerical_gradient(f: Callable[[], float], x: np.ndarray, index: tuple[int, ...], h: float = 1e-4) -> float:
    """Central difference of ``f`` with respect to ``x[index]`` (``x`` perturbed in place)."""
    orig = x[index]
    x[index] = orig + h
    fp = f()
    x[index] = orig - h
    fm = f()
    x[index] = orig
    return (fp - fm) / (2.0 * h)


def iter_param_entries(store: ParamStore, rng: np.random.Generator, count: int,
                       names: Iterable[str] | None = None) -> list[tuple[str, tuple[int, ...]]]:
    """Sample ``count`` (parameter name, flat-index-as-tuple) pairs uniformly over names."""
    pool = sorted(names if names is not None else store.params)
    picks = []
    for _ in range(count):
        name = pool[int(rng.integers(len(pool)))]
        shape = store[name].shape
        picks.append((name, tuple(int(rng.integers(s)) for s in shape)))
    return picks
