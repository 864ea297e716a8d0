"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`Tensor` wraps an ``ndarray`` and remembers the operation that
produced it. Calling :meth:`Tensor.backward` on a scalar walks the tape in
reverse topological order and accumulates gradients into every tensor that
requires one. Operations accept arbitrary leading batch dimensions; the
last two axes are the matrix axes.

Also here: the parameter store, Adam, and the checkpoint container.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    ContainerError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = _topological(self)
        pending = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    @property
    def T(self):
        return transpose(self)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def add_bias(x, b) -> Tensor:
    """Add a row vector ``b`` (shape ``(k,)`` or ``(1, k)``) to every row of ``x``."""
    x, b = as_tensor(x), as_tensor(b)
    if b.shape[-1] != x.shape[-1] or b.data.size != b.shape[-1]:
        raise ShapeError("add_bias", x.shape, b.shape)
    return add(x, b)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _node(a.data * b.data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** p
    return _node(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and reshaping


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def mean_rows(x) -> Tensor:
    """Average over the row (node) axis: ``(..., n, k) -> (..., k)``."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("mean_rows", x.shape)
    return mean(x, axis=-2)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape)
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(np.atleast_1d(shape))) from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in ts)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def concat_rows(u, v) -> Tensor:
    """Join two feature vectors (or batches of them) end to end."""
    return concat([u, v], axis=-1)


# ---------------------------------------------------------------------------
# linear algebra and normalisation


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(out, (a, b), backward)


def row_softmax(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    ``logits`` has shape ``(batch, classes)``. The gradient is
    ``(softmax - onehot) / batch``.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(labels.size)
    loss = np.mean(logsum - z[rows, labels])
    probs = np.exp(z - logsum[:, None])

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (g * d / labels.size,)

    return _node(loss, (logits,), backward)


# ---------------------------------------------------------------------------
# parameters and optimiser


class ParamStore:
    """Named 2-D parameter tensors plus Adam moment estimates.

    ``m`` and ``v`` hold first and second moments per parameter and ``t``
    counts optimiser steps taken so far.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value) -> Tensor:
        arr = np.array(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"param {name}", arr.shape)
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(arr, requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def num_values(self) -> int:
        return int(np.sum([p.data.size for p in self.params.values()]))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            k: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for k, p in self.params.items()
        }

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_values(self, values: Mapping[str, np.ndarray]) -> None:
        for k, arr in values.items():
            if self.params[k].shape != np.shape(arr):
                raise ShapeError(f"load {k}", self.params[k].shape, np.shape(arr))
            self.params[k].data = np.array(arr, dtype=np.float64)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, p in self.params.items():
            out.add(k, p.data)
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.t = self.t
        return out


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    for k in grads:
        if np.shape(grads[k]) != store[k].shape:
            raise ShapeError(f"adam_step {k}", store[k].shape, np.shape(grads[k]))
    store.t += 1
    bc1 = 1.0 - beta1 ** store.t
    bc2 = 1.0 - beta2 ** store.t
    for k, g in grads.items():
        m = store.m[k] = beta1 * store.m[k] + (1.0 - beta1) * g
        v = store.v[k] = beta2 * store.v[k] + (1.0 - beta2) * g * g
        store[k].data = store[k].data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_MAGIC = b"AVGC"
CHECKPOINT_VERSION = 1


def _pack_block(arrays: Mapping[str, np.ndarray]) -> bytes:
    out = []
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        rows, cols = arr.shape
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<II", rows, cols))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def checkpoint_to_bytes(store: ParamStore) -> bytes:
    head = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(store))
    body = (
        _pack_block({k: p.data for k, p in store.params.items()})
        + _pack_block(store.m)
        + _pack_block(store.v)
    )
    return head + body + struct.pack("<Q", store.t)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.buf):
            raise TruncatedFileError(f"checkpoint truncated while reading {what}")
        chunk = self.buf[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def block(self, count: int, what: str) -> dict[str, np.ndarray]:
        out = {}
        for _ in range(count):
            (size,) = self.unpack("<H", f"{what} name length")
            name = self.take(size, f"{what} name").decode("utf-8")
            rows, cols = self.unpack("<II", f"{what} shape")
            raw = self.take(4 * rows * cols, f"{what} {name}")
            out[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)
        return out


def checkpoint_from_bytes(buf: bytes) -> ParamStore:
    if buf[:4] != CHECKPOINT_MAGIC:
        if len(buf) < 4:
            raise TruncatedFileError("checkpoint shorter than the magic number")
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    r = _Reader(buf)
    r.take(4, "magic")
    version, count = r.unpack("<II", "header")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    params = r.block(count, "parameter")
    m = r.block(count, "first moment")
    v = r.block(count, "second moment")
    (t,) = r.unpack("<Q", "step counter")
    store = ParamStore()
    for k, arr in params.items():
        if k not in m or k not in v or m[k].shape != arr.shape or v[k].shape != arr.shape:
            raise ContainerError(f"optimizer moments do not match parameter {k!r}")
        store.add(k, arr)
        store.m[k] = m[k]
        store.v[k] = v[k]
    store.t = t
    return store


def write_checkpoint(store: ParamStore, path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(store))


def read_checkpoint(path) -> ParamStore:
    return checkpoint_from_bytes(Path(path).read_bytes())
