"""Small reverse-mode automatic differentiation over float64 numpy arrays.

A fresh tape is recorded on every forward pass: each :class:`Tensor` produced by
an op keeps references to its parents and a closure mapping the output gradient
to parent gradients. :func:`gradient` walks the recorded graph in reverse
topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class GraphError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "op", "_parents", "_backward", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __len__(self) -> int:
        return len(self.data)

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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul: shape mismatch {ad.shape} @ {bd.shape}")
    return _make(ad @ bd, "matmul", (a, b), lambda g: (g @ bd.T, ad.T @ g))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, "square", (a,), lambda g: (2.0 * g * ad,))


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis)), "sum", (a,), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, "transpose", (a,), lambda g: (g.T,))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    fancy = _needs_add_at(idx)

    def back(g):
        out = np.zeros(shape)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _make(a.data[idx], "getitem", (a,), back)


def _needs_add_at(idx) -> bool:
    # fancy (array) indexing may repeat positions; basic slicing never does
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    return _make(data, "concat", ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return _make(data, "stack", ts,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def gru_sequence(gx: Tensor, h0, Wh: Tensor, bh: Tensor, reverse: bool = False) -> Tensor:
    """Fused GRU recurrence over precomputed input projections.

    ``gx`` is (B, T, 3H) holding x_t @ Wx + bx with gate blocks [r, z, n];
    returns the hidden states (B, T, H) in time order. The backward pass is
    hand-written truncation-free BPTT.
    """
    gx, h0 = as_tensor(gx), as_tensor(h0)
    B, T, H3 = gx.shape
    H = H3 // 3
    if Wh.shape != (H, H3) or bh.shape != (H3,) or h0.shape != (B, H):
        raise ValueError(f"gru_sequence: shape mismatch gx={gx.shape} h0={h0.shape} Wh={Wh.shape}")
    Whd, gxd = Wh.data, gx.data
    order = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    hs = np.empty((B, T, H))
    cache = []
    h = h0.data
    for t in order:
        gh = h @ Whd + bh.data
        a = gxd[:, t, :]
        rz = 0.5 * (1.0 + np.tanh(0.5 * (a[:, :2 * H] + gh[:, :2 * H])))
        r, z = rz[:, :H], rz[:, H:]
        n = np.tanh(a[:, 2 * H:] + r * gh[:, 2 * H:])
        h_new = n + z * (h - n)
        cache.append((h, r, z, n, gh[:, 2 * H:]))
        hs[:, t, :] = h_new
        h = h_new

    def back(g):
        dgx = np.zeros_like(gxd)
        dWh = np.zeros_like(Whd)
        dbh = np.zeros(H3)
        dh_next = np.zeros((B, H))
        dgh = np.empty((B, H3))
        for t, (h_prev, r, z, n, ghn) in zip(reversed(order), reversed(cache)):
            dh = g[:, t, :] + dh_next
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dan = dn * (1.0 - n * n)
            dar = dan * ghn * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dgx[:, t, :H] = dar
            dgx[:, t, H:2 * H] = daz
            dgx[:, t, 2 * H:] = dan
            dgh[:, :H] = dar
            dgh[:, H:2 * H] = daz
            dgh[:, 2 * H:] = dan * r
            dWh += h_prev.T @ dgh
            dbh += dgh.sum(axis=0)
            dh_next = dh * z + dgh @ Whd.T
        return dgx, dh_next, dWh, dbh

    return _make(hs, "gru_sequence", (gx, h0, Wh, bh), back)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise GraphError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            ps = state.get(id(p))
            if ps == 1:
                raise GraphError("cycle detected in computation graph")
            if ps is None and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``loss`` for every tracked node, keyed by ``id``."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None) if node._parents else grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if not np.isfinite(pg).all():
                raise NonFiniteError(f"non-finite gradient flowing out of op '{node.op}'")
            k = id(p)
            prev = grads.get(k)
            grads[k] = pg if prev is None else prev + pg
    return grads


def gradient(loss: Tensor, params) -> dict[str, np.ndarray]:
    """d(loss)/d(p) for every named parameter; unreachable parameters get zeros.

    ``params`` is a :class:`~idm.layers.ParamSet` or any mapping name -> Tensor.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads = backward(loss) if loss.requires_grad else {}
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
    return out
