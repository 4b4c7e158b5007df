"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Closed-world by design: the only differentiable primitives are the ones
defined in this file (affine/matmul, tanh, sigmoid, softplus, exp, log,
square, sum, mean, max, elementwise arithmetic and a few structural ops).
Everything the learners need, nothing more.  All data is float64; checked
construction rejects NaN/Inf.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericsError

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "grad",
    "value_and_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "affine",
    "tanh",
    "sigmoid",
    "softplus",
    "exp",
    "log",
    "square",
    "tsum",
    "tmean",
    "tmax",
    "reshape",
    "repeat_rows",
    "slice_cols",
]

_LN_2PI = float(np.log(2.0 * np.pi))


class Tensor:
    """A dense float64 array plus an optional gradient tape entry.

    Leaf tensors created with ``requires_grad=True`` receive ``.grad``
    after a backward pass.  Interior nodes hold backward closures; the
    graph is rebuilt per loss evaluation (define-by-run).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, checked: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if checked and not np.all(np.isfinite(arr)):
            raise NumericsError("tensor constructed with non-finite entries")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bw = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    # operator sugar; non-Tensor operands are treated as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer, np.ndarray)):
        return Tensor(x, requires_grad=False, checked=False)
    raise ContractError(f"unsupported operand type for autodiff op: {type(x).__name__}")


def _node(data: np.ndarray, parents, bw) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = any(p.requires_grad for p in parents)
    if t.requires_grad:
        t._parents = tuple(parents)
        t._bw = bw
    else:
        t._parents = ()
        t._bw = None
    return t


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
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
            stack.append((p, False))
    return order


def _accum(p: Tensor, g: np.ndarray):
    if not p.requires_grad:
        return
    g = _unbroadcast(g, p.data.shape)
    p.grad = g if p.grad is None else p.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _node(a.data / b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bw)


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is a 2-D weight matrix; ``a`` is 1-D or 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim not in (1, 2):
        raise ContractError(
            f"matmul supports (n,)x(n,m) or (b,n)x(n,m); got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[0]:
        raise ContractError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

    def bw(g):
        _accum(a, g @ b.data.T)
        if a.data.ndim == 1:
            _accum(b, np.outer(a.data, g))
        else:
            _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bw)


def affine(x, w, b) -> Tensor:
    """x @ w + b, the single layer everything here is built from."""
    return add(matmul(x, w), b)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out * out))

    return _node(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _sigmoid_np(a.data)

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return _node(out, (a,), bw)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out = _softplus_np(a.data)

    def bw(g):
        _accum(a, g * _sigmoid_np(a.data))

    return _node(out, (a,), bw)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        _accum(a, g * out)

    return _node(out, (a,), bw)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), bw)


def square(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accum(a, 2.0 * g * a.data)

    return _node(a.data * a.data, (a,), bw)


def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), shape).copy())

    return _node(a.data.sum(axis=axis), (a,), bw)


def tmean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g / n, axis), shape).copy())

    return _node(a.data.mean(axis=axis), (a,), bw)


def tmax(a, axis=None) -> Tensor:
    """Max reduction; gradient splits evenly across tied maxima."""
    a = _as_tensor(a)
    out = a.data.max(axis=axis)

    def bw(g):
        if axis is None:
            mask = (a.data == out).astype(np.float64)
            _accum(a, mask * (g / mask.sum()))
        else:
            expanded = np.expand_dims(out, axis)
            mask = (a.data == expanded).astype(np.float64)
            mask /= mask.sum(axis=axis, keepdims=True)
            _accum(a, mask * np.expand_dims(g, axis))

    return _node(out, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    orig = a.data.shape

    def bw(g):
        _accum(a, g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), bw)


def repeat_rows(a, k: int) -> Tensor:
    """Repeat each row of a 2-D tensor k times (rows interleaved)."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ContractError("repeat_rows expects a 2-D tensor")
    n, m = a.data.shape

    def bw(g):
        _accum(a, g.reshape(n, k, m).sum(axis=1))

    return _node(np.repeat(a.data, k, axis=0), (a,), bw)


def slice_cols(a, j0: int, j1: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ContractError("slice_cols expects a 2-D tensor")

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, j0:j1] = g
        _accum(a, full)

    return _node(a.data[:, j0:j1].copy(), (a,), bw)


# ---------------------------------------------------------------------------
# gradient driver
# ---------------------------------------------------------------------------

def grad(loss_fn, params):
    """Gradients of a scalar loss w.r.t. each parameter tensor.

    ``loss_fn`` takes no arguments and must return a scalar Tensor built
    from the primitives above (it closes over ``params``).  Returns one
    float64 array per parameter, zeros for parameters the loss does not
    touch.
    """
    return value_and_grad(loss_fn, params)[1]


def value_and_grad(loss_fn, params):
    """Like grad() but also returns the loss value."""
    for p in params:
        if not isinstance(p, Tensor) or not p.requires_grad:
            raise ContractError("grad() params must be Tensors with requires_grad=True")
        p.grad = None
    loss = loss_fn()
    if not isinstance(loss, Tensor):
        raise ContractError("loss_fn must return a Tensor built from supported primitives")
    if loss.data.size != 1:
        raise ContractError("loss_fn must return a scalar")
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    return float(loss.data), grads


# plain-numpy helpers shared with inference paths
def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-safe for any sign and any shape
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
