"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record their parents and a backward closure, building a dynamic
tape that is discarded once the root is differentiated. Operations on plain
constants record nothing, so inference code pays no bookkeeping cost.

Broadcasting follows numpy; adjoints are summed back to the operand shape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, NumericError

__all__ = [
    "Tensor",
    "as_tensor",
    "constant",
    "parameter",
    "evaluate_with_gradients",
    "value_and_grad",
    "matmul",
    "sum",
    "mean",
    "sqrt",
    "log",
    "exp",
    "sigmoid",
    "silu",
    "clamp",
    "affine",
    "square",
    "magnitude",
    "xlogx",
    "cumprod",
    "concat",
    "reshape",
    "transpose",
    "swapaxes",
]


class Tensor:
    """Immutable array value with an optional position on the gradient tape."""

    __slots__ = ("value", "requires_grad", "grad", "op", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad=False, *, op="leaf", parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value)

    def detach(self):
        return Tensor(self.value)

    def __repr__(self):
        tag = f", op={self.op!r}" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return len(self.value)

    # -- arithmetic ----------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return _make(-self.value, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    # -- reductions and reshapes as methods ----------------------------
    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf."""
        adjoints = _backprop(self)
        for node in _topological(self):
            if not node._parents and node.requires_grad:
                g = adjoints.get(id(node))
                if g is not None:
                    node.grad = g if node.grad is None else node.grad + g

    def zero_grad(self):
        self.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x.value if isinstance(x, Tensor) else x)


def parameter(x) -> Tensor:
    return Tensor(x.value if isinstance(x, Tensor) else x, requires_grad=True)


def _make(value, parents, backward, op):
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, op=op, parents=parents, backward=backward)
    return Tensor(value)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ContractError(f"{op}: incompatible shapes {shapes}") from exc


# -- elementwise binary ------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.shape, b.shape)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("subtract", a.shape, b.shape)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "subtract",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("multiply", a.shape, b.shape)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
        "multiply",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("divide", a.shape, b.shape)
    if np.any(b.value == 0):
        raise NumericError("divide: zero denominator", op="divide")
    out = a.value / b.value
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)),
        "divide",
    )


def power(a, exponent: float):
    a = as_tensor(a)
    if exponent == 2:
        return square(a)
    out = a.value**exponent
    return _make(out, (a,), lambda g: (g * exponent * a.value ** (exponent - 1),), "power")


def square(a):
    a = as_tensor(a)
    return _make(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,), "square")


# -- linear algebra ------------------------------------------------------
def matmul(a, b):
    """Batched matrix product; both operands need at least two dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _check_broadcast("matmul", a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.value @ b.value, (a, b), backward, "matmul")


def affine(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis of ``x``."""
    out = matmul(x, weight)
    return out if bias is None else out + bias


# -- reductions ----------------------------------------------------------
def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)
    return _make(
        out, (x,), lambda g: (np.array(_expand_reduced(g, x.shape, axis, keepdims)),), "sum"
    )


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.value.mean(axis=axis, keepdims=keepdims)
    count = x.size / max(out.size, 1)
    return _make(
        out,
        (x,),
        lambda g: (np.array(_expand_reduced(g, x.shape, axis, keepdims)) / count,),
        "mean",
    )


def cumprod(x, axis=-1):
    """Cumulative product; inputs must be nonzero (true for alpha in (0, 1))."""
    x = as_tensor(x)
    out = np.cumprod(x.value, axis=axis)

    def backward(g):
        # d out_j / d x_i = out_j / x_i for j >= i
        rev = np.flip(np.cumsum(np.flip(g * out, axis=axis), axis=axis), axis=axis)
        return (rev / x.value,)

    if x.requires_grad and np.any(x.value == 0):
        raise NumericError("cumprod: zero entry blocks the adjoint", op="cumprod")
    return _make(out, (x,), backward, "cumprod")


# -- unary elementwise ----------------------------------------------------
def sqrt(x):
    x = as_tensor(x)
    if np.any(x.value < 0):
        raise NumericError("sqrt of negative input", op="sqrt")
    out = np.sqrt(x.value)

    def backward(g):
        # infinite slope at 0 is left for the finiteness check to report
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * 0.5 / out,)

    return _make(out, (x,), backward, "sqrt")


def log(x):
    x = as_tensor(x)
    if np.any(x.value <= 0):
        raise NumericError("log of non-positive input", op="log")
    return _make(np.log(x.value), (x,), lambda g: (g / x.value,), "log")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.value)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def sigmoid(x):
    x = as_tensor(x)
    out = expit(x.value)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(x):
    x = as_tensor(x)
    s = expit(x.value)
    out = x.value * s
    return _make(out, (x,), lambda g: (g * (s + x.value * s * (1.0 - s)),), "silu")


def clamp(x, lo, hi):
    """Clip into ``[lo, hi]``; the adjoint is zero where the input lies outside."""
    x = as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _make(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def magnitude(re, im):
    """``sqrt(re**2 + im**2)`` with a zero subgradient at the origin."""
    re, im = as_tensor(re), as_tensor(im)
    out = np.hypot(re.value, im.value)
    safe = np.where(out > 0, out, 1.0)
    scale = np.where(out > 0, 1.0 / safe, 0.0)

    def backward(g):
        return g * re.value * scale, g * im.value * scale

    return _make(out, (re, im), backward, "magnitude")


def xlogx(x):
    """``x * log(x)`` with the convention ``0 * log 0 = 0``; needs ``x >= 0``."""
    x = as_tensor(x)
    if np.any(x.value < 0):
        raise NumericError("xlogx of negative input", op="xlogx")
    pos = x.value > 0
    safe = np.where(pos, x.value, 1.0)
    out = np.where(pos, x.value * np.log(safe), 0.0)
    return _make(out, (x,), lambda g: (np.where(pos, g * (np.log(safe) + 1.0), 0.0),), "xlogx")


# -- structural -----------------------------------------------------------
def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    out = np.transpose(x.value, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x, a, b):
    x = as_tensor(x)
    return _make(
        np.swapaxes(x.value, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes"
    )


def take(x, index):
    """Basic or integer-array indexing; repeated indices accumulate adjoints."""
    x = as_tensor(x)
    if isinstance(index, Tensor):
        raise ContractError("index must be an integer array, not a Tensor")
    out = x.value[index]

    def backward(g):
        full = np.zeros(x.shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (x,), backward, "index")


def concat(tensors: Sequence, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(out, tuple(tensors), backward, "concat")


# -- differentiation ------------------------------------------------------
def _topological(root: Tensor):
    order, seen = [], set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _backprop(root: Tensor):
    if root.size != 1:
        raise ContractError(f"gradient root must be scalar, got shape {root.shape}")
    adjoints = {id(root): np.ones_like(root.value)}
    if not root.requires_grad:
        return adjoints
    for node in reversed(_topological(root)):
        g = adjoints.get(id(node))
        if g is None or node._backward is None:
            continue
        grads = node._backward(g)
        for parent, gp in zip(node._parents, grads):
            if gp is None or not parent.requires_grad:
                continue
            gp = np.asarray(gp, dtype=np.float64)
            if not np.all(np.isfinite(gp)):
                raise NumericError(f"non-finite adjoint produced by '{node.op}'", op=node.op)
            prev = adjoints.get(id(parent))
            adjoints[id(parent)] = gp if prev is None else prev + gp
    return adjoints


def evaluate_with_gradients(root: Tensor, wrt: Iterable[Tensor]):
    """Return ``(value, [d root / d w for w in wrt])``.

    Tensors that do not influence ``root`` receive a zero gradient. Adjoints
    live in a local table, so the same graph may be differentiated again.
    """
    wrt = list(wrt)
    adjoints = _backprop(root)
    grads = []
    for w in wrt:
        g = adjoints.get(id(w)) if w.requires_grad else None
        grads.append(np.zeros(w.shape) if g is None else np.array(g).reshape(w.shape))
    return float(root.value), grads


def value_and_grad(fn: Callable, params: dict, *args, **kwargs):
    """Evaluate ``fn(leaves, *args)`` and differentiate it w.r.t. every array in ``params``.

    ``params`` maps names to numpy arrays; ``fn`` receives the same mapping with
    each array wrapped as a gradient-tracking leaf.
    """
    leaves = {k: parameter(v) for k, v in params.items()}
    root = fn(leaves, *args, **kwargs)
    value, grads = evaluate_with_gradients(root, leaves.values())
    return value, dict(zip(leaves.keys(), grads))
