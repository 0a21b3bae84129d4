"""Minimal reverse-mode automatic differentiation over 2-D arrays.

Every operation appends one node to the :class:`Tape` that owns its
inputs. Recording order is a topological order, so :meth:`Tape.backward`
walks the node list once in reverse.
"""

import numpy as np

from ..errors import ShapeError
from .linalg import check_finite, mse_loss, softmax_cross_entropy


class Var:
    __slots__ = ("value", "grad", "tape", "requires_grad", "name")

    def __init__(self, tape, value, requires_grad=True, name=None):
        self.tape = tape
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes = []

    def var(self, value, name=None):
        """A leaf that receives a gradient."""
        v = np.array(value, dtype=np.float64)
        check_finite(v, name or "leaf")
        return Var(self, v, True, name)

    def const(self, value):
        return Var(self, np.asarray(value, dtype=np.float64), False)

    def _record(self, value, parents, backward):
        out = Var(self, value, any(p.requires_grad for p in parents))
        if out.requires_grad:
            self.nodes.append(_Node(out, parents, backward))
        return out

    def backward(self, out):
        """Populate ``.grad`` of every Var that ``out`` depends on."""
        if out.value.size != 1:
            raise ShapeError("backward expects a scalar output")
        for node in self.nodes:
            node.out.grad = None
            for p in node.parents:
                p.grad = None
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg.copy() if pg.base is not None else pg
                else:
                    parent.grad = parent.grad + pg


def _lift(tape, x):
    if isinstance(x, Var):
        return x
    return tape.const(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.value.shape, b.value.shape
    return tape._record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.value.shape, b.value.shape
    return tape._record(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
    )


def mul(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    return tape._record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def matmul(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: {av.shape} x {bv.shape}")
    return tape._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(x, w, b):
    return add(matmul(x, w), b)


def sigmoid(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return x.tape._record(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x):
    t = np.tanh(x.value)
    return x.tape._record(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x):
    on = x.value > 0
    return x.tape._record(np.where(on, x.value, 0.0), (x,), lambda g: (g * on,))


def identity(x):
    return x


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "linear": identity}


def concat(parts, axis=1):
    tape = parts[0].tape
    sizes = [p.value.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return tape._record(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), backward)


def columns(x, start, stop):
    shape = x.value.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return x.tape._record(x.value[:, start:stop], (x,), backward)


def take_rows(table, indices):
    """Embedding lookup: rows of ``table`` selected by integer ``indices``."""
    idx = np.asarray(indices, dtype=np.int64)
    shape = table.value.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return table.tape._record(table.value[idx], (table,), backward)


def blend(new, old, keep):
    """Row-wise select: ``keep`` rows take ``new``, the rest keep ``old``."""
    m = np.asarray(keep, dtype=np.float64).reshape(-1, 1)
    return add(mul(new, m), mul(old, 1.0 - m))


def sum_all(x):
    shape = x.value.shape
    return x.tape._record(np.array(x.value.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def scale(x, c):
    return x.tape._record(x.value * c, (x,), lambda g: (g * c,))


def mse(pred, target):
    loss, grad = mse_loss(pred.value, target)
    return pred.tape._record(np.array(loss), (pred,), lambda g: (grad * float(g),))


def softmax_ce(logits, targets, weights=None):
    loss, grad = softmax_cross_entropy(logits.value, targets, weights)
    return logits.tape._record(np.array(loss), (logits,), lambda g: (grad * float(g),))
