"""Reverse-mode differentiation on a tape of numpy array operations.

A :class:`Tape` records every primitive applied to a watched :class:`Var`
together with its vector-Jacobian products.  :meth:`Tape.gradient` walks the
tape backwards once.  The module-level functions (``sin``, ``matmul``,
``norm`` ...) accept plain arrays as well; with no ``Var`` among the inputs
they reduce to the numpy call and nothing is recorded, which lets the
kinematics and distance code run unchanged on either kind of input.

Example
-------
>>> with Tape() as tape:
...     x = tape.watch(np.array([0.3, -1.2]))
...     y = sum(sin(x) * x)
>>> (dx,) = tape.gradient(y, [x])
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

class Var:
    """Array value living on a tape."""

    __array_ufunc__ = None  # numpy defers binary operators to Var

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    size = property(lambda self: self.value.size)
    dtype = property(lambda self: self.value.dtype)

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Var({self.value!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class Tape:
    """Ordered record of primitive operations and their partial derivatives.

    Operations record onto the tape of their ``Var`` operands, so a tape is
    confined to whichever thread watches its inputs; it is not safe to share
    one across threads.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[tuple[Callable, ...]] = []
        self.singular = False

    def __enter__(self) -> "Tape":
        return self

    def __exit__(self, *exc) -> None:
        return None

    def __len__(self) -> int:
        return len(self._values)

    def watch(self, value) -> Var:
        """Register ``value`` as a differentiable input."""
        return self._push(np.array(value, dtype=float), (), ())

    def _push(self, value, parents, vjps) -> Var:
        self._values.append(value)
        self._parents.append(parents)
        self._vjps.append(vjps)
        return Var(value, self, len(self._values) - 1)

    def gradient(self, target: Var, sources: Sequence[Var]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` with respect to each source."""
        if not isinstance(target, Var) or target.tape is not self:
            raise ValueError("target was not recorded on this tape")
        if target.value.size != 1:
            raise ValueError("gradient target must be a scalar")
        adjoint: list = [None] * (target.index + 1)
        adjoint[target.index] = np.ones_like(target.value)
        for k in range(target.index, -1, -1):
            g = adjoint[k]
            if g is None:
                continue
            for parent, vjp in zip(self._parents[k], self._vjps[k]):
                contribution = vjp(g)
                if adjoint[parent] is None:
                    adjoint[parent] = contribution
                else:
                    adjoint[parent] = adjoint[parent] + contribution
        out = []
        for src in sources:
            g = adjoint[src.index] if src.index < len(adjoint) else None
            out.append(np.zeros_like(src.value) if g is None else np.asarray(g))
        return out


def value_of(x) -> np.ndarray:
    """Underlying array of a ``Var`` or array-like."""
    return x.value if isinstance(x, Var) else np.asarray(x)


def is_var(x) -> bool:
    return isinstance(x, Var)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _record(value, inputs, vjps):
    """Put ``value`` on the tape of the Var inputs, dropping constant branches."""
    tape = None
    parents, fns = [], []
    for x, fn in zip(inputs, vjps):
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands live on different tapes")
            parents.append(x.index)
            fns.append(fn)
    if tape is None:
        return value
    return tape._push(np.asarray(value), tuple(parents), tuple(fns))


# elementwise binary -------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _record(out, (a, b), (lambda g: _unbroadcast(g, av.shape),
                                 lambda g: _unbroadcast(g, bv.shape)))


def subtract(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _record(out, (a, b), (lambda g: _unbroadcast(g, av.shape),
                                 lambda g: _unbroadcast(-g, bv.shape)))


def multiply(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _record(out, (a, b), (lambda g: _unbroadcast(g * bv, av.shape),
                                 lambda g: _unbroadcast(g * av, bv.shape)))


def divide(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _record(out, (a, b), (lambda g: _unbroadcast(g / bv, av.shape),
                                 lambda g: _unbroadcast(-g * out / bv, bv.shape)))


def power(a, exponent: float):
    av = value_of(a)
    out = av ** exponent
    return _record(out, (a,), (lambda g: g * exponent * av ** (exponent - 1),))


def minimum(a, b):
    av, bv = value_of(a), value_of(b)
    pick_a = av <= bv
    out = np.where(pick_a, av, bv)
    return _record(out, (a, b), (lambda g: _unbroadcast(np.where(pick_a, g, 0.0), av.shape),
                                 lambda g: _unbroadcast(np.where(pick_a, 0.0, g), bv.shape)))


def maximum(a, b):
    av, bv = value_of(a), value_of(b)
    pick_a = av >= bv
    out = np.where(pick_a, av, bv)
    return _record(out, (a, b), (lambda g: _unbroadcast(np.where(pick_a, g, 0.0), av.shape),
                                 lambda g: _unbroadcast(np.where(pick_a, 0.0, g), bv.shape)))


def where(cond, a, b):
    cond = value_of(cond).astype(bool)
    av, bv = value_of(a), value_of(b)
    out = np.where(cond, av, bv)
    return _record(out, (a, b), (lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape),
                                 lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)))


# elementwise unary --------------------------------------------------------

def sin(x):
    xv = value_of(x)
    return _record(np.sin(xv), (x,), (lambda g: g * np.cos(xv),))


def cos(x):
    xv = value_of(x)
    return _record(np.cos(xv), (x,), (lambda g: -g * np.sin(xv),))


def tanh(x):
    out = np.tanh(value_of(x))
    return _record(out, (x,), (lambda g: g * (1.0 - out * out),))


def exp(x):
    out = np.exp(value_of(x))
    return _record(out, (x,), (lambda g: g * out,))


def log(x):
    xv = value_of(x)
    return _record(np.log(xv), (x,), (lambda g: g / xv,))


def sqrt(x):
    out = np.sqrt(value_of(x))
    return _record(out, (x,), (lambda g: g * 0.5 / out,))


def square(x):
    xv = value_of(x)
    return _record(xv * xv, (x,), (lambda g: 2.0 * g * xv,))


def leaky_relu(x, slope: float = 0.01):
    xv = value_of(x)
    scale = np.where(xv > 0, 1.0, slope)
    return _record(xv * scale, (x,), (lambda g: g * scale,))


def clip(x, lo, hi):
    xv = value_of(x)
    inside = (xv > lo) & (xv < hi)
    return _record(np.clip(xv, lo, hi), (x,), (lambda g: np.where(inside, g, 0.0),))


# reductions and shape -----------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    xv = value_of(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    return _record(out, (x,), (vjp,))


def mean(x, axis=None, keepdims=False):
    xv = value_of(x)
    count = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return multiply(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def norm(x, axis=-1):
    """Euclidean norm along ``axis``.

    The derivative at a zero vector is undefined; the zero subgradient is
    used there and the owning tape's ``singular`` flag is raised whenever a
    nonzero adjoint reaches such an entry.
    """
    xv = value_of(x)
    out = np.sqrt(np.sum(xv * xv, axis=axis))
    tape = x.tape if isinstance(x, Var) else None

    def vjp(g):
        zero = out == 0.0
        if tape is not None and np.any(zero & (g != 0.0)):
            tape.singular = True
        safe = np.where(zero, 1.0, out)
        return np.expand_dims(np.where(zero, 0.0, g / safe), axis) * xv

    return _record(out, (x,), (vjp,))


def reshape(x, shape):
    xv = value_of(x)
    return _record(xv.reshape(shape), (x,), (lambda g: g.reshape(xv.shape),))


def swapaxes(x, a, b):
    xv = value_of(x)
    return _record(np.swapaxes(xv, a, b), (x,), (lambda g: np.swapaxes(g, a, b),))


def expand_dims(x, axis):
    xv = value_of(x)
    return _record(np.expand_dims(xv, axis), (x,), (lambda g: g.reshape(xv.shape),))


def take(x, idx):
    xv = value_of(x)
    out = xv[idx]

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        return full

    return _record(out, (x,), (vjp,))


def stack(items, axis=0):
    values = [value_of(v) for v in items]
    out = np.stack(values, axis=axis)

    def make(k):
        return lambda g: np.take(g, k, axis=axis)

    return _record(out, items, [make(k) for k in range(len(items))])


def concatenate(items, axis=0):
    values = [value_of(v) for v in items]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def make(k):
        sl = slice(bounds[k], bounds[k + 1])
        return lambda g: g[(slice(None),) * (axis % g.ndim) + (sl,)]

    return _record(out, items, [make(k) for k in range(len(items))])


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av @ bv

    def vjp_a(g):
        if bv.ndim == 1:
            ga = np.expand_dims(g, -1) * bv
        elif av.ndim == 1:
            ga = (bv @ np.expand_dims(g, -1))[..., 0]
        else:
            ga = g @ np.swapaxes(bv, -1, -2)
        return _unbroadcast(ga, av.shape)

    def vjp_b(g):
        if av.ndim == 1:
            gb = np.expand_dims(av, -1) * np.expand_dims(g, -2)
        elif bv.ndim == 1:
            gb = (np.swapaxes(av, -1, -2) @ np.expand_dims(g, -1))[..., 0]
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(gb, bv.shape)

    return _record(out, (a, b), (vjp_a, vjp_b))


def softmax(x, axis=-1):
    """Numerically shifted softmax along ``axis``."""
    xv = value_of(x)
    z = np.exp(xv - xv.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def vjp(g):
        return out * (g - np.sum(g * out, axis=axis, keepdims=True))

    return _record(out, (x,), (vjp,))


def matvec(A, x):
    """Batched ``A @ x`` for ``A (..., i, j)`` and ``x (..., j)``."""
    Av, xv = value_of(A), value_of(x)
    out = np.einsum("...ij,...j->...i", Av, xv)

    def vjp_A(g):
        return _unbroadcast(g[..., :, None] * xv[..., None, :], Av.shape)

    def vjp_x(g):
        return _unbroadcast(np.einsum("...ij,...i->...j", Av, g), xv.shape)

    return _record(out, (A, x), (vjp_A, vjp_x))
