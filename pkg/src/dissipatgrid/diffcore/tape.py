"""Reverse-mode differentiation over small dense numpy arrays.

Every operation accepts plain ``ndarray`` operands as well as :class:`Var`.
When no operand is a ``Var`` the plain result is returned and nothing is
recorded, so the same network code serves training (on a tape) and
inference (off the tape).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called outside its documented contract."""


class NonFiniteError(FloatingPointError):
    """A recorded value or gradient is not finite."""


@dataclass
class Node:
    value: np.ndarray
    parents: tuple[int, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    name: str = ""


@dataclass
class Tape:
    """Linear record of operations; parents always precede children."""

    nodes: list[Node] = field(default_factory=list)

    def _push(self, value, parents=(), vjp=None, name="") -> "Var":
        idx = len(self.nodes)
        if any(p >= idx for p in parents):
            raise ContractError("parents must precede children on the tape")
        self.nodes.append(Node(np.asarray(value, dtype=float), tuple(parents), vjp, name))
        return Var(self, idx)

    def leaf(self, value, name: str = "") -> "Var":
        return self._push(np.array(value, dtype=float), name=name)

    @property
    def values(self) -> list[np.ndarray]:
        return [n.value for n in self.nodes]

    def health_check(self) -> list[int]:
        """Indices of nodes holding non-finite values."""
        return [i for i, n in enumerate(self.nodes) if not np.all(np.isfinite(n.value))]

    def backward(self, root: "Var") -> list[np.ndarray | None]:
        """Adjoints of every node w.r.t. the scalar ``root``."""
        if root.tape is not self:
            raise ContractError("root belongs to another tape")
        if root.value.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.value.shape}")
        grads: list[np.ndarray | None] = [None] * (root.index + 1)
        grads[root.index] = np.ones_like(root.value)
        for i in range(root.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for p, gp in zip(node.parents, node.vjp(g)):
                if gp is None:
                    continue
                grads[p] = gp if grads[p] is None else grads[p] + gp
        return grads

    def grad(self, root: "Var", wrt: Sequence["Var"]) -> list[np.ndarray]:
        """Gradients of ``root`` w.r.t. leaves; unreached leaves get zeros."""
        grads = self.backward(root)
        out = []
        for v in wrt:
            g = grads[v.index] if v.index < len(grads) else None
            out.append(np.zeros_like(v.value) if g is None else g)
        return out


class Var:
    __slots__ = ("tape", "index")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def mT(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None):
        return reduce_sum(self, axis)


def value_of(a) -> np.ndarray:
    return a.value if isinstance(a, Var) else np.asarray(a, dtype=float)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise ContractError("operands live on different tapes")
            tape = a.tape
    return tape


def record(value, args: Sequence, vjp) -> "Var | np.ndarray":
    """Record ``value`` as a node whose parents are the ``Var`` entries of ``args``.

    ``vjp`` receives the output adjoint and returns one adjoint per entry of
    ``args`` (entries for non-Var arguments are ignored).
    """
    tape = _tape_of(*args)
    if tape is None:
        return value
    mask = [isinstance(a, Var) for a in args]
    parents = tuple(a.index for a in args if isinstance(a, Var))

    def _vjp(g):
        gs = vjp(g)
        return [gi for gi, m in zip(gs, mask) if m]

    return tape._push(value, parents, _vjp)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    va, vb = value_of(a), value_of(b)
    return record(va + vb, (a, b), lambda g: (unbroadcast(g, va.shape), unbroadcast(g, vb.shape)))


def sub(a, b):
    va, vb = value_of(a), value_of(b)
    return record(va - vb, (a, b), lambda g: (unbroadcast(g, va.shape), unbroadcast(-g, vb.shape)))


def mul(a, b):
    va, vb = value_of(a), value_of(b)
    return record(
        va * vb, (a, b), lambda g: (unbroadcast(g * vb, va.shape), unbroadcast(g * va, vb.shape))
    )


def div(a, b):
    va, vb = value_of(a), value_of(b)
    return record(
        va / vb,
        (a, b),
        lambda g: (unbroadcast(g / vb, va.shape), unbroadcast(-g * va / (vb * vb), vb.shape)),
    )


def neg(a):
    return record(-value_of(a), (a,), lambda g: (-g,))


def matmul(a, b):
    """``a @ b`` with numpy batching; 1-D operands are promoted as numpy does."""
    va, vb = value_of(a), value_of(b)
    out = va @ vb

    def vjp(g):
        if va.ndim == 1 and vb.ndim == 1:
            return g * vb, g * va
        a2 = va[None, :] if va.ndim == 1 else va
        b2 = vb[:, None] if vb.ndim == 1 else vb
        g2 = g
        if va.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if vb.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape)
        gb = unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape)
        if va.ndim == 1:
            ga = ga[0]
        if vb.ndim == 1:
            gb = gb[:, 0]
        return ga, gb

    return record(out, (a, b), vjp)


def transpose(a):
    """Swap the last two axes."""
    return record(np.swapaxes(value_of(a), -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape):
    va = value_of(a)
    return record(va.reshape(shape), (a,), lambda g: (g.reshape(va.shape),))


def getitem(a, idx):
    va = value_of(a)

    def vjp(g):
        z = np.zeros_like(va)
        np.add.at(z, idx, g)
        return (z,)

    return record(va[idx], (a,), vjp)


def reduce_sum(a, axis=None):
    va = value_of(a)
    out = va.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, va.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), va.shape).copy(),)

    return record(out, (a,), vjp)


def reduce_mean(a, axis=None):
    va = value_of(a)
    n = va.size if axis is None else va.shape[axis]
    return mul(reduce_sum(a, axis), 1.0 / n)


def absolute(a):
    va = value_of(a)
    return record(np.abs(va), (a,), lambda g: (g * np.sign(va),))


def square(a):
    va = value_of(a)
    return record(va * va, (a,), lambda g: (2.0 * va * g,))


def max_select(a):
    """Maximum over the leading axis of a 1-D array; ties go to the lowest index.

    The adjoint flows only to the selected element.
    """
    va = value_of(a)
    if va.ndim != 1 or va.size == 0:
        raise ContractError("max_select expects a non-empty 1-D operand")
    k = int(np.argmax(va))

    def vjp(g):
        z = np.zeros_like(va)
        z[k] = g
        return (z,)

    return record(va[k], (a,), vjp)


def diagonal(a):
    """Diagonal of the last two axes, shape (..., p)."""
    va = value_of(a)
    p = va.shape[-1]

    def vjp(g):
        z = np.zeros_like(va)
        idx = np.arange(p)
        z[..., idx, idx] = g
        return (z,)

    return record(np.diagonal(va, axis1=-2, axis2=-1).copy(), (a,), vjp)


def diag_embed(a):
    """Square matrices with ``a`` (shape (..., p)) on the diagonal."""
    va = value_of(a)
    p = va.shape[-1]
    out = np.zeros(va.shape + (p,))
    idx = np.arange(p)
    out[..., idx, idx] = va
    return record(out, (a,), lambda g: (np.diagonal(g, axis1=-2, axis2=-1).copy(),))


def tril_indices(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major lower-triangular positions (row 0 first, columns ascending)."""
    return np.tril_indices(p)


def tril_from_vector(a, p: int):
    """Fill a lower-triangular ``p x p`` matrix from the last axis of ``a``."""
    va = value_of(a)
    k = p * (p + 1) // 2
    if va.shape[-1] != k:
        raise ContractError(f"expected {k} entries for a {p}x{p} triangle, got {va.shape[-1]}")
    rows, cols = tril_indices(p)
    out = np.zeros(va.shape[:-1] + (p, p))
    out[..., rows, cols] = va
    return record(out, (a,), lambda g: (g[..., rows, cols],))
