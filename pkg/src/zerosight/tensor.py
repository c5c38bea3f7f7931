"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every differentiable primitive records the tensor it produces on the active
:class:`Tape`.  ``Tape.backward`` replays those records in reverse order and
pushes adjoints into the inputs.  Floating point data lives in plain numpy
arrays; float32 is the default scalar type and float64 is available for
verification (see :func:`default_dtype`).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ShapeError

FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))

_default_dtype = np.dtype(np.float32)
_grad_enabled = True
_tape_stack: list["Tape"] = []


def get_default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new tensors."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in FLOAT_TYPES:
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    prev, _default_dtype = _default_dtype, dtype
    try:
        yield
    finally:
        _default_dtype = prev


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class _Node:
    __slots__ = ("op", "parents", "backward", "tape")

    def __init__(self, op, parents, backward, tape):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.tape = tape


class Tape:
    """Ordered record of executed primitive ops.

    Use as a context manager to make it the recording target; outside any
    ``with`` block ops go to a process-wide default tape.  Call :meth:`reset`
    between optimizer steps.
    """

    def __init__(self):
        self.records: list[Tensor] = []

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: "Tensor") -> None:
        out._tape_index = len(self.records)
        self.records.append(out)

    def reset(self) -> None:
        for t in self.records:
            t._node = None
        self.records.clear()

    def ops(self) -> list[str]:
        return [t._node.op for t in self.records if t._node is not None]

    def backward(self, root: "Tensor", grad=None) -> None:
        if root._node is None or root._node.tape is not self:
            raise ValueError("root was not recorded on this tape")
        if grad is None:
            if root.data.size != 1:
                raise ShapeError("backward() without a seed gradient requires a scalar root")
            grad = np.ones_like(root.data)
        pending = {id(root): np.asarray(grad, dtype=root.dtype)}
        for i in range(root._tape_index, -1, -1):
            out = self.records[i]
            g = pending.pop(id(out), None)
            if g is None:
                continue
            out.grad = g
            node = out._node
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape).astype(parent.dtype, copy=False)
                if parent._node is not None and parent._node.tape is self:
                    key = id(parent)
                    pending[key] = pending[key] + pg if key in pending else pg
                elif parent.grad is None:
                    parent.grad = pg.copy()
                else:
                    parent.grad = parent.grad + pg


_default_tape = Tape()


def current_tape() -> Tape:
    return _tape_stack[-1] if _tape_stack else _default_tape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _acc_dtype(dtype):
    # reductions accumulate in float64 regardless of the storage type
    return np.float64 if np.dtype(dtype).kind == "f" else None


def _reduce_sum(x: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    return np.sum(x, axis=axis, dtype=_acc_dtype(x.dtype), keepdims=keepdims).astype(x.dtype, copy=False)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a} and {b}", dim="broadcast") from None


class Tensor:
    """N-dimensional array that can participate in gradient computation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in FLOAT_TYPES else _default_dtype
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[_Node] = None
        self._tape_index = -1

    # -- basic attributes ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        if self._node is None:
            raise ValueError("tensor is not the output of a recorded op")
        self._node.tape.backward(self, grad)

    # -- arithmetic -----------------------------------------------------------
    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other), dtype=self.dtype)

    def __add__(self, other):
        other = self._coerce(other)
        _broadcast_shape(self.shape, other.shape)
        return apply("add", self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        _broadcast_shape(self.shape, other.shape)
        return apply("sub", self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        _broadcast_shape(self.shape, other.shape)
        a, b = self.data, other.data
        return apply("mul", a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        _broadcast_shape(self.shape, other.shape)
        a, b = self.data, other.data
        return apply("div", a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __neg__(self):
        return apply("neg", -self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        p = float(exponent)
        return apply("pow", a ** p, (self,), lambda g: (g * p * a ** (p - 1),))

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))

    def __rmatmul__(self, other):
        return matmul(self._coerce(other), self)

    def __getitem__(self, index):
        if isinstance(index, Tensor):
            index = index.data
        shape, dtype = self.shape, self.dtype

        def backward(g):
            out = np.zeros(shape, dtype=dtype)
            np.add.at(out, index, g)
            return (out,)

        return apply("getitem", self.data[index], (self,), backward)

    # -- shape ops -------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"cannot reshape {src} into {shape}", dim="size") from None
        return apply("reshape", out, (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return apply("transpose", self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    # -- reductions ---------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.shape
        out = _reduce_sum(self.data, axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return apply("sum", out, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        shape = self.shape
        out = (np.sum(self.data, axis=axis, dtype=_acc_dtype(self.dtype), keepdims=keepdims) / count).astype(self.dtype)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / count, shape),)

        return apply("mean", out, (self,), backward)

    def max(self, axis: int, keepdims=False):
        """Maximum along one axis; ties send the gradient to the first maximum."""
        a = self.data
        idx = np.expand_dims(np.argmax(a, axis=axis), axis)
        out = np.take_along_axis(a, idx, axis=axis)
        shape, dtype = self.shape, self.dtype

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros(shape, dtype=dtype)
            np.put_along_axis(full, idx, g, axis=axis)
            return (full,)

        return apply("max", out if keepdims else np.squeeze(out, axis), (self,), backward)

    # -- elementwise math ------------------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return apply("exp", out, (self,), lambda g: (g * out,))

    def log(self):
        a = self.data
        return apply("log", np.log(a), (self,), lambda g: (g / a,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return apply("sqrt", out, (self,), lambda g: (g / (2 * out),))


def apply(op: str, data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of primitive ``op`` and record it if needed.

    ``backward(g)`` must return one gradient (or ``None``) per parent, in the
    parent's broadcast shape.
    """
    dtype = parents[0].dtype if parents else _default_dtype
    out = Tensor(np.asarray(data), dtype=dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape = current_tape()
        out._node = _Node(op, tuple(parents), backward, tape)
        tape.record(out)
    return out


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(*shape, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _default_dtype), requires_grad=requires_grad)


def ones(*shape, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _default_dtype), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}", dim="rank")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}", dim="inner")
    x, y = a.data, b.data
    return apply("matmul", x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc), dim=f"axis {axis}") from None
    splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return apply("concat", out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def where_constant(mask: np.ndarray, x: Tensor, value: float) -> Tensor:
    """Replace entries of ``x`` where ``mask`` holds with a constant."""
    out = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)
    return apply("where", out, (x,), lambda g: (np.where(mask, 0, g),))
