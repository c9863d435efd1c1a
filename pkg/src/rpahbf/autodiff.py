"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the upstream gradient to one gradient per parent.  Graph
recording is skipped entirely inside :func:`no_grad`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GraphError",
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "concat",
    "stack",
    "softmax",
    "layer_norm",
    "inv",
    "gelu",
    "affine",
    "LN_VAR_FLOOR",
]

LN_VAR_FLOOR = 1e-12

_grad_enabled = True


class GraphError(ValueError):
    """Invalid graph construction or backward call."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Create an op output; ``backward(g)`` returns one gradient per parent."""
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- backward ---------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        order, seen = [], set()
        stack = [(self, False)]
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
        for node in order:
            if node._parents:
                node.grad = np.zeros_like(node.data)
            elif node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if g is not None and p.requires_grad:
                    p.grad = p.grad + g

    # -- elementwise arithmetic ------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        try:
            data = a.data + b.data
        except ValueError as exc:
            raise GraphError(f"add: shapes {a.shape} and {b.shape}") from exc
        return Tensor.from_op(data, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                                       _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        try:
            data = a.data - b.data
        except ValueError as exc:
            raise GraphError(f"sub: shapes {a.shape} and {b.shape}") from exc
        return Tensor.from_op(data, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                                       _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        try:
            data = a.data * b.data
        except ValueError as exc:
            raise GraphError(f"mul: shapes {a.shape} and {b.shape}") from exc
        return Tensor.from_op(data, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                                       _unbroadcast(g * a.data, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        try:
            data = a.data / b.data
        except ValueError as exc:
            raise GraphError(f"div: shapes {a.shape} and {b.shape}") from exc

        def backward(g):
            return (_unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * data / b.data, b.shape))
        return Tensor.from_op(data, (a, b), backward)

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p: float):
        if isinstance(p, Tensor):
            raise GraphError("tensor exponents are not supported")
        a = self
        data = a.data ** p
        return Tensor.from_op(data, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise GraphError("matmul operands need at least 2 dimensions")
        try:
            data = a.data @ b.data
        except ValueError as exc:
            raise GraphError(f"matmul: shapes {a.shape} and {b.shape}") from exc

        def backward(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        return Tensor.from_op(data, (a, b), backward)

    def __rmatmul__(self, other):
        return _as_tensor(other) @ self

    # -- unary functions --------------------------------------------------
    def exp(self):
        data = np.exp(self.data)
        return Tensor.from_op(data, (self,), lambda g: (g * data,))

    def log(self):
        a = self
        return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))

    def sqrt(self):
        data = np.sqrt(self.data)
        return Tensor.from_op(data, (self,), lambda g: (g * 0.5 / data,))

    def tanh(self):
        data = np.tanh(self.data)
        return Tensor.from_op(data, (self,), lambda g: (g * (1.0 - data ** 2),))

    def sin(self):
        a = self
        return Tensor.from_op(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))

    def cos(self):
        a = self
        return Tensor.from_op(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))

    # -- reductions and shape ops ----------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)
        return Tensor.from_op(data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            data = a.data.reshape(shape)
        except ValueError as exc:
            raise GraphError(f"reshape: cannot view {a.shape} as {shape}") from exc
        return Tensor.from_op(data, (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        return Tensor.from_op(self.data.transpose(axes), (self,),
                              lambda g: (g.transpose(inverse),))

    def swapaxes(self, a1: int, a2: int):
        return Tensor.from_op(np.swapaxes(self.data, a1, a2), (self,),
                              lambda g: (np.swapaxes(g, a1, a2),))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __getitem__(self, idx):
        a = self
        data = a.data[idx]

        def backward(g):
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            return (out,)
        return Tensor.from_op(np.array(data), (a,), backward)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise GraphError(f"concat: shapes {[t.shape for t in tensors]}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return Tensor.from_op(data, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise GraphError(f"stack: shapes {[t.shape for t in tensors]}") from exc

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))
    return Tensor.from_op(data, tensors, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return Tensor.from_op(s, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None) -> Tensor:
    """Normalize over the last axis; variance is floored at ``LN_VAR_FLOOR``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    floored = var < LN_VAR_FLOOR
    rstd = 1.0 / np.sqrt(np.maximum(var, LN_VAR_FLOOR))
    xhat = xc * rstd

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = g - gm - np.where(floored, 0.0, xhat * (g * xhat).mean(axis=-1, keepdims=True))
        return (rstd * gx,)
    out = Tensor.from_op(xhat, (x,), backward)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def inv(a: Tensor) -> Tensor:
    """Batched matrix inverse over the last two axes."""
    try:
        y = np.linalg.inv(a.data)
    except np.linalg.LinAlgError as exc:
        raise GraphError("inv: singular matrix") from exc
    yt = np.swapaxes(y, -1, -2)
    return Tensor.from_op(y, (a,), lambda g: (-(yt @ g @ yt),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    v = x.data
    v2 = v * v     # explicit products; float ** is far slower
    t = np.tanh(_GELU_C * v * (1.0 + 0.044715 * v2))
    data = 0.5 * v * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * du),)
    return Tensor.from_op(data, (x,), backward)


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` for a 2-D ``W``, flattened to a single GEMM."""
    x, W = _as_tensor(x), _as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise GraphError(f"affine: shapes {x.shape} and {W.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, W.shape[0])
    out = x2 @ W.data
    if b is not None:
        b = _as_tensor(b)
        out = out + b.data
    data = out.reshape(lead + (W.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        grads = ((g2 @ W.data.T).reshape(x.shape), x2.T @ g2)
        return grads + ((g2.sum(axis=0),) if b is not None else ())
    parents = (x, W) if b is None else (x, W, b)
    return Tensor.from_op(data, parents, backward)
