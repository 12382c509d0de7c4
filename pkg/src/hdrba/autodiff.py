"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray``. Every differentiable operator is a
:class:`Function` subclass with a ``forward`` on raw arrays and a ``backward``
returning one vector-Jacobian product per input. Subclasses that set ``name``
are collected in :data:`REGISTRY` so the verification suite can enumerate them.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Any, Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Function",
    "REGISTRY",
    "MissingGradientError",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "precision",
    "set_precision",
    "get_dtype",
    "tensor",
    "as_tensor",
]

REGISTRY: dict[str, type["Function"]] = {}

_state = threading.local()
_DTYPE = {"float64": np.float64, "float32": np.float32}
_default_dtype = np.float64


class MissingGradientError(RuntimeError):
    """Raised when backward cannot reach a tensor that expects a gradient."""


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def set_precision(name: str) -> None:
    global _default_dtype
    if name not in _DTYPE:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPE)}")
    _default_dtype = _DTYPE[name]


def get_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype new tensors are created with."""
    global _default_dtype
    prev = _default_dtype
    set_precision(name)
    try:
        yield
    finally:
        _default_dtype = prev


class Tensor:
    """N-dimensional float array with an optional gradient slot."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data: Any, requires_grad: bool = False, _fn: "Function | None" = None):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._fn = _fn

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._fn is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return Add.apply(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent: float):
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def log1p(self) -> "Tensor":
        return Log1p.apply(self)

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def sigmoid(self) -> "Tensor":
        return Sigmoid.apply(self)

    def clamp_min(self, value: float) -> "Tensor":
        return ClampMin.apply(self, value=float(value))


def tensor(data: Any, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """Base class for a recorded operation.

    ``forward`` receives the raw arrays of the tensor inputs plus keyword
    arguments and may stash whatever the backward rule needs on ``self``.
    ``backward`` receives dL/d(output) and returns a sequence with one entry
    per tensor input (``None`` where no gradient is defined).
    """

    name: str | None = None
    inputs: tuple[Tensor, ...] = ()

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.name is not None:
            if cls.name in REGISTRY:
                raise ValueError(f"duplicate op name {cls.name!r}")
            REGISTRY[cls.name] = cls

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Any, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls()
        fn.needs_grad = tuple(t.requires_grad for t in tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        if is_grad_enabled() and any(fn.needs_grad):
            fn.inputs = tensors
            return Tensor(out, requires_grad=True, _fn=fn)
        return Tensor(out)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative post-order DFS; parents visited in argument order so the
    # ordering is a pure function of the graph
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._fn is not None:
            for parent in reversed(node._fn.inputs):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(root: Tensor, grad: np.ndarray | None = None, inputs: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    ``root`` must be a scalar unless an explicit upstream ``grad`` is given.
    When ``inputs`` is supplied, every listed tensor must be reachable from
    ``root``; otherwise :class:`MissingGradientError` names the offenders.
    """
    if grad is None:
        if root.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        grad = np.ones_like(root.data)
    else:
        grad = np.asarray(grad, dtype=root.dtype)
        if grad.shape != root.shape:
            raise ValueError(f"upstream grad shape {grad.shape} != root shape {root.shape}")
    if not root.requires_grad:
        raise MissingGradientError("root is detached from the tape (no input requires grad)")

    order = _toposort(root)
    if inputs is not None:
        reached = {id(t) for t in order}
        missing = [i for i, t in enumerate(inputs) if id(t) not in reached]
        if missing:
            raise MissingGradientError(f"no gradient path from root to inputs at positions {missing}")

    grads: dict[int, np.ndarray] = {id(root): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        fn = node._fn
        for parent, needs, pg in zip(fn.inputs, fn.needs_grad, fn.backward(g)):
            if not needs or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# elementwise and broadcasting ops
# ---------------------------------------------------------------------------


class Add(Function):
    name = "add"

    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, g):
        return unbroadcast(g, self.shapes[0]), unbroadcast(g, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, g):
        return unbroadcast(g, self.shapes[0]), unbroadcast(-g, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        ga = unbroadcast(g * self.b, self.a.shape) if self.needs_grad[0] else None
        gb = unbroadcast(g * self.a, self.b.shape) if self.needs_grad[1] else None
        return ga, gb


class Div(Function):
    name = "div"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = unbroadcast(g / self.b, self.a.shape) if self.needs_grad[0] else None
        gb = unbroadcast(-g * self.a / (self.b * self.b), self.b.shape) if self.needs_grad[1] else None
        return ga, gb


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Pow(Function):
    name = "pow"

    def forward(self, a, exponent: float):
        self.a, self.p = a, exponent
        return a**exponent

    def backward(self, g):
        return (g * self.p * self.a ** (self.p - 1.0),)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    name = "log"

    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


class Log1p(Function):
    name = "log1p"

    def forward(self, a):
        self.a = a
        return np.log1p(a)

    def backward(self, g):
        return (g / (1.0 + self.a),)


class Abs(Function):
    name = "abs"

    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, g):
        return (g * self.sign,)


class Relu(Function):
    name = "relu"

    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0).astype(a.dtype, copy=False)

    def backward(self, g):
        return (g * self.mask,)


class ClampMin(Function):
    """max(a, value); subgradient 0 at and below the clamp point."""

    name = "clamp_min"

    def forward(self, a, value: float):
        self.mask = a > value
        return np.where(self.mask, a, value).astype(a.dtype, copy=False)

    def backward(self, g):
        return (g * self.mask,)


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.out = _stable_sigmoid(a)
        return self.out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


class Softmax(Function):
    name = "softmax"

    def forward(self, a, axis: int = -1):
        self.axis = axis
        e = np.exp(a - a.max(axis=axis, keepdims=True))
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, g):
        s = self.out
        return (s * (g - (g * s).sum(axis=self.axis, keepdims=True)),)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


class Sum(Function):
    name = "sum"

    def forward(self, a, axis=None, keepdims=False):
        self.shape = a.shape
        self.axes = _norm_axis(axis, a.ndim)
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=self.axes, keepdims=keepdims))

    def backward(self, g):
        if not self.keepdims:
            g = np.expand_dims(g, self.axes)
        return (np.broadcast_to(g, self.shape).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, a, axis=None, keepdims=False):
        self.shape = a.shape
        self.axes = _norm_axis(axis, a.ndim)
        self.keepdims = keepdims
        self.count = int(np.prod([a.shape[i] for i in self.axes]))
        return np.asarray(a.mean(axis=self.axes, keepdims=keepdims))

    def backward(self, g):
        if not self.keepdims:
            g = np.expand_dims(g, self.axes)
        return (np.broadcast_to(g / self.count, self.shape).copy(),)


class L2Norm(Function):
    """Euclidean norm along ``axis``; subgradient 0 for an all-zero vector."""

    name = "l2norm"

    def forward(self, a, axis=-1, keepdims=True):
        self.a = a
        self.axis = axis
        self.keepdims = keepdims
        self.out = np.sqrt((a * a).sum(axis=axis, keepdims=True))
        return self.out if keepdims else np.squeeze(self.out, axis=axis)

    def backward(self, g):
        if not self.keepdims:
            g = np.expand_dims(g, self.axis)
        safe = np.where(self.out > 0, self.out, 1.0)
        return (np.where(self.out > 0, g * self.a / safe, 0.0),)


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a, axes=None):
        self.axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, g):
        return (np.transpose(g, np.argsort(self.axes)),)


class GetItem(Function):
    name = "getitem"

    def forward(self, a, index):
        self.shape, self.index = a.shape, index
        return np.array(a[index])

    def backward(self, g):
        out = np.zeros(self.shape, dtype=g.dtype)
        np.add.at(out, self.index, g)
        return (out,)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=self.axis))


class MatMul(Function):
    """Batched matrix product with numpy broadcasting over leading axes."""

    name = "matmul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        ga = gb = None
        if self.needs_grad[0]:
            ga = unbroadcast(g @ np.swapaxes(self.b, -1, -2), self.a.shape)
        if self.needs_grad[1]:
            gb = unbroadcast(np.swapaxes(self.a, -1, -2) @ g, self.b.shape)
        return ga, gb


# ---------------------------------------------------------------------------
# functional aliases
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def softmax(x: Any, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def l2norm(x: Any, axis: int = -1, keepdims: bool = True) -> Tensor:
    return L2Norm.apply(x, axis=axis, keepdims=keepdims)


def relu(x: Any) -> Tensor:
    return Relu.apply(x)


def sigmoid(x: Any) -> Tensor:
    return Sigmoid.apply(x)


def log1p(x: Any) -> Tensor:
    return Log1p.apply(x)


def clamp_min(x: Any, value: float) -> Tensor:
    return ClampMin.apply(x, value=float(value))


def value_and_grad(fn: Callable[..., Tensor], *args: Tensor) -> tuple[float, list[np.ndarray | None]]:
    """Evaluate scalar ``fn(*args)`` and return its value with input gradients."""
    for a in args:
        a.grad = None
    out = fn(*args)
    backward(out)
    return out.item(), [a.grad for a in args]
