"""Dense tensors with reverse-mode autodiff.

Storage is a row-major numpy array. Every primitive records a closure that
maps the output gradient to one gradient per input; :func:`backward` walks
the recorded graph once in reverse topological order. Gradients are only
stored on leaves, so calling ``backward`` twice accumulates into leaf
``grad`` without double counting intermediates.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError, TargetIndexError

_DEFAULT_DTYPE = np.float32


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for new tensors (f64 for gradient checks)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ContractError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(np.array(data, dtype=dtype or _DEFAULT_DTYPE, order="C"), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"

    def assign(self, values: np.ndarray) -> None:
        values = np.asarray(values)
        if values.shape != self.data.shape:
            raise DimensionError(
                f"cannot assign shape {values.shape} to parameter {self.name!r} of shape {self.data.shape}"
            )
        self.data[...] = values


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        return (g * c,)

    return _node(a.data * a.data.dtype.type(c), (a,), bw, "scale")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _node(np.where(mask, a.data, 0).astype(a.dtype), (a,), bw, "relu")


def add_n(tensors: Sequence) -> Tensor:
    """Elementwise sum of same-shape tensors, independent of their order.

    Values are sorted per element before a left-to-right accumulation, so
    any permutation of the inputs yields bit-identical output.
    """
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("add_n needs at least one tensor")
    shape = ts[0].shape
    if any(t.shape != shape for t in ts):
        raise DimensionError(f"add_n: shapes differ {[t.shape for t in ts]}")
    ordered = np.sort(np.stack([t.data for t in ts]), axis=0)
    acc = ordered[0].copy()
    for row in ordered[1:]:
        acc += row

    def bw(g):
        return tuple(g for _ in ts)

    return _node(acc, ts, bw, "add_n")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} disagree") from None

    if b.ndim == 2:
        # weight-style product: fold the leading axes of ``a`` into rows
        a2 = a.data.reshape(-1, a.shape[-1])

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _node((a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],)), (a, b), bw, "matmul")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a) -> Tensor:
    """Swap the trailing two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 dims, got {a.shape}")

    def bw(g):
        return (np.swapaxes(g, -1, -2),)

    return _node(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)), (a,), bw, "transpose")


def permute(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _node(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), bw, "permute")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), bw, "reshape")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, ts, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack of an empty list")
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _node(out, ts, bw, "stack")


def gather_rows(a, index) -> Tensor:
    """Select ``a[index]`` along axis 0; repeated indices accumulate on backward."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise TargetIndexError(f"gather_rows: index out of range for {a.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), bw, "gather_rows")


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise DimensionError(f"mean over an empty axis of {a.shape}")
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- normalisation


def softmax(a) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise DimensionError(f"softmax needs a nonempty last dimension, got {a.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), bw, "softmax")


softmax_lastdim = softmax


def l2_normalize(a, eps: float = 1e-12) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise DimensionError(f"l2_normalize needs a nonempty last dimension, got {a.shape}")
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = a.data / denom

    def bw(g):
        # below eps the map is linear (x / eps)
        proj = np.where(norm > eps, (g * y).sum(axis=-1, keepdims=True) * y, 0)
        return ((g - proj) / denom,)

    return _node(y, (a,), bw, "l2_normalize")


def cross_entropy(logits, target) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[target]``."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects B x C logits, got {logits.shape}")
    b, c = logits.shape
    tgt = np.asarray(target, dtype=np.int64).reshape(-1)
    if tgt.shape[0] != b:
        raise DimensionError(f"cross_entropy: {tgt.shape[0]} targets for {b} rows")
    if b == 0 or c == 0:
        raise DimensionError(f"cross_entropy on empty logits {logits.shape}")
    if tgt.min() < 0 or tgt.max() >= c:
        raise TargetIndexError(f"cross_entropy: target index out of range [0, {c})")
    x = logits.data
    mx = x.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(x - mx).sum(axis=1))
    rows = np.arange(b)
    loss = (lse - x[rows, tgt]).mean()

    def bw(g):
        p = np.exp(x - lse[:, None])
        p[rows, tgt] -= 1.0
        return (p * (g / b),)

    return _node(np.asarray(loss, dtype=x.dtype), (logits,), bw, "cross_entropy")


cross_entropy_from_logits = cross_entropy


# ---------------------------------------------------------------- autodiff driver


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if not isinstance(loss, Tensor) or loss.data.size != 1 or loss.ndim != 0:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"backward needs a scalar loss, got {shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def sgd_step(params: Iterable[Parameter], lr: float, weight_decay: float = 0.0) -> None:
    """``p <- p - lr * (grad + weight_decay * p)``, then zero the grads."""
    if not lr > 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    if weight_decay < 0:
        raise ContractError(f"weight decay must be nonnegative, got {weight_decay}")
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {getattr(p, 'name', p)!r} has no gradient")
    for p in params:
        step = p.grad + weight_decay * p.data if weight_decay else p.grad
        p.data -= (lr * step).astype(p.dtype)
        _check_finite(p.data, f"sgd_step({getattr(p, 'name', '?')})")
        p.grad = None
