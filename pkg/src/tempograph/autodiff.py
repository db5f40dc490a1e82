"""Tape-based reverse-mode differentiation over dense float64 arrays.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient. Outside a tape every op is a plain numpy
forward pass, which is what evaluation uses.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when an op receives incompatible operand shapes."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; records are appended in forward order and
    :func:`backward` walks them in exact reverse.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self.records)


_TAPES: list[Tape] = []


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        _TAPES[-1].records.append((out, tuple(inputs), backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(out, (a, b), backward)


# ------------------------------------------------------------- elementwise

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _emit(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _emit(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def exp_neg_scaled(a, beta: float) -> Tensor:
    """``exp(-beta * a)``; the decay factor of the trajectory encoder."""
    a = as_tensor(a)
    beta = float(beta)
    out = np.exp(-beta * a.data)
    return _emit(out, (a,), lambda g: (-beta * g * out,))


def log_sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        # d/dx log(sigmoid(x)) = sigmoid(-x)
        e = np.exp(-np.abs(x))
        sig_neg = np.where(x >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
        return (g * sig_neg,)

    return _emit(out, (a,), backward)


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    Entries where ``mask`` is False get zero weight. Rows with no unmasked
    entry come out as all zeros.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    peak = np.max(x, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.exp(x - peak)
    denom = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _emit(out, (a,), backward)


def clamp_norm(a, max_norm: float) -> Tensor:
    """Rescale rows (last axis) whose L2 norm exceeds ``max_norm``."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    over = norm > max_norm
    factor = np.where(over, max_norm / np.where(over, norm, 1.0), 1.0)
    out = a.data * factor

    def backward(g):
        # for clamped rows y = c x/|x|, dy^T g = c/|x| (g - x (x.g)/|x|^2)
        safe = np.where(over, norm, 1.0)
        proj = (a.data * g).sum(axis=-1, keepdims=True) / (safe * safe)
        clamped = factor * (g - a.data * proj)
        return (np.where(over, clamped, g),)

    return _emit(out, (a,), backward)


# ------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------- shape movement

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _emit(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(out, tuple(tensors), backward)


def index_select(a, index) -> Tensor:
    """``a[index]`` for basic or integer-array indexing."""
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} (shape {a.shape})") from None

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit(np.array(out, dtype=np.float64), (a,), backward)


def take_rows(a, rows: np.ndarray) -> Tensor:
    """Gather along axis 0; repeated rows accumulate gradient."""
    return index_select(a, np.asarray(rows, dtype=np.int64))


def scatter_add_rows(a, rows: np.ndarray, n_rows: int) -> Tensor:
    """Sum rows of ``a`` into an ``n_rows``-row output at positions ``rows``.

    Contributions are accumulated in input order, so the result does not
    depend on anything but the order of ``rows``.
    """
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) != a.shape[0]:
        raise ShapeError(f"scatter_add_rows: {len(rows)} indices for shape {a.shape}")
    out = np.zeros((n_rows,) + a.shape[1:])
    np.add.at(out, rows, a.data)
    return _emit(out, (a,), lambda g: (g[rows],))


def overlay_rows(base: np.ndarray, rows: np.ndarray, values) -> Tensor:
    """Constant ``base`` with ``base[rows]`` replaced by ``values``.

    ``rows`` must be unique; only ``values`` receives gradient.
    """
    values = as_tensor(values)
    rows = np.asarray(rows, dtype=np.int64)
    if values.shape[0] != len(rows) or values.shape[1:] != base.shape[1:]:
        raise ShapeError(f"overlay_rows: values {values.shape} for base {base.shape}")
    out = np.array(base, dtype=np.float64, copy=True)
    out[rows] = values.data
    return _emit(out, (values,), lambda g: (g[rows],))


# ------------------------------------------------------------- gradients

def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Leaves are tensors created with ``requires_grad=True``; their ``grad``
    arrays are added to, never overwritten, so callers zero them first.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi
            else:
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi


def numeric_gradient(fn: Callable[[], Tensor], leaf: Tensor, coords, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn()`` wrt ``leaf`` at flat ``coords``."""
    flat = leaf.data.reshape(-1)
    out = np.empty(len(coords))
    for n, c in enumerate(coords):
        keep = flat[c]
        flat[c] = keep + eps
        up = float(fn().data)
        flat[c] = keep - eps
        down = float(fn().data)
        flat[c] = keep
        out[n] = (up - down) / (2 * eps)
    return out


def gradient_check(fn: Callable[[], Tensor], leaves: Sequence[Tensor], eps: float = 1e-6,
                   max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest relative disagreement between tape and finite-difference gradients.

    For each leaf the error is ``max|analytic - numeric|`` divided by the
    larger of the two gradients' max magnitudes (floored at 1e-12), which
    keeps near-zero coordinates from dominating. ``max_coords`` samples that
    many coordinates per leaf instead of checking all of them.
    """
    for leaf in leaves:
        leaf.grad = np.zeros_like(leaf.data)
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    worst = 0.0
    for leaf in leaves:
        size = leaf.data.size
        if max_coords is not None and size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(size, max_coords, replace=False))
        else:
            coords = np.arange(size)
        analytic = leaf.grad.reshape(-1)[coords]
        numeric = numeric_gradient(fn, leaf, coords, eps)
        denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(analytic - numeric).max(initial=0.0) / denom))
    return worst
