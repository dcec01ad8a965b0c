"""Dense tensors with reverse-mode differentiation on an explicit tape.

Values are stored as numpy arrays, float32 by default. A double-precision
"check mode" is supported by building the same graph from float64 tensors;
the finite-difference harness in :mod:`emoanchor.gradcheck` relies on it.

Broadcasting follows numpy semantics (gradients are summed back over the
broadcast axes), which covers the scalar and trailing-dimension cases the
model graph needs.
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphError, ShapeError

EPS = 1e-8

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """A dense array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32, name: str = ""):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values that blocks gradient flow."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # Operator sugar; the functional forms below are the primary API.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed operations.

    Operations append themselves in execution order, which is a topological
    order by construction; :meth:`backward` walks the record once in reverse.
    A tape is single-use: a second backward call raises.
    """

    def __init__(self) -> None:
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._used = False

    def __len__(self) -> int:
        return len(self._ops)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn: Callable) -> None:
        self._ops.append((out, inputs, grad_fn))
        out.tape = self

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad ancestor of ``loss``."""
        if self._used:
            raise GraphError("backward() already ran on this tape; build a new tape")
        if loss.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not self._ops:
            raise GraphError("backward() on an empty tape")
        if loss.tape is not self:
            raise GraphError("loss was not recorded on this tape")
        self._used = True
        loss.grad = np.ones_like(loss.data)
        for out, inputs, grad_fn in reversed(self._ops):
            if out.grad is None:
                continue
            grads = grad_fn(out.grad)
            for inp, g in zip(inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += g


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss."""
    if loss.tape is None:
        raise GraphError("loss is not attached to a tape (was it recorded?)")
    loss.tape.backward(loss)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False, dtype=dtype)


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    """Wrap an op result, recording it if a tape is active and grads are needed."""
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None and requires:
        tape.record(out, inputs, grad_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_same_dtype(*ts: Tensor) -> None:
    dtypes = {t.data.dtype for t in ts}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed dtypes in one op: {sorted(str(d) for d in dtypes)}")


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * np.asarray(s, dtype=a.data.dtype), (a,), lambda g: (g * s,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def grad_fn(g):
        return (g / a.data,)

    return _make(out, (a,), grad_fn)


def clip_min(a: Tensor, lo: float) -> Tensor:
    """Elementwise max(a, lo); gradient is zero where the clamp is active."""
    out = np.maximum(a.data, np.asarray(lo, dtype=a.data.dtype))
    mask = (a.data > lo).astype(a.data.dtype)

    def grad_fn(g):
        return (g * mask,)

    return _make(out, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), grad_fn)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def grad_fn(g):
        return (g * sig * (1.0 + a.data * (1.0 - sig)),)

    return _make(out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul leading dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), grad_fn)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def grad_fn(g):
        return (np.transpose(g, inv),)

    return _make(out, (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    _check_same_dtype(*tensors)
    if not -tensors[0].data.ndim <= axis < tensors[0].data.ndim:
        raise ShapeError(f"concat axis {axis} invalid for rank {tensors[0].data.ndim}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(out, tuple(tensors), grad_fn)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"narrow axis {axis} invalid for rank {a.data.ndim}")
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{stop}) out of range on axis {axis} of shape {a.shape}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(out, (a,), grad_fn)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) along axis 0."""
    return narrow(a, 0, start, stop)


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(out, (a,), grad_fn)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape).copy(),)

    return _make(out, (a,), grad_fn)


def pick(probs: Tensor, index: np.ndarray) -> Tensor:
    """Per-row entry selection: out[i] = probs[i, index[i]]."""
    index = np.asarray(index, dtype=np.int64)
    if probs.data.ndim != 2:
        raise ShapeError(f"pick expects a 2-D tensor, got shape {probs.shape}")
    if index.shape != (probs.shape[0],):
        raise ShapeError(f"pick index shape {index.shape} != ({probs.shape[0]},)")
    if index.size and (index.min() < 0 or index.max() >= probs.shape[1]):
        raise ShapeError(f"pick index out of range for {probs.shape[1]} columns")
    rows = np.arange(probs.shape[0])
    out = probs.data[rows, index]

    def grad_fn(g):
        full = np.zeros_like(probs.data)
        full[rows, index] = g
        return (full,)

    return _make(out, (probs,), grad_fn)


# ---------------------------------------------------------------------------
# neural-net ops


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (subtracts the axis max)."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for rank {a.data.ndim}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), grad_fn)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` (no affine part)."""
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def grad_fn(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * out).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - out * gym),)

    return _make(out, (a,), grad_fn)


def dropout(a: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: scales survivors at train time, identity at eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype)
    factor = 1.0 / (1.0 - p)
    out = a.data * keep * np.asarray(factor, dtype=a.data.dtype)

    def grad_fn(g):
        return (g * keep * factor,)

    return _make(out, (a,), grad_fn)


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding index out of range: max {int(indices.max())} for table of {table.shape[0]} rows"
        )
    out = table.data[indices]

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        return (full,)

    return _make(out, (table,), grad_fn)


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors; norms clamped below at EPS."""
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape or a.size < 1:
        raise ShapeError(f"cosine_sim expects equal-length vectors, got {a.shape} and {b.shape}")
    na = max(float(np.linalg.norm(a.data)), EPS)
    nb = max(float(np.linalg.norm(b.data)), EPS)
    if np.linalg.norm(a.data) == 0.0 or np.linalg.norm(b.data) == 0.0:
        warnings.warn("cosine_sim of a zero-norm vector; returning 0", RuntimeWarning)
    dot = float(a.data @ b.data)
    out = np.asarray(dot / (na * nb), dtype=a.data.dtype)

    def grad_fn(g):
        s = dot / (na * nb)
        ga = g * (b.data / (na * nb) - s * a.data / (na * na))
        gb = g * (a.data / (na * nb) - s * b.data / (nb * nb))
        return ga.astype(a.data.dtype), gb.astype(b.data.dtype)

    return _make(out, (a, b), grad_fn)


def cosine_rows(x: Tensor, anchors: Tensor) -> Tensor:
    """Cosine similarity of each row of ``x`` against each row of ``anchors``.

    Returns shape (rows, anchors); row norms are clamped below at EPS, so a
    zero row scores 0 against everything.
    """
    if x.data.ndim != 2 or anchors.data.ndim != 2 or x.shape[1] != anchors.shape[1]:
        raise ShapeError(f"cosine_rows dimension mismatch: {x.shape} vs {anchors.shape}")
    nx = np.maximum(np.linalg.norm(x.data, axis=1), EPS)
    na = np.maximum(np.linalg.norm(anchors.data, axis=1), EPS)
    if (np.linalg.norm(x.data, axis=1) == 0.0).any():
        warnings.warn("cosine_rows saw a zero-norm row; its scores are 0", RuntimeWarning)
    dots = x.data @ anchors.data.T
    out = dots / (nx[:, None] * na[None, :])

    def grad_fn(g):
        gs = g / (nx[:, None] * na[None, :])
        row_mix = (g * out).sum(axis=1)
        col_mix = (g * out).sum(axis=0)
        gx = gs @ anchors.data - (row_mix / (nx * nx))[:, None] * x.data
        ga = gs.T @ x.data - (col_mix / (na * na))[:, None] * anchors.data
        return gx.astype(x.data.dtype), ga.astype(anchors.data.dtype)

    return _make(out, (x, anchors), grad_fn)


def kl_div(p: Tensor, q: Tensor) -> Tensor:
    """Sum of p * log(p / q) with 0*log(0/q) = 0; q clamped below at EPS.

    Rows of both tensors must lie on the probability simplex (within 1e-5).
    """
    if p.shape != q.shape:
        raise ShapeError(f"kl_div shape mismatch: {p.shape} vs {q.shape}")
    for name, t in (("p", p), ("q", q)):
        sums = t.data.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=1e-5):
            raise ValueError(f"kl_div argument {name} rows do not sum to 1 (max dev {np.abs(sums - 1).max():.2e})")
        if t.data.min() < -1e-7 or t.data.max() > 1.0 + 1e-7:
            raise ValueError(f"kl_div argument {name} has entries outside [0, 1]")
    pc = np.maximum(p.data, EPS)
    qc = np.maximum(q.data, EPS)
    support = p.data > 0.0
    terms = np.where(support, p.data * (np.log(pc) - np.log(qc)), 0.0)
    out = np.asarray(terms.sum(), dtype=p.data.dtype)

    def grad_fn(g):
        gp = np.where(support, np.log(pc) - np.log(qc) + 1.0, 0.0) * g
        gq = np.where(support & (q.data > EPS), -p.data / qc, 0.0) * g
        return gp.astype(p.data.dtype), gq.astype(q.data.dtype)

    return _make(out, (p, q), grad_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b); the affine building block used throughout the model."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
