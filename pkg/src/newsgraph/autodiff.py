"""Dense rank-2 tensors with reverse-mode automatic differentiation.

All values are float64. Operations executed while a :class:`Tape` is active
are recorded in execution order; since every operand must exist before the
op that consumes it, the record is topologically ordered and a single
reverse sweep propagates gradients with each entry visited exactly once.

Forward passes run fine with no tape active (inference mode, nothing is
recorded). Tensors and tapes are single-writer: one training step is
sequential, parallel runs must use disjoint parameter/tape copies.

Matrix products come in two flavours: ``matmul`` uses BLAS, while
``matmul(..., row_stable=True)`` routes through a kernel whose output row i
depends only on input row i. The encoder uses the stable variant for
per-node-set projections so that adding a node to a set cannot perturb the
other nodes' values (BLAS blocking does not guarantee that).
"""
from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf

from . import kernels

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    """A rows x cols float64 matrix, optionally participating in autodiff."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are rank-2, got array of rank {arr.ndim}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __getstate__(self):
        return (self.data, self.grad, self.requires_grad)

    def __setstate__(self, state):
        self.data, self.grad, self.requires_grad = state


def param(data) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True)


_tls = threading.local()


def _stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def _active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Execution-ordered record of ops for one reverse pass.

    Use as a context manager around a forward computation, then call
    :meth:`backward` on the scalar loss the computation produced.
    """

    def __init__(self):
        self.entries = []  # (out, inputs, backward_fn)

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor, params=()) -> None:
        """Propagate d(loss)/d(tensor) to every tensor reachable from loss.

        ``loss`` must be a 1x1 tensor produced on this tape. Gradients are
        stored in ``.grad``; every tensor in ``params`` is guaranteed a
        gradient afterwards (exact zeros if the loss does not depend on it).
        """
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
        produced = False
        for out, inputs, _ in self.entries:
            out.grad = None
            for t in inputs:
                t.grad = None
            if out is loss:
                produced = True
        if not produced:
            raise ValueError("loss was not produced on this tape")
        for p in params:
            p.grad = None
        loss.grad = np.ones((1, 1))
        for out, _, backward_fn in reversed(self.entries):
            if out.grad is not None:
                backward_fn(out.grad)
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.entries.append((out, inputs, backward_fn))
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: g may alias the output grad or another operand's accumulator
        t.grad = g.copy()
    else:
        t.grad += g


def _result(data, *inputs) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor, row_stable: bool = False) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    if row_stable:
        out = _result(kernels.mm_stable(a.data, b.data), a, b)
    else:
        out = _result(a.data @ b.data, a, b)

    def backward(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _record(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    out = _result(a.data + b.data, a, b)

    def backward(g):
        _acc(a, g)
        _acc(b, g)

    return _record(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes differ, {a.shape} vs {b.shape}")
    out = _result(a.data - b.data, a, b)

    def backward(g):
        _acc(a, g)
        _acc(b, -g)

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    out = _result(a.data * b.data, a, b)

    def backward(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _record(out, (a, b), backward)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a 1 x c row vector to every row of x (bias broadcast)."""
    if v.rows != 1 or v.cols != x.cols:
        raise ShapeError(f"add_rowvec: {x.shape} + {v.shape}")
    out = _result(x.data + v.data, x, v)

    def backward(g):
        _acc(x, g)
        _acc(v, g.sum(axis=0, keepdims=True))

    return _record(out, (x, v), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _result(x.data * c, x)

    def backward(g):
        _acc(x, g * c)

    return _record(out, (x,), backward)


def scale_by(x: Tensor, s: Tensor, factor: float = 1.0) -> Tensor:
    """Multiply x elementwise by the scalar tensor s times a constant."""
    if s.shape != (1, 1):
        raise ShapeError(f"scale_by needs a 1x1 scalar, got {s.shape}")
    c = s.data[0, 0] * factor
    out = _result(x.data * c, x, s)

    def backward(g):
        _acc(x, g * c)
        _acc(s, np.array([[np.sum(g * x.data) * factor]]))

    return _record(out, (x, s), backward)


def sum_all(x: Tensor) -> Tensor:
    out = _result(np.array([[x.data.sum()]]), x)

    def backward(g):
        _acc(x, np.full_like(x.data, g[0, 0]))

    return _record(out, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    if x.data.size == 0:
        raise ShapeError("mean_all of an empty tensor")
    n = x.data.size
    out = _result(np.array([[x.data.sum() / n]]), x)

    def backward(g):
        _acc(x, np.full_like(x.data, g[0, 0] / n))

    return _record(out, (x,), backward)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean over rows: (n, c) -> (1, c)."""
    if x.rows == 0:
        raise ShapeError("mean_rows of a tensor with no rows")
    n = x.rows
    out = _result(x.data.mean(axis=0, keepdims=True), x)

    def backward(g):
        _acc(x, np.tile(g / n, (n, 1)))

    return _record(out, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    out = _result(0.5 * xd * (1.0 + erf(xd * _INV_SQRT2)), x)

    def backward(g):
        phi = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
        dens = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        _acc(x, g * (phi + xd * dens))

    return _record(out, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, max-subtracted for stability; each row sums to 1."""
    if x.rows == 0 or x.cols == 0:
        raise ShapeError(f"softmax_rows of an empty tensor {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=1, keepdims=True)
    out = _result(w, x)

    def backward(g):
        _acc(x, w * (g - (w * g).sum(axis=1, keepdims=True)))

    return _record(out, (x,), backward)


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows of nothing")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise ShapeError(f"concat_rows: column counts differ, {[p.shape for p in parts]}")
    out = _result(np.concatenate([p.data for p in parts], axis=0), *parts)
    offsets = np.cumsum([0] + [p.rows for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _acc(p, g[lo:hi])

    return _record(out, tuple(parts), backward)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols of nothing")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row counts differ, {[p.shape for p in parts]}")
    out = _result(np.concatenate([p.data for p in parts], axis=1), *parts)
    offsets = np.cumsum([0] + [p.cols for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _acc(p, g[:, lo:hi])

    return _record(out, tuple(parts), backward)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of x by index (rows may repeat)."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = _result(kernels.gather_rows(x.data, idx), x)

    def backward(g):
        _acc(x, kernels.scatter_add_rows(np.ascontiguousarray(g), idx, x.rows))

    return _record(out, (x,), backward)


def scatter_sum_rows(x: Tensor, idx: np.ndarray, n_rows: int) -> Tensor:
    """Sum row i of x into output row idx[i]; rows never hit stay zero."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = _result(kernels.scatter_add_rows(x.data, idx, n_rows), x)

    def backward(g):
        _acc(x, kernels.gather_rows(np.ascontiguousarray(g), idx))

    return _record(out, (x,), backward)


def segment_softmax(scores: Tensor, seg: np.ndarray, n_seg: int) -> Tensor:
    """Column-wise softmax within each segment of rows.

    ``seg[i]`` names the segment of row i; within one segment and column the
    outputs are positive and sum to 1. Used to normalize attention over all
    edges that share a target node.
    """
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    w = kernels.segment_softmax(scores.data, seg, n_seg)
    out = _result(w, scores)

    def backward(g):
        _acc(scores, kernels.segment_softmax_grad(w, np.ascontiguousarray(g), seg, n_seg))

    return _record(out, (scores,), backward)


def repeat_cols(x: Tensor, k: int) -> Tensor:
    """Repeat each column k times consecutively: (r, c) -> (r, c*k)."""
    out = _result(np.repeat(x.data, k, axis=1), x)

    def backward(g):
        _acc(x, g.reshape(x.rows, x.cols, k).sum(axis=2))

    return _record(out, (x,), backward)


def sum_col_blocks(x: Tensor, k: int) -> Tensor:
    """Sum consecutive blocks of k columns: (r, c) -> (r, c // k)."""
    if x.cols % k != 0:
        raise ShapeError(f"sum_col_blocks: {x.cols} columns not divisible by {k}")
    nb = x.cols // k
    out = _result(x.data.reshape(x.rows, nb, k).sum(axis=2), x)

    def backward(g):
        _acc(x, np.repeat(g, k, axis=1))

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# losses (targets are plain arrays, not differentiated)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs target {target.shape}")
    if pred.data.size == 0:
        raise ShapeError("mse_loss of empty tensors")
    diff = pred.data - target
    n = diff.size
    out = _result(np.array([[np.mean(diff * diff)]]), pred)

    def backward(g):
        _acc(pred, (2.0 / n) * diff * g[0, 0])

    return _record(out, (pred,), backward)


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 labels."""
    y = np.asarray(labels, dtype=np.float64)
    if logits.shape != y.shape:
        raise ShapeError(f"bce_with_logits: {logits.shape} vs labels {y.shape}")
    if logits.data.size == 0:
        raise ShapeError("bce_with_logits of empty tensors")
    z = logits.data
    n = z.size
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = _result(np.array([[per.mean()]]), logits)

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        _acc(logits, (sig - y) / n * g[0, 0])

    return _record(out, (logits,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer class labels."""
    y = np.ascontiguousarray(labels, dtype=np.int64).ravel()
    if y.size != logits.rows:
        raise ShapeError(f"softmax_cross_entropy: {logits.rows} rows vs {y.size} labels")
    if logits.rows == 0:
        raise ShapeError("softmax_cross_entropy of an empty batch")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    n = z.shape[0]
    out = _result(np.array([[np.mean(lse - z[np.arange(n), y])]]), logits)

    def backward(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), y] -= 1.0
        _acc(logits, p / n * g[0, 0])

    return _record(out, (logits,), backward)
