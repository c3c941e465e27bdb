"""Numpy fallback for the message-passing kernels.

Reference semantics for both backends:

- ``mm_stable(a, b)``: matrix product whose row ``i`` depends only on
  ``a[i]`` and ``b``. Plain BLAS matmul does not guarantee this (its blocking
  can change already-present rows when rows are appended), which would break
  the exact non-interference of isolated nodes. ``np.einsum`` without
  ``optimize`` reduces each output element over ``k`` in a fixed order.
- ``gather_rows(x, idx)``: ``x[idx]``.
- ``scatter_add_rows(out, idx, rows)``: ``out[idx[i]] += rows[i]`` in order.
- ``segment_softmax(scores, seg, n_seg)``: per-column softmax over the rows
  of each segment, max-subtracted for stability. Rows of empty segments do
  not exist; segments never normalize across each other.
- ``segment_softmax_grad(w, gout, seg, n_seg)``: backward of the above,
  ``w * (gout - segsum(w * gout))``.
"""
import numpy as np


def mm_stable(a, b):
    return np.einsum("ij,jk->ik", a, b)


def gather_rows(x, idx):
    return x[idx]


def scatter_add_rows(rows, idx, n_rows):
    out = np.zeros((n_rows, rows.shape[1]))
    np.add.at(out, idx, rows)
    return out


def segment_softmax(scores, seg, n_seg):
    h = scores.shape[1]
    mx = np.full((n_seg, h), -np.inf)
    np.fmax.at(mx, seg, scores)
    w = np.exp(scores - mx[seg])
    sm = np.zeros((n_seg, h))
    np.add.at(sm, seg, w)
    return w / sm[seg]


def segment_softmax_grad(w, gout, seg, n_seg):
    dot = np.zeros((n_seg, w.shape[1]))
    np.add.at(dot, seg, w * gout)
    return w * (gout - dot[seg])
