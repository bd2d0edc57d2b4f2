"""Compressed sparse rows with two execution backends for the reductions.

The solvers run the same arithmetic in two modes.  ``sequential`` drives
compiled straight-line loops; ``data_parallel`` evaluates whole rounds as
bulk array operations.  Both accumulate dot products in the same order
(linear over each row's stored entries), so the two backends produce
bitwise identical results; everything mode-independent lives in shared
code paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

MODES = ("sequential", "data_parallel")


@dataclass(frozen=True)
class CsrRows:
    """Row-major sparse matrix: ``indptr`` (len m+1), ``indices``, ``data``.

    ``row_ids`` repeats each row index once per stored entry; the bulk
    backend uses it for bincount-style segment sums.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n_cols: int
    row_ids: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.indptr.size - 1

    @property
    def nnz(self) -> int:
        return self.data.size


def csr_from_rows(rows, n_cols: int) -> CsrRows:
    """Build from an iterable of ``(indices, values)`` pairs."""
    indptr = [0]
    idx_parts = []
    val_parts = []
    for idx, val in rows:
        idx = np.asarray(idx, dtype=np.int64)
        val = np.asarray(val, dtype=np.float64)
        idx_parts.append(idx)
        val_parts.append(val)
        indptr.append(indptr[-1] + idx.size)
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = (
        np.concatenate(idx_parts) if idx_parts else np.empty(0, dtype=np.int64)
    )
    data = np.concatenate(val_parts) if val_parts else np.empty(0, dtype=np.float64)
    return _make(indptr, indices, data, n_cols)


def _make(indptr, indices, data, n_cols) -> CsrRows:
    row_ids = np.repeat(
        np.arange(indptr.size - 1, dtype=np.int64), np.diff(indptr)
    )
    return CsrRows(
        indptr=indptr, indices=indices, data=data, n_cols=int(n_cols), row_ids=row_ids
    )


def csr_transpose(a: CsrRows) -> CsrRows:
    """Transpose with entries of each output row kept in input-row order."""
    order = np.argsort(a.indices, kind="stable")
    counts = np.bincount(a.indices, minlength=a.n_cols)
    indptr = np.zeros(a.n_cols + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return _make(indptr, a.row_ids[order], a.data[order], a.n_rows)


def csr_mask_cols(a: CsrRows, keep: np.ndarray) -> CsrRows:
    """Drop columns where ``keep`` is False and renumber the survivors."""
    new_col = np.cumsum(keep) - 1
    sel = keep[a.indices]
    counts = np.bincount(a.row_ids[sel], minlength=a.n_rows)
    indptr = np.zeros(a.n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return _make(indptr, new_col[a.indices[sel]], a.data[sel], int(keep.sum()))


def csr_append_row(a: CsrRows, indices, values) -> CsrRows:
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    indptr = np.concatenate([a.indptr, [a.indptr[-1] + indices.size]])
    return _make(
        indptr,
        np.concatenate([a.indices, indices]),
        np.concatenate([a.data, values]),
        a.n_cols,
    )


def csr_scale_rows(a: CsrRows, scale: np.ndarray) -> CsrRows:
    """Multiply each row by a scalar (used to normalize budgets to 1)."""
    return _make(a.indptr, a.indices, a.data * scale[a.row_ids], a.n_cols)


def column_max(a: CsrRows) -> np.ndarray:
    """Per-column maximum of stored entries (0 for empty columns)."""
    out = np.zeros(a.n_cols)
    np.maximum.at(out, a.indices, a.data)
    return out


@njit(cache=True, nogil=True)
def _matvec_linear(indptr, indices, data, x, out):
    for r in range(indptr.size - 1):
        acc = 0.0
        for t in range(indptr[r], indptr[r + 1]):
            acc += data[t] * x[indices[t]]
        out[r] = acc


@njit(cache=True, nogil=True)
def _gathermax_linear(indptr, indices, x, out):
    for r in range(indptr.size - 1):
        best = -np.inf
        for t in range(indptr[r], indptr[r + 1]):
            v = x[indices[t]]
            if v > best:
                best = v
        out[r] = best


def matvec(a: CsrRows, x: np.ndarray, out: np.ndarray, mode: str) -> np.ndarray:
    """``out = a @ x``; the two modes accumulate in the same order."""
    if mode == "sequential":
        _matvec_linear(a.indptr, a.indices, a.data, x, out)
    else:
        out[:] = np.bincount(a.row_ids, weights=a.data * x[a.indices], minlength=a.n_rows)
    return out


def gather_max(a: CsrRows, x: np.ndarray, out: np.ndarray, mode: str) -> np.ndarray:
    """Per-row max of ``x`` over each row's column indices.

    Rows must be nonempty (the solvers guarantee this); value ``-inf``
    would otherwise leak from the sequential backend.
    """
    if mode == "sequential":
        _gathermax_linear(a.indptr, a.indices, x, out)
    else:
        out[:] = np.maximum.reduceat(x[a.indices], a.indptr[:-1])
    return out
