"""Sparse matrix formats and the kernels the sparse MLP is built on.

Three representations are used, each for the phase it is good at:

* :class:`SparseBuilder` for incremental construction (row-wise dicts),
* :class:`COOMatrix` for structural edits and per-connection gradients,
* :class:`CSRMatrix` for sparse x dense products.

Dense operands are row-major with the batch as the trailing dimension, so a
batch of ``B`` input vectors of width ``n`` is an ``(n, B)`` array.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

INDEX_DTYPE = np.int32
PTR_DTYPE = np.int64


class SparseFormatError(ValueError):
    """Raised when arrays do not satisfy a sparse format's invariants."""


def _as_index(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=INDEX_DTYPE)


def _as_values(a, dtype=None) -> np.ndarray:
    a = np.asarray(a)
    if dtype is None:
        dtype = a.dtype if a.dtype in (np.float32, np.float64) else np.float64
    return np.ascontiguousarray(a, dtype=dtype)


@dataclass(frozen=True, eq=False)
class COOMatrix:
    """Coordinate-list matrix: parallel ``rows``, ``cols``, ``vals`` arrays."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", _as_index(self.rows))
        object.__setattr__(self, "cols", _as_index(self.cols))
        object.__setattr__(self, "vals", _as_values(self.vals))
        if not (len(self.rows) == len(self.cols) == len(self.vals)):
            raise SparseFormatError("rows, cols and vals must have equal length")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def linear_index(self) -> np.ndarray:
        """Row-major position ``row * n_cols + col`` of every entry (int64)."""
        return self.rows.astype(np.int64) * self.n_cols + self.cols

    def validate(self) -> None:
        if self.nnz:
            if self.rows.min() < 0 or self.rows.max() >= self.n_rows:
                raise SparseFormatError("row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.n_cols:
                raise SparseFormatError("column index out of range")
        if np.any(self.vals == 0):
            raise SparseFormatError("explicit zero stored")
        keys = np.sort(self.linear_index())
        if np.any(keys[1:] == keys[:-1]):
            raise SparseFormatError("duplicate coordinates")

    def to_csr(self) -> "CSRMatrix":
        return coo_to_csr(self)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.vals.dtype)
        out[self.rows, self.cols] = self.vals
        return out


@dataclass(frozen=True, eq=False)
class CSRMatrix:
    """Compressed sparse row matrix in canonical form.

    Column indices are strictly increasing within each row and no stored
    value is exactly zero. Instances are treated as immutable; operations
    that change values return a new matrix sharing the index arrays.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype=PTR_DTYPE))
        object.__setattr__(self, "col_idx", _as_index(self.col_idx))
        object.__setattr__(self, "vals", _as_values(self.vals))
        if len(self.row_ptr) != self.n_rows + 1:
            raise SparseFormatError("row_ptr must have n_rows + 1 entries")
        if len(self.col_idx) != len(self.vals):
            raise SparseFormatError("col_idx and vals must have equal length")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @property
    def dtype(self):
        return self.vals.dtype

    def row_indices(self) -> np.ndarray:
        """Expand ``row_ptr`` into one row index per stored entry."""
        counts = np.diff(self.row_ptr)
        return np.repeat(np.arange(self.n_rows, dtype=INDEX_DTYPE), counts)

    def linear_index(self) -> np.ndarray:
        return self.row_indices().astype(np.int64) * self.n_cols + self.col_idx

    def validate(self) -> None:
        """Check every canonical-form invariant; raise SparseFormatError."""
        rp = self.row_ptr
        if rp[0] != 0 or rp[-1] != self.nnz or np.any(np.diff(rp) < 0):
            raise SparseFormatError("row_ptr is not a valid prefix sum")
        if self.nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise SparseFormatError("column index out of range")
            if not np.all(np.diff(self.linear_index()) > 0):
                raise SparseFormatError("column indices not strictly increasing within a row")
        if np.any(self.vals == 0):
            raise SparseFormatError("explicit zero stored")

    def with_values(self, vals: np.ndarray) -> "CSRMatrix":
        """Same pattern, new values (shares the index arrays)."""
        vals = np.asarray(vals)
        if vals.shape != self.vals.shape:
            raise SparseFormatError("value array does not match pattern")
        return CSRMatrix(self.n_rows, self.n_cols, self.row_ptr, self.col_idx, vals)

    def astype(self, dtype) -> "CSRMatrix":
        return self.with_values(self.vals.astype(dtype))

    def to_coo(self) -> COOMatrix:
        return csr_to_coo(self)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.vals.dtype)
        out[self.row_indices(), self.col_idx] = self.vals
        return out

    @classmethod
    def from_dense(cls, a) -> "CSRMatrix":
        a = np.asarray(a)
        rows, cols = np.nonzero(a)
        return coo_to_csr(COOMatrix(a.shape[0], a.shape[1], rows, cols, a[rows, cols]))

    @classmethod
    def identity(cls, n: int, dtype=np.float64) -> "CSRMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n, dtype=dtype))

    def __eq__(self, other):
        if not isinstance(other, CSRMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.vals.dtype == other.vals.dtype
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.vals, other.vals)
        )

    __hash__ = None


class SparseBuilder:
    """Incremental sparse construction, one ``{col: val}`` dict per row.

    Inserting an existing position replaces its value. Zero values are kept
    while building (so a position can be reserved before its value is known)
    and dropped by :func:`builder_to_csr`.
    """

    def __init__(self, n_rows: int, n_cols: int):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self._rows: list[dict[int, float]] = [{} for _ in range(self.n_rows)]

    def __setitem__(self, key, value):
        r, c = key
        if not (0 <= r < self.n_rows and 0 <= c < self.n_cols):
            raise IndexError(f"position {key} outside {self.n_rows}x{self.n_cols}")
        self._rows[r][c] = value

    def __getitem__(self, key):
        r, c = key
        return self._rows[r].get(c, 0.0)

    def __contains__(self, key) -> bool:
        r, c = key
        return c in self._rows[r]

    insert = __setitem__

    @property
    def nnz(self) -> int:
        return sum(len(row) for row in self._rows)

    def to_csr(self, dtype=np.float64) -> CSRMatrix:
        return builder_to_csr(self, dtype=dtype)


def builder_to_csr(b: SparseBuilder, dtype=np.float64) -> CSRMatrix:
    row_ptr = np.zeros(b.n_rows + 1, dtype=PTR_DTYPE)
    cols: list[int] = []
    vals: list[float] = []
    for r, row in enumerate(b._rows):
        for c in sorted(row):
            v = row[c]
            if v != 0:
                cols.append(c)
                vals.append(v)
        row_ptr[r + 1] = len(cols)
    return CSRMatrix(b.n_rows, b.n_cols, row_ptr, np.array(cols, dtype=INDEX_DTYPE),
                     np.array(vals, dtype=dtype))


def csr_to_coo(m: CSRMatrix) -> COOMatrix:
    return COOMatrix(m.n_rows, m.n_cols, m.row_indices(), m.col_idx.copy(), m.vals.copy())


def coo_to_csr(m: COOMatrix) -> CSRMatrix:
    """Sort, reject duplicate coordinates, drop explicit zeros."""
    keys = m.linear_index()
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    if np.any(keys[1:] == keys[:-1]):
        dup = int(keys[1:][keys[1:] == keys[:-1]][0])
        raise SparseFormatError(f"duplicate coordinate ({dup // m.n_cols}, {dup % m.n_cols})")
    vals = m.vals[order]
    keep = vals != 0
    return csr_from_sorted_keys(m.n_rows, m.n_cols, keys[keep], vals[keep])


def csr_from_sorted_keys(n_rows: int, n_cols: int, keys: np.ndarray, vals: np.ndarray) -> CSRMatrix:
    """Build a CSR matrix from strictly increasing row-major linear indices."""
    rows = keys // n_cols
    cols = (keys - rows * n_cols).astype(INDEX_DTYPE)
    row_ptr = np.zeros(n_rows + 1, dtype=PTR_DTYPE)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=row_ptr[1:])
    return CSRMatrix(n_rows, n_cols, row_ptr, cols, vals)


def nnz(m) -> int:
    return m.nnz


def density(m) -> float:
    return m.nnz / (m.n_rows * m.n_cols)


def sparsity(m) -> float:
    return 1.0 - density(m)


@numba.njit(cache=True, nogil=True)
def _spmm_kernel(row_ptr, col_idx, vals, x, out):
    n_rows = row_ptr.shape[0] - 1
    batch = x.shape[1]
    for i in range(n_rows):
        for k in range(row_ptr[i], row_ptr[i + 1]):
            v = vals[k]
            j = col_idx[k]
            for b in range(batch):
                out[i, b] += v * x[j, b]


@numba.njit(cache=True, nogil=True)
def _spmm_t_kernel(row_ptr, col_idx, vals, d, out):
    n_rows = row_ptr.shape[0] - 1
    batch = d.shape[1]
    for i in range(n_rows):
        for k in range(row_ptr[i], row_ptr[i + 1]):
            v = vals[k]
            j = col_idx[k]
            for b in range(batch):
                out[j, b] += v * d[i, b]


@numba.njit(cache=True, nogil=True)
def _outer_at_pattern_csr(row_ptr, col_idx, delta, a_prev, out):
    n_rows = row_ptr.shape[0] - 1
    batch = delta.shape[1]
    inv = 1.0 / batch
    for i in range(n_rows):
        for k in range(row_ptr[i], row_ptr[i + 1]):
            j = col_idx[k]
            s = 0.0
            for b in range(batch):
                s += delta[i, b] * a_prev[j, b]
            out[k] = s * inv


@numba.njit(cache=True, nogil=True)
def _outer_at_pattern_coo(rows, cols, delta, a_prev, out):
    batch = delta.shape[1]
    inv = 1.0 / batch
    for k in range(rows.shape[0]):
        i = rows[k]
        j = cols[k]
        s = 0.0
        for b in range(batch):
            s += delta[i, b] * a_prev[j, b]
        out[k] = s * inv


def _dense_operand(x, n: int, dtype, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != n:
        raise ValueError(f"{name} has shape {x.shape}, expected ({n}, B)")
    return np.ascontiguousarray(x, dtype=dtype)


def spmm(w: CSRMatrix, x) -> np.ndarray:
    """``w @ x`` for sparse ``w`` (n_rows x n_cols) and dense ``x`` (n_cols x B)."""
    x = _dense_operand(x, w.n_cols, w.dtype, "x")
    out = np.zeros((w.n_rows, x.shape[1]), dtype=w.dtype)
    _spmm_kernel(w.row_ptr, w.col_idx, w.vals, x, out)
    return out


def spmm_transpose(w: CSRMatrix, d) -> np.ndarray:
    """``w.T @ d`` without forming the transpose."""
    d = _dense_operand(d, w.n_rows, w.dtype, "d")
    out = np.zeros((w.n_cols, d.shape[1]), dtype=w.dtype)
    _spmm_t_kernel(w.row_ptr, w.col_idx, w.vals, d, out)
    return out


def outer_at_pattern(pattern, delta, a_prev) -> np.ndarray:
    """Batch-mean outer product ``delta @ a_prev.T / B`` sampled at ``pattern``.

    Only the stored positions are computed; memory is O(nnz). ``pattern`` may
    be COO or CSR; the result is aligned with its value array.
    """
    dtype = pattern.vals.dtype
    delta = _dense_operand(delta, pattern.n_rows, dtype, "delta")
    a_prev = _dense_operand(a_prev, pattern.n_cols, dtype, "a_prev")
    if delta.shape[1] != a_prev.shape[1]:
        raise ValueError("delta and a_prev batch sizes differ")
    out = np.empty(pattern.nnz, dtype=dtype)
    if isinstance(pattern, CSRMatrix):
        _outer_at_pattern_csr(pattern.row_ptr, pattern.col_idx, delta, a_prev, out)
    else:
        _outer_at_pattern_coo(pattern.rows, pattern.cols, delta, a_prev, out)
    return out


def dump_csv(m, path) -> None:
    """Debug dump as ``row,col,val`` lines."""
    coo = m.to_coo() if isinstance(m, CSRMatrix) else m
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "val"])
        for r, c, v in zip(coo.rows.tolist(), coo.cols.tolist(), coo.vals.tolist()):
            writer.writerow([r, c, repr(v)])
