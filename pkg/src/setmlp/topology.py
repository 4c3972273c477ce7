"""Sparse connectivity: Erdos-Renyi initialization and prune/regrow evolution.

The nonzero pattern of a layer's weight matrix *is* its connectivity mask;
no binary matrix of the dense shape is ever stored.

Two evolution routines are provided. :func:`evolve_v1` is the readable
loop-based version (per-entry threshold test, one-at-a-time regrowth into a
row-dict builder). :func:`evolve_v2` does the same work with vectorized
threshold tests and batched candidate generation. Both pull regrowth
candidates from the same :class:`CandidateStream`, so with equal RNG state
they return identical matrices.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .sparse import CSRMatrix, SparseBuilder, builder_to_csr, csr_from_sorted_keys

# Above this many cells ER sampling draws one Bernoulli per cell directly.
_BERNOULLI_CELL_LIMIT = 1 << 24
# Above this density regrowth enumerates free cells instead of rejection sampling.
_DENSE_REGROW_THRESHOLD = 0.5


@dataclass(frozen=True)
class TopologyParams:
    epsilon: float = 10.0
    zeta: float = 0.3
    regrow_sigma: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 <= self.zeta < 1:
            raise ValueError(f"zeta must be in [0, 1), got {self.zeta}")
        if not self.regrow_sigma > 0:
            raise ValueError(f"regrow_sigma must be > 0, got {self.regrow_sigma}")


@dataclass
class EvolutionReport:
    """Outcome of one prune/regrow pass on a single layer.

    ``source_index[k]`` is the position in the old value array that entry
    ``k`` of the new matrix came from, or -1 for a regrown connection.
    """

    removed: int
    added: int
    nnz_before: int
    nnz_after: int
    elapsed: float
    pruned_index: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, np.int64))
    source_index: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, np.int64))


def connection_probability(n_in: int, n_out: int, epsilon: float) -> float:
    return min(epsilon * (n_in + n_out) / (n_in * n_out), 1.0)


def expected_nnz(widths, epsilon: float) -> int:
    """Expected connection count of an ER-initialized network, rounded per layer."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ValueError("need at least two layer widths")
    return sum(
        round(connection_probability(a, b, epsilon) * a * b) for a, b in zip(widths[:-1], widths[1:])
    )


def dense_connections(widths) -> int:
    widths = [int(w) for w in widths]
    return sum(a * b for a, b in zip(widths[:-1], widths[1:]))


def _nonzero_normal(rng: np.random.Generator, sigma: float, size: int, dtype=np.float64) -> np.ndarray:
    vals = rng.normal(0.0, sigma, size=size).astype(dtype)
    zero = vals == 0
    while zero.any():
        vals[zero] = rng.normal(0.0, sigma, size=int(zero.sum())).astype(dtype)
        zero = vals == 0
    return vals


def _sample_positions(rng: np.random.Generator, total: int, p: float) -> np.ndarray:
    """Sorted linear indices, each cell present independently with probability p."""
    if p >= 1.0:
        return np.arange(total, dtype=np.int64)
    if total <= _BERNOULLI_CELL_LIMIT:
        return np.flatnonzero(rng.random(total) < p).astype(np.int64)
    # Same law as per-cell Bernoulli: binomial count, then a uniform subset of that size.
    count = int(rng.binomial(total, p))
    keys = np.unique(rng.integers(0, total, size=count))
    while len(keys) < count:
        extra = rng.integers(0, total, size=count - len(keys))
        keys = np.union1d(keys, extra)
    if len(keys) > count:
        keys = np.sort(rng.choice(keys, size=count, replace=False))
    return keys


def er_init(
    n_in: int,
    n_out: int,
    params: TopologyParams,
    weight_sigma: float,
    rng: np.random.Generator | None = None,
    dtype=np.float64,
) -> CSRMatrix:
    """Random sparse ``n_out x n_in`` weight matrix with Erdos-Renyi connectivity."""
    if n_in < 1 or n_out < 1:
        raise ValueError("layer widths must be >= 1")
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    p = connection_probability(n_in, n_out, params.epsilon)
    keys = _sample_positions(rng, n_in * n_out, p)
    vals = _nonzero_normal(rng, weight_sigma, len(keys), dtype)
    return csr_from_sorted_keys(n_out, n_in, keys, vals)


def prune_selection(vals, zeta: float) -> np.ndarray:
    """Indices of the weights to prune, ascending.

    Takes ``floor(zeta * #negatives)`` negatives closest to zero and
    ``floor(zeta * #positives)`` positives closest to zero. Ties in value
    go to the lower index.
    """
    vals = np.asarray(vals)
    idx = np.arange(len(vals))
    neg = idx[vals < 0]
    pos = idx[vals >= 0]
    k_neg = math.floor(zeta * len(neg))
    k_pos = math.floor(zeta * len(pos))
    neg_sel = neg[np.lexsort((neg, -vals[neg]))[:k_neg]]
    pos_sel = pos[np.lexsort((pos, vals[pos]))[:k_pos]]
    return np.sort(np.concatenate([neg_sel, pos_sel]))


def _prune_thresholds(sorted_neg, sorted_pos, zeta):
    """Boundary values and tie quotas from per-class sorted values.

    ``sorted_neg`` is descending (closest to zero first), ``sorted_pos``
    ascending. Entries strictly between the two boundaries are pruned, plus
    ``quota`` entries equal to each boundary.
    """
    k_neg = math.floor(zeta * len(sorted_neg))
    k_pos = math.floor(zeta * len(sorted_pos))
    v_neg = sorted_neg[k_neg - 1] if k_neg else None
    v_pos = sorted_pos[k_pos - 1] if k_pos else None
    return k_neg, v_neg, k_pos, v_pos


class CandidateStream:
    """Uniform random cell indices, drawn lazily in fixed-size blocks.

    The sequence produced does not depend on how callers slice it, so a
    one-at-a-time consumer and a batched consumer see the same candidates.
    """

    block = 4096

    def __init__(self, rng: np.random.Generator, n_cells: int):
        self._rng = rng
        self._n = n_cells
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def _refill(self):
        self._buf = self._rng.integers(0, self._n, size=self.block, dtype=np.int64)
        self._pos = 0

    def next(self) -> int:
        if self._pos == len(self._buf):
            self._refill()
        v = int(self._buf[self._pos])
        self._pos += 1
        return v

    def take(self, n: int) -> np.ndarray:
        parts = []
        while n > 0:
            if self._pos == len(self._buf):
                self._refill()
            chunk = self._buf[self._pos:self._pos + n]
            self._pos += len(chunk)
            n -= len(chunk)
            parts.append(chunk)
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def _regrow_from_free_cells(rng, n_cells, occupied_keys, n_new):
    """Dense-matrix fallback: choose directly among the free cells."""
    free = np.setdiff1d(np.arange(n_cells, dtype=np.int64), occupied_keys, assume_unique=True)
    return rng.choice(free, size=n_new, replace=False)


def _resolve_rng(params, rng):
    return np.random.default_rng(params.rng_seed) if rng is None else rng


def _use_dense_fallback(w: CSRMatrix) -> bool:
    return w.nnz > _DENSE_REGROW_THRESHOLD * w.n_rows * w.n_cols


def evolve_v1(w: CSRMatrix, params: TopologyParams, rng: np.random.Generator | None = None):
    """Loop-based prune/regrow. Returns ``(new_weights, EvolutionReport)``."""
    rng = _resolve_rng(params, rng)
    t0 = time.perf_counter()
    coo = w.to_coo()
    rows = coo.rows.tolist()
    cols = coo.cols.tolist()
    vals = coo.vals.tolist()

    negatives = sorted((v for v in vals if v < 0), reverse=True)
    positives = sorted(v for v in vals if v >= 0)
    k_neg, v_neg, k_pos, v_pos = _prune_thresholds(negatives, positives, params.zeta)
    neg_ties = k_neg - sum(1 for v in negatives[:k_neg] if v != v_neg)
    pos_ties = k_pos - sum(1 for v in positives[:k_pos] if v != v_pos)

    kept = SparseBuilder(w.n_rows, w.n_cols)
    source = {}
    pruned = []
    for k in range(len(vals)):
        v = vals[k]
        drop = False
        if v < 0 and v_neg is not None:
            if v > v_neg:
                drop = True
            elif v == v_neg and neg_ties > 0:
                drop = True
                neg_ties -= 1
        elif v >= 0 and v_pos is not None:
            if v < v_pos:
                drop = True
            elif v == v_pos and pos_ties > 0:
                drop = True
                pos_ties -= 1
        if drop:
            pruned.append(k)
        else:
            kept[rows[k], cols[k]] = v
            source[(rows[k], cols[k])] = k

    n_missing = len(pruned)
    grown = []
    if n_missing and _use_dense_fallback(w):
        occupied = np.array(sorted(r * w.n_cols + c for r, c in source), dtype=np.int64)
        for key in _regrow_from_free_cells(rng, w.n_rows * w.n_cols, occupied, n_missing).tolist():
            grown.append(divmod(key, w.n_cols))
    elif n_missing:
        stream = CandidateStream(rng, w.n_rows * w.n_cols)
        while n_missing > 0:
            r, c = divmod(stream.next(), w.n_cols)
            if (r, c) not in kept:
                kept[r, c] = 0.0  # reserve; value assigned below
                grown.append((r, c))
                n_missing -= 1
    if grown:
        new_vals = _nonzero_normal(rng, params.regrow_sigma, len(grown), w.dtype)
        for (r, c), v in zip(grown, new_vals.tolist()):
            kept[r, c] = v

    out = builder_to_csr(kept, dtype=w.dtype)
    out_coo = out.to_coo()
    src = np.array(
        [source.get((r, c), -1) for r, c in zip(out_coo.rows.tolist(), out_coo.cols.tolist())],
        dtype=np.int64,
    )
    report = EvolutionReport(
        removed=len(pruned),
        added=len(grown),
        nnz_before=w.nnz,
        nnz_after=out.nnz,
        elapsed=time.perf_counter() - t0,
        pruned_index=np.array(pruned, dtype=np.int64),
        source_index=src,
    )
    return out, report


def _vector_prune_mask(vals: np.ndarray, zeta: float) -> np.ndarray:
    """Boolean mask of entries to prune, via one vectorized threshold pass."""
    neg = vals < 0
    n_neg = int(neg.sum())
    k_neg = math.floor(zeta * n_neg)
    k_pos = math.floor(zeta * (len(vals) - n_neg))
    prune = np.zeros(len(vals), dtype=bool)
    if k_neg:
        # k_neg-th largest negative value
        v_neg = -np.partition(-vals[neg], k_neg - 1)[k_neg - 1]
        prune |= neg & (vals > v_neg)
        tie = np.flatnonzero(vals == v_neg)
        prune[tie[: k_neg - int(prune.sum())]] = True
    if k_pos:
        before = int(prune.sum())
        nonneg = ~neg
        v_pos = np.partition(vals[nonneg], k_pos - 1)[k_pos - 1]
        prune |= nonneg & (vals < v_pos)
        tie = np.flatnonzero(vals == v_pos)
        prune[tie[: k_pos - (int(prune.sum()) - before)]] = True
    return prune


def evolve_v2(w: CSRMatrix, params: TopologyParams, rng: np.random.Generator | None = None):
    """Vectorized prune/regrow. Returns ``(new_weights, EvolutionReport)``."""
    rng = _resolve_rng(params, rng)
    t0 = time.perf_counter()
    keys = w.linear_index()
    prune = _vector_prune_mask(w.vals, params.zeta)
    keep_idx = np.flatnonzero(~prune)
    kept_keys = keys[keep_idx]
    n_missing = len(keys) - len(keep_idx)
    n_cells = w.n_rows * w.n_cols

    if n_missing and _use_dense_fallback(w):
        new_keys = _regrow_from_free_cells(rng, n_cells, kept_keys, n_missing)
    elif n_missing:
        stream = CandidateStream(rng, n_cells)
        accepted = []
        accepted_sorted = np.empty(0, dtype=np.int64)
        while n_missing > 0:
            cand = stream.take(n_missing)
            _, first = np.unique(cand, return_index=True)
            cand = cand[np.sort(first)]
            pos = np.searchsorted(kept_keys, cand)
            hit = kept_keys[np.minimum(pos, len(kept_keys) - 1)] == cand if len(kept_keys) else np.zeros(len(cand), bool)
            if len(accepted_sorted):
                pos = np.searchsorted(accepted_sorted, cand)
                hit |= accepted_sorted[np.minimum(pos, len(accepted_sorted) - 1)] == cand
            cand = cand[~hit]
            accepted.append(cand)
            accepted_sorted = np.sort(np.concatenate([accepted_sorted, cand]))
            n_missing -= len(cand)
        new_keys = np.concatenate(accepted)
    else:
        new_keys = np.empty(0, dtype=np.int64)

    if len(new_keys):
        new_vals = _nonzero_normal(rng, params.regrow_sigma, len(new_keys), w.dtype)
    else:
        new_vals = np.empty(0, dtype=w.dtype)
    all_keys = np.concatenate([kept_keys, new_keys])
    order = np.argsort(all_keys, kind="stable")
    all_vals = np.concatenate([w.vals[keep_idx], new_vals])[order]
    source = np.concatenate([keep_idx, np.full(len(new_keys), -1, dtype=np.int64)])[order]
    out = csr_from_sorted_keys(w.n_rows, w.n_cols, all_keys[order], all_vals)
    report = EvolutionReport(
        removed=int(prune.sum()),
        added=len(new_keys),
        nnz_before=w.nnz,
        nnz_after=out.nnz,
        elapsed=time.perf_counter() - t0,
        pruned_index=np.flatnonzero(prune),
        source_index=source,
    )
    return out, report


EVOLVE = {"v1": evolve_v1, "v2": evolve_v2}
