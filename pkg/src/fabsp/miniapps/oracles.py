"""Serial reference implementations and validity checkers for the mini-apps.

These run on one thread over gathered data and share nothing with the
distributed code paths except the input generators.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .common import (
    ORACLE_LIMIT,
    STREAM_DARTS,
    CsrPattern,
    gen_indices,
    rank_rng,
)

__all__ = [
    "serial_histogram",
    "serial_transpose",
    "serial_permute",
    "serial_randperm",
    "serial_toposort",
    "triangles_dense",
    "triangles_brute_force",
    "is_permutation",
    "is_unit_upper_triangular",
]


def _guard(n: int) -> None:
    if n > ORACLE_LIMIT:
        raise ValueError(f"serial oracle refuses {n} entries (limit {ORACLE_LIMIT})")


def serial_histogram(seed: int, npes: int, updates_per_pe: int, table_per_pe: int) -> np.ndarray:
    """Replay every PE's index stream and count hits per global bucket."""
    _guard(npes * updates_per_pe)
    m = npes * table_per_pe
    counts = np.zeros(m, dtype=np.int64)
    for r in range(npes):
        counts += np.bincount(gen_indices(seed, r, updates_per_pe, m), minlength=m)
    return counts


def _to_scipy(mat: CsrPattern) -> sp.csr_matrix:
    data = np.ones(mat.nnz, dtype=np.int8)
    return sp.csr_matrix((data, mat.indices, mat.indptr), shape=(mat.nrows, mat.ncols))


def _from_scipy(m: sp.spmatrix) -> CsrPattern:
    m = m.tocsr()
    m.sort_indices()
    return CsrPattern(m.shape[0], m.shape[1], m.indptr.astype(np.int64), m.indices.astype(np.int64))


def serial_transpose(mat: CsrPattern) -> CsrPattern:
    _guard(mat.nnz)
    return _from_scipy(_to_scipy(mat).T)


def serial_permute(mat: CsrPattern, row_perm: np.ndarray, col_perm: np.ndarray) -> CsrPattern:
    """Entry ``(r, c)`` moves to ``(row_perm[r], col_perm[c])``."""
    _guard(mat.nnz)
    coo = _to_scipy(mat).tocoo()
    moved = sp.coo_matrix((coo.data, (row_perm[coo.row], col_perm[coo.col])), shape=coo.shape)
    return _from_scipy(moved)


def serial_randperm(seed: int, elements: int, max_rounds: int) -> tuple[np.ndarray, int]:
    """Single-PE dart throwing with the same stream and conflict rule as the distributed app.

    Darts claim slots of a target twice the output size; a slot goes to the
    first claim that reaches it.  Returns ``(permutation, rounds)``.
    """
    _guard(elements)
    rng = rank_rng(seed, 0, STREAM_DARTS)
    target = np.full(2 * elements, -1, dtype=np.int64)
    unplaced = list(range(elements))
    rounds = 0
    while unplaced:
        if rounds >= max_rounds:
            raise RuntimeError(f"dart throwing did not finish in {max_rounds} rounds")
        rounds += 1
        slots = rng.integers(0, 2 * elements, size=len(unplaced), dtype=np.int64).tolist()
        rejected = []
        for dart, slot in zip(unplaced, slots):
            if target[slot] < 0:
                target[slot] = dart
            else:
                rejected.append(dart)
        unplaced = sorted(rejected)
    return target[target >= 0], rounds


def serial_toposort(mat: CsrPattern) -> tuple[np.ndarray, np.ndarray, bool]:
    """Round-synchronous peeling of rows with a single remaining nonzero.

    Each round takes every row left with one unresolved column, in increasing
    row order, and hands out positions downward from ``n - 1``.  Returns
    ``(row_pos, col_pos, complete)``.
    """
    _guard(mat.nnz)
    n = mat.nrows
    count = np.diff(mat.indptr).astype(np.int64)
    r, c = mat.entries()
    rowsum = np.bincount(r, weights=c, minlength=n).astype(np.int64)
    col_rows = _from_scipy(_to_scipy(mat).T)
    row_pos = np.full(n, -1, dtype=np.int64)
    col_pos = np.full(n, -1, dtype=np.int64)
    resolved = 0
    ready = np.flatnonzero(count == 1)
    while len(ready):
        base = n - 1 - resolved
        touched = []
        for i, row in enumerate(ready.tolist()):
            pos = base - i
            row_pos[row] = pos
            col = int(rowsum[row])
            col_pos[col] = pos
            for rr in col_rows.row(col).tolist():
                count[rr] -= 1
                rowsum[rr] -= col
                touched.append(rr)
        resolved += len(ready)
        t = np.unique(np.asarray(touched, dtype=np.int64))
        ready = t[(count[t] == 1) & (row_pos[t] < 0)] if len(t) else t
    return row_pos, col_pos, resolved == n


def triangles_dense(lower: CsrPattern) -> int:
    """Triangle count from a strictly lower-triangular adjacency via sum((A @ A) * A) / 6.

    Touches every vertex triple (O(n^3)), which is what makes it a brute-force check.
    """
    n = lower.nrows
    if n > 20_000:
        raise ValueError("dense triangle oracle limited to 20,000 vertices")
    a = np.zeros((n, n), dtype=np.float64)
    r, c = lower.entries()
    a[r, c] = 1.0
    a[c, r] = 1.0
    paths = a @ a
    return int(round(float(np.sum(paths * a)) / 6.0))


def triangles_brute_force(lower: CsrPattern) -> int:
    """Explicit enumeration of every vertex triple (small graphs only)."""
    n = lower.nrows
    if n > 400:
        raise ValueError("explicit triple enumeration limited to 400 vertices")
    adj = [set() for _ in range(n)]
    r, c = lower.entries()
    for i, j in zip(r.tolist(), c.tolist()):
        adj[i].add(j)
        adj[j].add(i)
    return sum(1 for i, j, k in combinations(range(n), 3) if j in adj[i] and k in adj[i] and k in adj[j])


def is_permutation(values: np.ndarray, m: int) -> bool:
    values = np.asarray(values, dtype=np.int64)
    return len(values) == m and np.array_equal(np.sort(values), np.arange(m, dtype=np.int64))


def is_unit_upper_triangular(mat: CsrPattern, row_pos: np.ndarray, col_pos: np.ndarray) -> bool:
    """True iff moving entry ``(r, c)`` to ``(row_pos[r], col_pos[c])`` yields an
    upper-triangular pattern with every diagonal entry present."""
    n = mat.nrows
    if not (is_permutation(row_pos, n) and is_permutation(col_pos, n)):
        return False
    r, c = mat.entries()
    pr, pc = row_pos[r], col_pos[c]
    if np.any(pr > pc):
        return False
    diag = np.zeros(n, dtype=bool)
    diag[pr[pr == pc]] = True
    return bool(diag.all())
