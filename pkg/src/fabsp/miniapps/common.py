"""Configuration, reports, RNG streams, sparse partitions and input generators."""
from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from ..conveyor import DEFAULT_BUFFER_ITEMS, ConveyorStats
from ..fabric import FabricConfig, PeContext, launch_spmd
from ..selector import DEFAULT_RING_CAPACITY

__all__ = [
    "APP_NAMES",
    "AppConfig",
    "AppReport",
    "SparseMatrixPartition",
    "CsrPattern",
    "rank_rng",
    "gen_indices",
    "gen_er_rows",
    "gen_er_matrix",
    "gen_scrambled_triangular",
    "gen_lower_graph_rows",
    "digest",
    "assemble",
    "partition",
    "timed_phase",
    "phase_stats",
    "run_pes",
    "ORACLE_LIMIT",
]

APP_NAMES = ("histogram", "ig", "permute", "randperm", "toposort", "transpose", "triangles")

# gathered (serial) oracles refuse anything bigger than this many entries
ORACLE_LIMIT = 10_000_000

# independent RNG streams, mixed with (seed, rank) by SeedSequence
STREAM_INDICES = 1
STREAM_MATRIX = 2
STREAM_PERM = 3
STREAM_DARTS = 4
STREAM_TRIANGULAR = 5
STREAM_GRAPH = 6

_DEFAULT_SIZES = {
    "histogram": dict(table_per_pe=1_000, updates_per_pe=100_000),
    "ig": dict(table_per_pe=10_000, reads_per_pe=100_000),
    "transpose": dict(rows_per_pe=1_000, nnz_per_row=10),
    "permute": dict(rows_per_pe=1_000, nnz_per_row=10),
    "toposort": dict(rows_per_pe=1_000, nnz_per_row=10),
    "triangles": dict(rows_per_pe=200, nnz_per_row=8),
    "randperm": dict(elements_per_pe=10_000),
}


@dataclass(frozen=True)
class AppConfig:
    """Parameters of one mini-app run.  Unset sizes take the app's default."""

    app: str
    npes: int = 4
    table_per_pe: Optional[int] = None
    updates_per_pe: Optional[int] = None
    reads_per_pe: Optional[int] = None
    rows_per_pe: Optional[int] = None
    nnz_per_row: Optional[float] = None
    elements_per_pe: Optional[int] = None
    seed: int = 0
    buffer_items: int = DEFAULT_BUFFER_ITEMS
    ring_capacity: int = DEFAULT_RING_CAPACITY
    inbox_capacity: int = 64
    validate: bool = True
    deadlock_timeout: Optional[float] = 120.0

    def __post_init__(self):
        if self.app not in APP_NAMES:
            raise ValueError(f"unknown app {self.app!r}; choose from {', '.join(APP_NAMES)}")
        if self.npes < 1:
            raise ValueError("npes must be >= 1")
        for name in ("buffer_items", "ring_capacity", "inbox_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("table_per_pe", "updates_per_pe", "reads_per_pe", "rows_per_pe",
                     "nnz_per_row", "elements_per_pe"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")

    def resolved(self) -> "AppConfig":
        """Copy with the app's default sizes filled in."""
        fills = {k: v for k, v in _DEFAULT_SIZES[self.app].items() if getattr(self, k) is None}
        return replace(self, **fills) if fills else self

    def sizes(self) -> dict[str, Any]:
        cfg = self.resolved()
        return {k: getattr(cfg, k) for k in _DEFAULT_SIZES[self.app]}

    def fabric(self) -> FabricConfig:
        return FabricConfig(npes=self.npes, inbox_capacity=self.inbox_capacity, seed=self.seed,
                            deadlock_timeout=self.deadlock_timeout)


@dataclass
class AppReport:
    app: str
    config: AppConfig
    wall_time_seconds: float
    stats: ConveyorStats
    valid: bool
    checksum: int
    rounds: Optional[int] = None
    result: Any = field(default=None, repr=False, compare=False)
    notes: str = ""

    def to_dict(self) -> dict:
        d = asdict(self.config)
        return {"app": self.app, "config": d, "wall_time_seconds": self.wall_time_seconds,
                "stats": asdict(self.stats), "valid": self.valid,
                "checksum": f"{self.checksum:016x}", "rounds": self.rounds}


def rank_rng(seed: int, rank: int, stream: int) -> np.random.Generator:
    """Generator for one PE's stream; serial oracles rebuild it from the same triple."""
    return np.random.default_rng([seed, stream, rank])


def gen_indices(seed: int, rank: int, count: int, high: int, stream: int = STREAM_INDICES) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if high < 1:
        raise ValueError("index range is empty")
    return rank_rng(seed, rank, stream).integers(0, high, size=count, dtype=np.int64)


def digest(*parts: Any) -> int:
    """64-bit blake2b over the raw bytes of the given arrays/ints."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, (int, np.integer)):
            h.update(int(p).to_bytes(16, "little", signed=True))
        else:
            a = np.ascontiguousarray(np.asarray(p, dtype=np.int64))
            h.update(len(a).to_bytes(8, "little"))
            h.update(a.tobytes())
    return int.from_bytes(h.digest(), "little")


# -- sparse patterns ---------------------------------------------------------------

@dataclass
class CsrPattern:
    """Global sparse pattern in compressed-row form with sorted column indices."""

    nrows: int
    ncols: int
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def row(self, r: int) -> np.ndarray:
        return self.indices[self.indptr[r]:self.indptr[r + 1]]

    def entries(self) -> tuple[np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.nrows, dtype=np.int64), np.diff(self.indptr))
        return rows, self.indices

    @classmethod
    def from_entries(cls, nrows: int, ncols: int, rows: np.ndarray, cols: np.ndarray) -> "CsrPattern":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(nrows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=nrows), out=indptr[1:])
        return cls(nrows, ncols, indptr, cols)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CsrPattern):
            return NotImplemented
        return (self.nrows == other.nrows and self.ncols == other.ncols
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))


@dataclass
class SparseMatrixPartition:
    """Rows ``r`` with ``r % npes == rank``, local row ``l`` being global row ``l*npes + rank``."""

    nrows_global: int
    ncols_global: int
    rank: int
    npes: int
    offsets: np.ndarray
    cols: np.ndarray

    @property
    def nrows_local(self) -> int:
        return len(self.offsets) - 1

    @property
    def nnz(self) -> int:
        return int(self.offsets[-1])

    def row(self, l: int) -> np.ndarray:
        return self.cols[self.offsets[l]:self.offsets[l + 1]]

    def row_lists(self) -> list[list[int]]:
        cols = self.cols.tolist()
        off = self.offsets.tolist()
        return [cols[off[l]:off[l + 1]] for l in range(len(off) - 1)]

    def global_row(self, l: int) -> int:
        return l * self.npes + self.rank

    @classmethod
    def from_rows(cls, nrows_global: int, ncols_global: int, rank: int, npes: int,
                  rows: list[list[int]]) -> "SparseMatrixPartition":
        lengths = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
        offsets = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        cols = np.fromiter((c for r in rows for c in r), dtype=np.int64, count=int(offsets[-1]))
        return cls(nrows_global, ncols_global, rank, npes, offsets, cols)

    def check(self) -> None:
        """Raise ValueError unless columns are in range and strictly increasing per row."""
        if np.any(np.diff(self.offsets) < 0):
            raise ValueError("row offsets not monotone")
        if self.nnz and (self.cols.min() < 0 or self.cols.max() >= self.ncols_global):
            raise ValueError("column index out of range")
        d = np.diff(self.cols)
        starts = self.offsets[1:-1]
        inner = np.ones(len(d), dtype=bool)
        inner[starts[(starts > 0) & (starts < len(self.cols))] - 1] = False
        if np.any(d[inner] <= 0):
            raise ValueError("columns not strictly increasing within a row")


def partition(mat: CsrPattern, rank: int, npes: int) -> SparseMatrixPartition:
    """Cyclic row slice of a global pattern."""
    rows = np.arange(rank, mat.nrows, npes, dtype=np.int64)
    lengths = mat.indptr[rows + 1] - mat.indptr[rows]
    offsets = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    if len(rows):
        idx = np.concatenate([np.arange(mat.indptr[r], mat.indptr[r + 1]) for r in rows]) \
            if offsets[-1] else np.zeros(0, dtype=np.int64)
    else:
        idx = np.zeros(0, dtype=np.int64)
    return SparseMatrixPartition(mat.nrows, mat.ncols, rank, npes, offsets, mat.indices[idx])


def assemble(parts: list[SparseMatrixPartition]) -> CsrPattern:
    """Gather cyclic row partitions back into one global pattern."""
    first = parts[0]
    P = first.npes
    rows, cols = [], []
    for p in parts:
        local = np.repeat(np.arange(p.nrows_local, dtype=np.int64), np.diff(p.offsets))
        rows.append(local * P + p.rank)
        cols.append(p.cols)
    total = sum(p.nnz for p in parts)
    if total > ORACLE_LIMIT:
        raise ValueError(f"refusing to gather {total} entries (limit {ORACLE_LIMIT})")
    return CsrPattern.from_entries(first.nrows_global, first.ncols_global,
                                   np.concatenate(rows), np.concatenate(cols))


def _unique_rows(n_rows: int, row_of_entry: np.ndarray, col_of_entry: np.ndarray,
                 ncols: int) -> tuple[np.ndarray, np.ndarray]:
    keys = np.unique(row_of_entry * ncols + col_of_entry)
    rows, cols = np.divmod(keys, ncols)
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
    return offsets, cols


def gen_er_rows(seed: int, rank: int, npes: int, rows_per_pe: int, z: float) -> SparseMatrixPartition:
    """This PE's rows of an n x n Erdos-Renyi pattern with ``z`` expected nonzeros per row.

    Each row draws Binomial(n, z/n) columns uniformly; duplicates collapse, so
    the realised mean sits slightly below ``z``.
    """
    n = npes * rows_per_pe
    if n == 0:
        return SparseMatrixPartition(0, 0, rank, npes, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    rng = rank_rng(seed, rank, STREAM_MATRIX)
    p = min(1.0, z / n)
    k = rng.binomial(n, p, size=rows_per_pe)
    local = np.repeat(np.arange(rows_per_pe, dtype=np.int64), k)
    cols = rng.integers(0, n, size=len(local), dtype=np.int64)
    offsets, cols = _unique_rows(rows_per_pe, local, cols, n)
    return SparseMatrixPartition(n, n, rank, npes, offsets, cols)


def gen_er_matrix(seed: int, npes: int, rows_per_pe: int, z: float) -> CsrPattern:
    """Serial replay of every PE's :func:`gen_er_rows` stream."""
    return assemble([gen_er_rows(seed, r, npes, rows_per_pe, z) for r in range(npes)])


def gen_lower_graph_rows(seed: int, rank: int, npes: int, rows_per_pe: int, z: float) -> SparseMatrixPartition:
    """Strictly lower-triangular adjacency rows of a random undirected graph.

    Edge probability is chosen so a lower row holds ``z`` entries on average.
    """
    n = npes * rows_per_pe
    if n == 0:
        return SparseMatrixPartition(0, 0, rank, npes, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    rng = rank_rng(seed, rank, STREAM_GRAPH)
    p = min(1.0, 2.0 * z / max(n - 1, 1))
    grows = np.arange(rows_per_pe, dtype=np.int64) * npes + rank
    k = rng.binomial(grows, p)
    local = np.repeat(np.arange(rows_per_pe, dtype=np.int64), k)
    cols = rng.integers(0, np.repeat(grows, k), dtype=np.int64) if len(local) else np.zeros(0, dtype=np.int64)
    offsets, cols = _unique_rows(rows_per_pe, local, cols, n)
    return SparseMatrixPartition(n, n, rank, npes, offsets, cols)


def gen_scrambled_triangular(seed: int, n: int, z: float) -> tuple[CsrPattern, np.ndarray, np.ndarray]:
    """Unit upper-triangular n x n pattern with rows and columns randomly permuted.

    Returns ``(scrambled, row_perm, col_perm)`` where entry ``(i, j)`` of the
    triangular pattern sits at ``(row_perm[i], col_perm[j])``.  Off-diagonal
    density is chosen so rows average ``z`` entries including the diagonal.
    """
    rng = np.random.default_rng([seed, STREAM_TRIANGULAR])
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return CsrPattern(0, 0, np.zeros(1, dtype=np.int64), empty), empty, empty
    p = min(1.0, 2.0 * max(z - 1.0, 0.0) / max(n - 1, 1))
    rows = np.arange(n, dtype=np.int64)
    k = rng.binomial(n - 1 - rows, p)
    er = np.repeat(rows, k)
    span = np.repeat(n - 1 - rows, k)
    ec = er + 1 + (rng.integers(0, span, dtype=np.int64) if len(er) else np.zeros(0, dtype=np.int64))
    all_r = np.concatenate([rows, er])
    all_c = np.concatenate([rows, ec])
    keys = np.unique(all_r * n + all_c)
    tr, tc = np.divmod(keys, n)
    row_perm = rng.permutation(n).astype(np.int64)
    col_perm = rng.permutation(n).astype(np.int64)
    return CsrPattern.from_entries(n, n, row_perm[tr], col_perm[tc]), row_perm, col_perm


# -- running ------------------------------------------------------------------------

def timed_phase(ctx: PeContext, fn: Callable, *args: Any) -> tuple[Any, float]:
    """Run ``fn`` between two barriers; returns (result, seconds)."""
    ctx.barrier()
    t0 = time.perf_counter()
    out = fn(*args)
    ctx.barrier()
    return out, time.perf_counter() - t0


def phase_stats(ctx: PeContext) -> ConveyorStats:
    total = ConveyorStats()
    for conv in ctx.conveyors:
        total = total + conv.stats()
    return total


def run_pes(cfg: AppConfig, pe_main: Callable, *args: Any) -> list:
    return launch_spmd(cfg.fabric(), pe_main, *args)


def sum_stats(stats: list[ConveyorStats]) -> ConveyorStats:
    total = ConveyorStats()
    for s in stats:
        total = total + s
    return total
