"""Sparse matrix core: CSR storage, kernels, CF-splitting block extraction,
row-wise dropping, and Matrix Market IO.

All operations are pure functions of immutable inputs and use a fixed,
deterministic summation order, so repeated runs produce bitwise identical
results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.io import mmread, mmwrite

__all__ = [
    "Field",
    "Ordering",
    "CsrMatrix",
    "FieldLayout",
    "CfSplitting",
    "matvec",
    "extract_blocks",
    "reassemble_blocks",
    "spgemm",
    "triple_product",
    "diag_inverse",
    "block_diag_inverse",
    "sparsify",
    "gather_entries",
    "permute_rows",
    "permute_cols",
    "read_matrix_market",
    "write_matrix_market",
    "read_vector",
    "write_vector",
]


class Field(enum.IntEnum):
    """Physical field tag of a degree of freedom."""

    U = 0  # displacement (node-based)
    S = 1  # wetting saturation (cell-based)
    P = 2  # pressure (cell-based)


_FIELD_BY_NAME = {"u": Field.U, "s": Field.S, "p": Field.P}


def field_from_name(name: str) -> Field:
    try:
        return _FIELD_BY_NAME[name.lower()]
    except KeyError:
        raise ValueError(f"unknown field tag {name!r}, expected one of u/s/p") from None


class Ordering(enum.Enum):
    FIELD_BLOCKED = "field_blocked"
    FLOW_INTERLEAVED = "flow_interleaved"


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed sparse row matrix with canonical structure.

    Invariants: row_offsets is non-decreasing with row_offsets[0] = 0 and
    row_offsets[nrows] = nnz; column indices are strictly increasing within
    each row (hence no duplicates). Explicit zero values are legal.
    """

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", np.ascontiguousarray(self.row_offsets, dtype=np.int64))
        object.__setattr__(self, "col_indices", np.ascontiguousarray(self.col_indices, dtype=np.int32))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float64))
        self._validate()

    def _validate(self):
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (self.nrows + 1,):
            raise ValueError(f"row_offsets has length {ro.shape[0]}, expected nrows+1={self.nrows + 1}")
        if ro[0] != 0 or ro[-1] != len(ci) or len(ci) != len(self.values):
            raise ValueError("row_offsets endpoints inconsistent with nnz")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if len(ci):
            if ci.min() < 0 or ci.max() >= self.ncols:
                raise ValueError("column index out of range")
            # strictly increasing inside each row: the only non-increasing
            # steps allowed in the concatenated array are at row boundaries
            bad = np.flatnonzero(np.diff(ci.astype(np.int64)) <= 0) + 1
            if len(bad) and not np.all(np.isin(bad, ro)):
                raise ValueError("column indices must be strictly increasing within each row")

    # -- constructors -------------------------------------------------

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = m.tocsr()
        if not m.has_sorted_indices:
            m = m.copy()
            m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a, keep_zeros: bool = False) -> "CsrMatrix":
        a = np.asarray(a, dtype=np.float64)
        if keep_zeros:
            nr, nc = a.shape
            ro = np.arange(nr + 1, dtype=np.int64) * nc
            ci = np.tile(np.arange(nc, dtype=np.int32), nr)
            return cls(nr, nc, ro, ci, a.ravel())
        return cls.from_scipy(sp.csr_matrix(a))

    @classmethod
    def from_coo(cls, nrows, ncols, rows, cols, vals) -> "CsrMatrix":
        """Build from COO triplets; duplicates are summed."""
        m = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)).tocsr()
        m.sort_indices()
        return cls(nrows, ncols, m.indptr, m.indices, m.data)

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    # -- views and conversions ----------------------------------------

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple:
        return (self.nrows, self.ncols)

    def to_scipy(self) -> sp.csr_matrix:
        m = sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape, copy=False)
        m.has_sorted_indices = True
        return m

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        rows = np.repeat(np.arange(self.nrows), np.diff(self.row_offsets))
        out[rows, self.col_indices] = self.values
        return out

    def diagonal(self) -> np.ndarray:
        n = min(self.nrows, self.ncols)
        idx = np.arange(n)
        return gather_entries(self, idx, idx)

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_scipy(self.to_scipy().T.tocsr())

    def row_pattern(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]


@dataclass(frozen=True)
class FieldLayout:
    """Maps each degree of freedom to a physical field and mesh entity."""

    field_of: np.ndarray  # int8, Field values
    entity_of: np.ndarray  # int32 node or cell index
    ordering: Ordering = Ordering.FIELD_BLOCKED

    def __post_init__(self):
        object.__setattr__(self, "field_of", np.ascontiguousarray(self.field_of, dtype=np.int8))
        object.__setattr__(self, "entity_of", np.ascontiguousarray(self.entity_of, dtype=np.int32))
        if self.field_of.shape != self.entity_of.shape:
            raise ValueError("field_of and entity_of must have equal length")
        if self.ordering == Ordering.FLOW_INTERLEAVED:
            s = np.flatnonzero(self.field_of == Field.S)
            p = np.flatnonzero(self.field_of == Field.P)
            if len(s) != len(p):
                raise ValueError("interleaved layout requires one S and one P dof per cell")
            if len(s):
                s = s[np.argsort(self.entity_of[s], kind="stable")]
                p = p[np.argsort(self.entity_of[p], kind="stable")]
                if np.any(np.abs(s - p) != 1):
                    raise ValueError("interleaved layout requires adjacent S/P dofs per cell")

    @property
    def ndofs(self) -> int:
        return len(self.field_of)

    def fields_present(self) -> set:
        return {Field(v) for v in np.unique(self.field_of)}

    def dofs_of(self, f: Field) -> np.ndarray:
        return np.flatnonzero(self.field_of == f)

    def restrict(self, idx: np.ndarray) -> "FieldLayout":
        """Layout of the submatrix keeping dofs `idx` in order."""
        return FieldLayout(self.field_of[idx], self.entity_of[idx], self.ordering)

    @classmethod
    def single_field(cls, n: int, f: Field = Field.P) -> "FieldLayout":
        return cls(np.full(n, int(f), dtype=np.int8), np.arange(n, dtype=np.int32))

    @classmethod
    def interleaved_flow(cls, ncells: int) -> "FieldLayout":
        """s0 p0 s1 p1 ... layout over 2*ncells dofs."""
        f = np.empty(2 * ncells, dtype=np.int8)
        f[0::2] = Field.S
        f[1::2] = Field.P
        e = np.repeat(np.arange(ncells, dtype=np.int32), 2)
        return cls(f, e, Ordering.FLOW_INTERLEAVED)


@dataclass(frozen=True)
class CfSplitting:
    """Disjoint C/F partition of matrix rows, order preserving."""

    is_c: np.ndarray  # bool per row
    c_index: np.ndarray = field(default=None)  # row -> coarse index, -1 on F rows
    f_index: np.ndarray = field(default=None)  # row -> fine index, -1 on C rows

    def __post_init__(self):
        object.__setattr__(self, "is_c", np.ascontiguousarray(self.is_c, dtype=bool))
        if self.c_index is None:
            ci = np.full(len(self.is_c), -1, dtype=np.int64)
            ci[self.is_c] = np.arange(int(self.is_c.sum()))
            fi = np.full(len(self.is_c), -1, dtype=np.int64)
            fi[~self.is_c] = np.arange(int((~self.is_c).sum()))
            object.__setattr__(self, "c_index", ci)
            object.__setattr__(self, "f_index", fi)

    @property
    def n(self) -> int:
        return len(self.is_c)

    @property
    def n_c(self) -> int:
        return int(self.is_c.sum())

    @property
    def n_f(self) -> int:
        return self.n - self.n_c

    def c_rows(self) -> np.ndarray:
        return np.flatnonzero(self.is_c)

    def f_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.is_c)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def matvec(A: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """y = A x, summed in stored column order within each row."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.ncols,):
        raise ValueError(f"matvec dimension mismatch: A is {A.nrows}x{A.ncols}, x has length {len(x)}")
    return A.to_scipy() @ x


def extract_blocks(A: CsrMatrix, split: CfSplitting):
    """Restriction of square A to the F/C index products (A_FF, A_FC, A_CF, A_CC).

    Rows and columns are renumbered by f_index/c_index; values are copied
    untouched, so permutation reassembly recovers A bit-exactly.
    """
    if A.nrows != A.ncols:
        raise ValueError("extract_blocks requires a square matrix")
    if split.n != A.nrows:
        raise ValueError("splitting size does not match matrix")
    m = A.to_scipy()
    f = split.f_rows()
    c = split.c_rows()
    mf = m[f]
    mc = m[c]
    a_ff = CsrMatrix.from_scipy(mf[:, f])
    a_fc = CsrMatrix.from_scipy(mf[:, c])
    a_cf = CsrMatrix.from_scipy(mc[:, f])
    a_cc = CsrMatrix.from_scipy(mc[:, c])
    return a_ff, a_fc, a_cf, a_cc


def reassemble_blocks(blocks, split: CfSplitting) -> CsrMatrix:
    """Inverse of extract_blocks: scatter the four blocks back to original order."""
    a_ff, a_fc, a_cf, a_cc = blocks
    top = sp.hstack([a_ff.to_scipy(), a_fc.to_scipy()], format="csr")
    bot = sp.hstack([a_cf.to_scipy(), a_cc.to_scipy()], format="csr")
    perm_rows = np.concatenate([split.f_rows(), split.c_rows()])
    m = sp.vstack([top, bot], format="csr")
    out = CsrMatrix.from_scipy(m)
    out = permute_rows(out, _inverse_permutation(perm_rows), inverse=False)
    return permute_cols(out, perm_rows)


def _inverse_permutation(p: np.ndarray) -> np.ndarray:
    inv = np.empty_like(p)
    inv[p] = np.arange(len(p))
    return inv


def permute_rows(A: CsrMatrix, perm: np.ndarray, inverse: bool = False) -> CsrMatrix:
    """Row gather: result row i = A row perm[i] (or scatter when inverse)."""
    perm = np.asarray(perm)
    if inverse:
        perm = _inverse_permutation(perm)
    counts = np.diff(A.row_offsets)[perm]
    ro = np.concatenate([[0], np.cumsum(counts)])
    starts = A.row_offsets[perm]
    take = _segment_gather(starts, counts)
    return CsrMatrix(A.nrows, A.ncols, ro, A.col_indices[take], A.values[take])


def permute_cols(A: CsrMatrix, perm: np.ndarray) -> CsrMatrix:
    """Column relabel: entry (i, j) moves to (i, perm[j])."""
    new_cols = np.asarray(perm, dtype=np.int64)[A.col_indices]
    rows = np.repeat(np.arange(A.nrows), np.diff(A.row_offsets))
    order = np.lexsort((new_cols, rows))
    return CsrMatrix(A.nrows, A.ncols, A.row_offsets, new_cols[order], A.values[order])


def _segment_gather(starts, counts):
    """Indices [s0, s0+1, ..., s0+c0-1, s1, ...] for segment copies."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return np.repeat(starts - offsets, counts) + np.arange(total, dtype=np.int64)


def spgemm(A: CsrMatrix, B: CsrMatrix) -> CsrMatrix:
    """Exact sparse product A @ B.

    The result carries the full structural pattern: entries whose value
    cancels to zero are retained as explicit zeros.
    """
    if A.ncols != B.nrows:
        raise ValueError(f"spgemm dimension mismatch: {A.shape} @ {B.shape}")
    sa, sb = A.to_scipy(), B.to_scipy()
    num = sa @ sb
    num = num.tocsr()
    num.sort_indices()
    # structural pattern via an indicator product (no cancellation possible)
    pa = sa.copy()
    pa.data = np.ones_like(pa.data)
    pb = sb.copy()
    pb.data = np.ones_like(pb.data)
    pat = (pa @ pb).tocsr()
    pat.sort_indices()
    if pat.nnz == num.nnz:
        return CsrMatrix(A.nrows, B.ncols, num.indptr, num.indices, num.data)
    # scatter computed values into the structural pattern (missing = cancelled)
    vals = np.zeros(pat.nnz)
    pos = _locate_entries(pat.indptr, pat.indices, pat.shape[1], num.indptr, num.indices)
    vals[pos] = num.data
    return CsrMatrix(A.nrows, B.ncols, pat.indptr, pat.indices, vals)


def _locate_entries(host_indptr, host_indices, ncols, sub_indptr, sub_indices):
    """Positions of sub's entries inside host's arrays (sub pattern ⊆ host)."""
    ncols = np.int64(ncols)
    hrows = np.repeat(np.arange(len(host_indptr) - 1, dtype=np.int64), np.diff(host_indptr))
    srows = np.repeat(np.arange(len(sub_indptr) - 1, dtype=np.int64), np.diff(sub_indptr))
    hkey = hrows * ncols + host_indices
    skey = srows * ncols + sub_indices
    pos = np.searchsorted(hkey, skey)
    if len(pos) and (pos.max() >= len(hkey) or np.any(hkey[pos] != skey)):
        raise ValueError("pattern alignment failed: sub pattern not contained in host")
    return pos


def gather_entries(A: CsrMatrix, rows, cols) -> np.ndarray:
    """Values of A at (rows[i], cols[i]); 0.0 where the entry is absent."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    arows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_offsets))
    akey = arows * A.ncols + A.col_indices
    key = rows * A.ncols + cols
    pos = np.searchsorted(akey, key)
    out = np.zeros(len(key))
    ok = pos < len(akey)
    hit = np.zeros(len(key), dtype=bool)
    hit[ok] = akey[pos[ok]] == key[ok]
    out[hit] = A.values[pos[hit]]
    return out


def triple_product(R: CsrMatrix, A: CsrMatrix, P: CsrMatrix) -> CsrMatrix:
    """R @ A @ P, computed as spgemm(spgemm(R, A), P)."""
    return spgemm(spgemm(R, A), P)


def diag_inverse(A: CsrMatrix) -> np.ndarray:
    """Reciprocal of the diagonal of square A."""
    if A.nrows != A.ncols:
        raise ValueError("diag_inverse requires a square matrix")
    d = A.diagonal()
    bad = np.flatnonzero(d == 0.0)
    if len(bad):
        raise ValueError(f"singular diagonal: zero or missing entry at row {int(bad[0])}")
    return 1.0 / d


def block_diag_inverse(A: CsrMatrix, layout: FieldLayout, block: int = 2) -> CsrMatrix:
    """Exact inverse of each cell's 2x2 (s, p) diagonal block, as block-diagonal CSR."""
    if block != 2:
        raise ValueError("only 2x2 blocks are supported")
    if layout.ordering != Ordering.FLOW_INTERLEAVED:
        raise ValueError("block_diag_inverse requires an interleaved flow layout")
    if A.nrows != A.ncols or A.nrows != layout.ndofs:
        raise ValueError("matrix and layout sizes do not match")
    s = np.flatnonzero(layout.field_of == Field.S)
    s = s[np.argsort(layout.entity_of[s], kind="stable")]
    p = np.flatnonzero(layout.field_of == Field.P)
    p = p[np.argsort(layout.entity_of[p], kind="stable")]
    a = gather_entries(A, s, s)
    b = gather_entries(A, s, p)
    c = gather_entries(A, p, s)
    d = gather_entries(A, p, p)
    det = a * d - b * c
    bad = np.flatnonzero(det == 0.0)
    if len(bad):
        cell = int(layout.entity_of[s[bad[0]]])
        raise ValueError(f"singular 2x2 diagonal block at cell {cell}")
    ncells = len(s)
    rows = np.concatenate([s, s, p, p])
    cols = np.concatenate([s, p, s, p])
    vals = np.concatenate([d / det, -b / det, -c / det, a / det])
    return CsrMatrix.from_coo(A.nrows, A.ncols, rows, cols, vals)


def sparsify(M: CsrMatrix, layout: FieldLayout, n_max: int) -> CsrMatrix:
    """Row-wise dropping operator.

    Per row keeps (a) every same-entity entry (the sub-block diagonal entry of
    each field pair, including the main diagonal) and (b) the n_max entries of
    largest absolute value among the rest, ties broken by smaller column
    index. Dropped entries are removed from the pattern; kept values are
    unmodified.
    """
    if M.nrows != M.ncols:
        raise ValueError("sparsify requires a square matrix")
    if layout.ndofs != M.nrows:
        raise ValueError("layout does not cover the matrix")
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    rows = np.repeat(np.arange(M.nrows, dtype=np.int64), np.diff(M.row_offsets))
    cols = M.col_indices.astype(np.int64)
    keep = layout.entity_of[cols] == layout.entity_of[rows]
    rem = np.flatnonzero(~keep)
    if n_max > 0 and len(rem):
        order = np.lexsort((cols[rem], -np.abs(M.values[rem]), rows[rem]))
        srows = rows[rem][order]
        newgrp = np.r_[True, srows[1:] != srows[:-1]]
        starts = np.flatnonzero(newgrp)
        rank = np.arange(len(srows)) - starts[np.cumsum(newgrp) - 1]
        keep[rem[order[rank < n_max]]] = True
    kept = np.flatnonzero(keep)
    ro = np.concatenate([[0], np.cumsum(np.bincount(rows[kept], minlength=M.nrows))])
    return CsrMatrix(M.nrows, M.ncols, ro, M.col_indices[kept], M.values[kept])


def subtract(A: CsrMatrix, B: CsrMatrix) -> CsrMatrix:
    """A - B over the union pattern (scipy may prune exact cancellations)."""
    if A.shape != B.shape:
        raise ValueError("shape mismatch")
    return CsrMatrix.from_scipy((A.to_scipy() - B.to_scipy()).tocsr())


def add(A: CsrMatrix, B: CsrMatrix) -> CsrMatrix:
    if A.shape != B.shape:
        raise ValueError("shape mismatch")
    return CsrMatrix.from_scipy((A.to_scipy() + B.to_scipy()).tocsr())


# ---------------------------------------------------------------------------
# Matrix Market IO (general real coordinate format, 1-based on disk)
# ---------------------------------------------------------------------------


def write_matrix_market(path, A: CsrMatrix) -> None:
    mmwrite(str(path), A.to_scipy().tocoo(), precision=17, symmetry="general")


def read_matrix_market(path) -> CsrMatrix:
    m = mmread(str(path))
    return CsrMatrix.from_scipy(sp.csr_matrix(m))


def write_vector(path, v: np.ndarray) -> None:
    mmwrite(str(path), np.asarray(v, dtype=np.float64).reshape(-1, 1), precision=17)


def read_vector(path) -> np.ndarray:
    return np.asarray(mmread(str(path)), dtype=np.float64).ravel()
