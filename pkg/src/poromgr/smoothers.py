"""Relaxation and incomplete-factorization smoothers.

Hybrid sweeps emulate processor locality with contiguous row partitions:
Gauss-Seidel (or block Gauss-Seidel) inside a partition, Jacobi coupling
between partitions, and l1 diagonal compensation for the off-partition
connections. With a single partition the hybrid sweeps reduce to their
sequential counterparts bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .sparse import CsrMatrix, Field, FieldLayout, Ordering

__all__ = [
    "PartitionSet",
    "IluFactors",
    "ZeroPivotError",
    "jacobi_sweep",
    "l1_diagonal",
    "l1_gs_sweep",
    "hbgs_sweeps",
    "ilu_factor",
    "ilu_solve",
    "restrict_to_partitions",
]


class ZeroPivotError(ArithmeticError):
    """Raised when elimination hits a zero or structurally missing pivot."""

    def __init__(self, row: int):
        self.row = int(row)
        super().__init__(f"zero pivot at row {int(row)}")


@dataclass(frozen=True)
class PartitionSet:
    """Disjoint contiguous row ranges covering all rows."""

    starts: np.ndarray  # int64, length npartitions + 1

    def __post_init__(self):
        s = np.ascontiguousarray(self.starts, dtype=np.int64)
        object.__setattr__(self, "starts", s)
        if len(s) < 2 or s[0] != 0 or np.any(np.diff(s) <= 0):
            raise ValueError("partition boundaries must be increasing and start at 0")

    @property
    def npartitions(self) -> int:
        return len(self.starts) - 1

    @property
    def nrows(self) -> int:
        return int(self.starts[-1])

    def partition_of(self) -> np.ndarray:
        out = np.empty(self.nrows, dtype=np.int32)
        for p in range(self.npartitions):
            out[self.starts[p]:self.starts[p + 1]] = p
        return out

    @classmethod
    def contiguous(cls, n: int, nparts: int, align: int = 1) -> "PartitionSet":
        """Near-equal contiguous ranges; boundaries snapped to `align`."""
        nparts = max(1, min(nparts, max(1, n // max(align, 1))))
        bounds = np.linspace(0, n, nparts + 1)
        bounds = np.round(bounds / align).astype(np.int64) * align
        bounds[0], bounds[-1] = 0, n
        bounds = np.unique(bounds)
        return cls(bounds)


def _single_partition(n: int) -> PartitionSet:
    return PartitionSet(np.array([0, n]))


def jacobi_sweep(A: CsrMatrix, dinv: np.ndarray, b: np.ndarray, x: np.ndarray,
                 damping: float = 1.0) -> np.ndarray:
    """x' = x + damping * Dinv (b - A x)."""
    if len(b) != A.nrows or len(x) != A.ncols:
        raise ValueError("jacobi_sweep dimension mismatch")
    return x + damping * dinv * (b - A.to_scipy() @ x)


def offpart_abs_rowsum(A: CsrMatrix, parts: PartitionSet) -> np.ndarray:
    """Per row, sum of |A[i, j]| over columns outside the row's partition."""
    rows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_offsets))
    part_of_row = np.searchsorted(parts.starts, rows, side="right") - 1
    lo = parts.starts[part_of_row]
    hi = parts.starts[part_of_row + 1]
    off = (A.col_indices < lo) | (A.col_indices >= hi)
    return np.bincount(rows[off], weights=np.abs(A.values[off]), minlength=A.nrows)


def l1_diagonal(A: CsrMatrix, parts: PartitionSet) -> np.ndarray:
    """d_i = A[i,i] + sum of off-partition |A[i,j]|."""
    d = A.diagonal() + offpart_abs_rowsum(A, parts)
    bad = np.flatnonzero(d == 0.0)
    if len(bad):
        raise ValueError(f"l1 diagonal vanishes at row {int(bad[0])}")
    return d


def l1_gs_sweep(A: CsrMatrix, b: np.ndarray, x: np.ndarray, direction: str = "forward",
                parts: PartitionSet | None = None, dtilde: np.ndarray | None = None) -> np.ndarray:
    """One hybrid l1-Gauss-Seidel sweep; returns the updated vector."""
    if A.nrows != A.ncols:
        raise ValueError("l1_gs_sweep requires a square matrix")
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    if parts is None:
        parts = _single_partition(A.nrows)
    if dtilde is None:
        dtilde = l1_diagonal(A, parts)
    out = np.array(x, dtype=np.float64, copy=True)
    _kernels.l1_gs_kernel(A.row_offsets, A.col_indices, A.values, parts.starts,
                          dtilde, np.asarray(b, dtype=np.float64), out,
                          direction == "forward")
    return out


def hbgs_sweeps(A: CsrMatrix, layout: FieldLayout, b: np.ndarray, x: np.ndarray,
                nsweeps: int, parts: PartitionSet | None = None,
                direction: str = "forward") -> np.ndarray:
    """Hybrid block Gauss-Seidel over per-cell 2x2 (s, p) blocks.

    The l1 compensation adds each row's off-partition absolute sum to the
    corresponding diagonal entry of its 2x2 block.
    """
    if layout.ordering != Ordering.FLOW_INTERLEAVED:
        raise ValueError("hbgs_sweeps requires an interleaved flow layout")
    if layout.ndofs != A.nrows:
        raise ValueError("layout does not match matrix")
    if parts is None:
        parts = _single_partition(A.nrows)
    s = np.flatnonzero(layout.field_of == Field.S)
    s = s[np.argsort(layout.entity_of[s], kind="stable")].astype(np.int64)
    p = np.flatnonzero(layout.field_of == Field.P)
    p = p[np.argsort(layout.entity_of[p], kind="stable")].astype(np.int64)
    add = offpart_abs_rowsum(A, parts)
    out = np.array(x, dtype=np.float64, copy=True)
    bb = np.asarray(b, dtype=np.float64)
    for _ in range(nsweeps):
        bad = _kernels.hbgs_kernel(A.row_offsets, A.col_indices, A.values, parts.starts,
                                   add, bb, out, s, p, direction == "forward")
        if bad >= 0:
            raise ValueError(f"singular 2x2 diagonal block at cell {int(layout.entity_of[s[bad]])}")
    return out


@dataclass(frozen=True)
class IluFactors:
    """Combined L\\U storage: unit lower implicit, U holds the diagonal."""

    lu: CsrMatrix
    diag_pos: np.ndarray
    levels: np.ndarray
    fill_level: int

    @property
    def n(self) -> int:
        return self.lu.nrows


def ilu_factor(A: CsrMatrix, k: int, zero_pivot_shift: float | None = None) -> IluFactors:
    """ILU(k): symbolic level-of-fill pattern, then IKJ elimination on it.

    No pivoting. On a zero pivot, raises ZeroPivotError unless
    zero_pivot_shift is given, in which case the factorization is retried
    once on A + shift*max|diag|*I.
    """
    if A.nrows != A.ncols:
        raise ValueError("ilu_factor requires a square matrix")
    if k < 0:
        raise ValueError("fill level must be >= 0")
    n = A.nrows
    luptr, luind, lulev, dpos = _kernels.iluk_symbolic(n, A.row_offsets, A.col_indices, k)
    ludata, fail = _kernels.iluk_numeric(n, A.row_offsets, A.col_indices, A.values,
                                         luptr, luind, dpos)
    if fail >= 0:
        if zero_pivot_shift is None:
            raise ZeroPivotError(fail)
        shift = zero_pivot_shift * max(np.max(np.abs(A.diagonal())), 1.0)
        shifted = CsrMatrix.from_scipy(A.to_scipy() + shift * _speye(n))
        luptr, luind, lulev, dpos = _kernels.iluk_symbolic(n, shifted.row_offsets,
                                                           shifted.col_indices, k)
        ludata, fail = _kernels.iluk_numeric(n, shifted.row_offsets, shifted.col_indices,
                                             shifted.values, luptr, luind, dpos)
        if fail >= 0:
            raise ZeroPivotError(fail)
    lu = CsrMatrix(n, n, luptr, luind, ludata)
    return IluFactors(lu, dpos.astype(np.int64), lulev, k)


def _speye(n):
    import scipy.sparse as sp

    return sp.identity(n, format="csr")


def ilu_solve(factors: IluFactors, r: np.ndarray) -> np.ndarray:
    """z = U^-1 (L^-1 r) by forward then backward substitution."""
    r = np.asarray(r, dtype=np.float64)
    if len(r) != factors.n:
        raise ValueError("ilu_solve dimension mismatch")
    return _kernels.ilu_solve_kernel(factors.n, factors.lu.row_offsets, factors.lu.col_indices,
                                     factors.lu.values, factors.diag_pos, r)


def restrict_to_partitions(A: CsrMatrix, parts: PartitionSet) -> CsrMatrix:
    """Drop couplings crossing partition boundaries (processor-local view)."""
    rows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_offsets))
    part_of_row = np.searchsorted(parts.starts, rows, side="right") - 1
    lo = parts.starts[part_of_row]
    hi = parts.starts[part_of_row + 1]
    keep = (A.col_indices >= lo) & (A.col_indices < hi)
    kept = np.flatnonzero(keep)
    ro = np.concatenate([[0], np.cumsum(np.bincount(rows[kept], minlength=A.nrows))])
    return CsrMatrix(A.nrows, A.ncols, ro, A.col_indices[kept], A.values[kept])
