"""Classical algebraic multigrid: unknown-based strength of connection,
greedy independent-set coarsening, direct interpolation, Galerkin coarse
grids, and a V(1,1) cycle with hybrid l1-Gauss-Seidel smoothing (forward on
the way down, backward on the way up) and a dense direct solve on the
coarsest level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from .smoothers import PartitionSet, l1_diagonal, l1_gs_sweep
from .sparse import CfSplitting, CsrMatrix

__all__ = [
    "AmgConfig",
    "AmgHierarchy",
    "strength_graph",
    "cf_coarsen",
    "direct_interpolation",
    "amg_setup",
    "amg_vcycle",
]

logger = logging.getLogger(__name__)

_DENSE_SOLVE_CAP = 20000


@dataclass(frozen=True)
class AmgConfig:
    strength_threshold: float = 0.25
    max_levels: int = 25
    coarse_size_cutoff: int = 64
    num_functions: int = 1  # 3 for node-blocked displacement systems
    npartitions: int = 1
    cycles: int = 1

    def __post_init__(self):
        if not 0.0 <= self.strength_threshold < 1.0:
            raise ValueError("strength_threshold must be in [0, 1)")
        if self.coarse_size_cutoff < 1:
            raise ValueError("coarse_size_cutoff must be >= 1")


@dataclass
class _Level:
    A: CsrMatrix
    P: CsrMatrix
    split: CfSplitting
    dtilde: np.ndarray
    parts: PartitionSet


@dataclass
class AmgHierarchy:
    levels: list
    coarse_A: CsrMatrix
    coarse_lu: tuple
    config: AmgConfig
    flagged_f_rows: int = 0

    def level_sizes(self):
        return [lev.A.nrows for lev in self.levels] + [self.coarse_A.nrows]


def _strength_mask(A: CsrMatrix, theta: float, functions: np.ndarray) -> np.ndarray:
    """Boolean mask over A's stored entries: j strongly influences i."""
    rows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_offsets))
    cols = A.col_indices
    cand = (cols != rows) & (functions[cols] == functions[rows])
    neg = -A.values
    rowmax = np.zeros(A.nrows)
    if cand.any():
        np.maximum.at(rowmax, rows[cand], neg[cand])
    return cand & (A.values < 0.0) & (rowmax[rows] > 0.0) & (neg >= theta * rowmax[rows])


def _functions_array(A: CsrMatrix, num_functions: int, functions) -> np.ndarray:
    if functions is not None:
        return np.ascontiguousarray(functions, dtype=np.int32)
    return (np.arange(A.nrows, dtype=np.int32) % num_functions).astype(np.int32)


def strength_graph(A: CsrMatrix, theta: float, num_functions: int = 1,
                   functions=None) -> CsrMatrix:
    """Strong-influence pattern: -A[i,j] >= theta * max_k(-A[i,k]), taken
    over same-function connections; rows without negative off-diagonals
    have no strong connections."""
    if A.nrows != A.ncols:
        raise ValueError("strength_graph requires a square matrix")
    mask = _strength_mask(A, theta, _functions_array(A, num_functions, functions))
    kept = np.flatnonzero(mask)
    rows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_offsets))
    ro = np.concatenate([[0], np.cumsum(np.bincount(rows[kept], minlength=A.nrows))])
    return CsrMatrix(A.nrows, A.ncols, ro, A.col_indices[kept], np.ones(len(kept)))


def cf_coarsen(S: CsrMatrix) -> CfSplitting:
    """Greedy maximal independent set on the symmetrized strength graph.

    Vertices are visited by descending measure (number of points they
    strongly influence), ties by smaller index; a selected vertex becomes C
    and its undecided symmetrized neighbors become F.
    """
    n = S.nrows
    measure = np.bincount(S.col_indices, minlength=n)
    order = np.lexsort((np.arange(n), -measure)).astype(np.int64)
    s = S.to_scipy().astype(bool)
    adj = (s + s.T).tocsr()
    adj.sort_indices()
    status = _kernels.greedy_mis_kernel(n, order, adj.indptr.astype(np.int64),
                                        adj.indices.astype(np.int32))
    return CfSplitting(status == 1)


def direct_interpolation(A: CsrMatrix, S: CsrMatrix, split: CfSplitting,
                         num_functions: int = 1, functions=None) -> CsrMatrix:
    """Classical direct interpolation.

    C rows are identity. An F row i interpolates from its strong C
    neighbors j with weights
        w_ij = -(sum_k A[i,k] / sum_{j in Cs_i} A[i,j]) * A[i,j] / A[i,i],
    sums over the same-function neighborhood. F rows with no strong C
    neighbor interpolate as zero (flagged via the module logger).
    """
    n = A.nrows
    funcs = _functions_array(A, num_functions, functions)
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(A.row_offsets))
    cols = A.col_indices.astype(np.int64)
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise ValueError("direct interpolation requires nonzero diagonals")
    offd = (cols != rows) & (funcs[cols] == funcs[rows])
    sum_n = np.bincount(rows[offd], weights=A.values[offd], minlength=n)
    strong = _pattern_mask(A, S)
    strong_c = strong & split.is_c[cols]
    sum_c = np.bincount(rows[strong_c], weights=A.values[strong_c], minlength=n)

    prows = []
    pcols = []
    pvals = []
    c_rows = split.c_rows()
    prows.append(c_rows)
    pcols.append(split.c_index[c_rows])
    pvals.append(np.ones(len(c_rows)))

    ok_rows = (~split.is_c) & (sum_c != 0.0)
    entry_ok = strong_c & ok_rows[rows]
    e = np.flatnonzero(entry_ok)
    alpha = np.zeros(n)
    alpha[ok_rows] = sum_n[ok_rows] / sum_c[ok_rows]
    prows.append(rows[e])
    pcols.append(split.c_index[cols[e]])
    pvals.append(-alpha[rows[e]] * A.values[e] / diag[rows[e]])

    n_flagged = int(np.sum((~split.is_c) & ~ok_rows))
    if n_flagged:
        logger.warning("%d F rows have no strong C neighbor; interpolating as zero", n_flagged)

    P = CsrMatrix.from_coo(n, split.n_c, np.concatenate(prows),
                           np.concatenate(pcols), np.concatenate(pvals))
    return P


def _pattern_mask(A: CsrMatrix, S: CsrMatrix) -> np.ndarray:
    """Mask over A's entries that are also present in S's pattern."""
    arows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_offsets))
    srows = np.repeat(np.arange(S.nrows, dtype=np.int64), np.diff(S.row_offsets))
    akey = arows * A.ncols + A.col_indices
    skey = srows * S.ncols + S.col_indices
    pos = np.searchsorted(skey, akey)
    ok = pos < len(skey)
    out = np.zeros(len(akey), dtype=bool)
    out[ok] = skey[pos[ok]] == akey[ok]
    return out


def amg_setup(A: CsrMatrix, cfg: AmgConfig) -> AmgHierarchy:
    """Build strength -> coarsen -> interpolate -> Galerkin recursively until
    the operator is small enough for a dense direct solve."""
    if A.nrows != A.ncols:
        raise ValueError("amg_setup requires a square matrix")
    levels = []
    funcs = (np.arange(A.nrows, dtype=np.int32) % cfg.num_functions).astype(np.int32)
    flagged = 0
    current = A
    while current.nrows > cfg.coarse_size_cutoff and len(levels) < cfg.max_levels - 1:
        S = strength_graph(current, cfg.strength_threshold, functions=funcs)
        split = cf_coarsen(S)
        if split.n_c == current.nrows:
            # coarsening stagnated: truncate and solve this level directly
            break
        P = direct_interpolation(current, S, split, functions=funcs)
        sc = current.to_scipy()
        sp_P = P.to_scipy()
        nxt = CsrMatrix.from_scipy((sp_P.T @ sc @ sp_P).tocsr())
        parts = PartitionSet.contiguous(current.nrows, cfg.npartitions)
        dtilde = l1_diagonal(current, parts)
        levels.append(_Level(current, P, split, dtilde, parts))
        funcs = funcs[split.c_rows()]
        current = nxt
    if current.nrows > _DENSE_SOLVE_CAP:
        raise RuntimeError(f"coarsest AMG level of size {current.nrows} is too large for a dense solve")
    lu = scipy.linalg.lu_factor(current.to_dense())
    return AmgHierarchy(levels, current, lu, cfg, flagged)


def amg_vcycle(h: AmgHierarchy, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One V(1,1) cycle: forward l1-GS down, backward l1-GS up, dense
    direct solve on the coarsest level."""
    return _cycle(h, 0, np.asarray(b, dtype=np.float64), np.asarray(x, dtype=np.float64))


def _cycle(h: AmgHierarchy, l: int, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    if l == len(h.levels):
        r = b - h.coarse_A.to_scipy() @ x if np.any(x) else b
        return x + scipy.linalg.lu_solve(h.coarse_lu, r)
    lev = h.levels[l]
    sA = lev.A.to_scipy()
    x = l1_gs_sweep(lev.A, b, x, "forward", lev.parts, lev.dtilde)
    r = b - sA @ x
    sp_P = lev.P.to_scipy()
    e = _cycle(h, l + 1, sp_P.T @ r, np.zeros(lev.P.ncols))
    x = x + sp_P @ e
    return l1_gs_sweep(lev.A, b, x, "backward", lev.parts, lev.dtilde)
