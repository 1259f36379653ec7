"""Multigrid reduction preconditioning for coupled block systems.

Each level labels whole physical fields as F (reduced away) or C (kept),
builds interpolation/restriction with identity on the C block, relaxes the
F sub-system, optionally smooths globally, and hands a (possibly sparsified,
non-Galerkin) coarse operator to the next level. The final coarse grid is
solved with classical AMG V-cycles or a dense factorization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .amg import AmgConfig, AmgHierarchy, amg_setup, amg_vcycle
from .smoothers import PartitionSet, hbgs_sweeps, ilu_factor, ilu_solve, restrict_to_partitions
from .sparse import (
    CfSplitting,
    CsrMatrix,
    Field,
    FieldLayout,
    diag_inverse,
    extract_blocks,
    gather_entries,
    reassemble_blocks,
    sparsify,
    spgemm,
    subtract,
    triple_product,
)

__all__ = [
    "MgrLevelSpec",
    "MgrConfig",
    "MgrHierarchy",
    "build_transfers",
    "build_coarse",
    "mgr_setup",
    "mgr_apply",
]

logger = logging.getLogger(__name__)

_INTERP_MODES = ("injection_only", "injection_jacobi", "ideal")
_RESTRICT_MODES = ("injection", "jacobi", "ideal")
_F_RELAX_MODES = ("none", "jacobi", "amg", "exact")
_GLOBAL_SMOOTHERS = ("none", "hbgs", "ilu")


@dataclass(frozen=True)
class MgrLevelSpec:
    """One reduction level: which fields are eliminated and with what."""

    f_fields: frozenset
    c_fields: frozenset
    interp: str = "injection_jacobi"
    restrict: str = "injection"
    f_relax: str = "jacobi"
    f_relax_sweeps: int = 1
    global_smoother: str = "none"
    hbgs_sweeps: int = 3
    ilu_fill: int = 1
    n_max: int | None = None  # None disables dropping
    quasi_impes: bool = False

    def __post_init__(self):
        object.__setattr__(self, "f_fields", frozenset(Field(f) for f in self.f_fields))
        object.__setattr__(self, "c_fields", frozenset(Field(f) for f in self.c_fields))
        if self.f_fields & self.c_fields:
            raise ValueError("f_fields and c_fields must be disjoint")
        if self.interp not in _INTERP_MODES:
            raise ValueError(f"unknown interp mode {self.interp!r}")
        if self.restrict not in _RESTRICT_MODES:
            raise ValueError(f"unknown restrict mode {self.restrict!r}")
        if self.f_relax not in _F_RELAX_MODES:
            raise ValueError(f"unknown f_relax {self.f_relax!r}")
        if self.global_smoother not in _GLOBAL_SMOOTHERS:
            raise ValueError(f"unknown global smoother {self.global_smoother!r}")
        if self.n_max is not None and self.n_max < 0:
            raise ValueError("n_max must be >= 0")


@dataclass(frozen=True)
class MgrConfig:
    levels: tuple
    terminal: str = "amg"  # "amg" | "exact"
    terminal_cycles: int = 1
    amg_f_relax: AmgConfig = field(default_factory=lambda: AmgConfig(strength_threshold=0.5, num_functions=3))
    amg_terminal: AmgConfig = field(default_factory=lambda: AmgConfig(strength_threshold=0.25))
    npartitions: int = 1
    ideal_size_cap: int = 2000
    f_relax_position: str = "pre"  # "pre" | "post"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if self.terminal not in ("amg", "exact"):
            raise ValueError(f"unknown terminal solver {self.terminal!r}")
        if self.f_relax_position not in ("pre", "post"):
            raise ValueError("f_relax_position must be 'pre' or 'post'")

    @classmethod
    def default_three_level(cls, n_max: int = 4, global_smoother: str = "ilu",
                            hbgs_sweeps: int = 3, ilu_fill: int = 1,
                            quasi_impes: bool = False, npartitions: int = 1,
                            terminal_cycles: int = 1) -> "MgrConfig":
        """The u -> s -> p reduction: displacements eliminated first with an
        AMG V-cycle F-relaxation, then saturations with Jacobi, pressure
        solved by scalar AMG."""
        lvl1 = MgrLevelSpec(
            f_fields={Field.U}, c_fields={Field.S, Field.P},
            interp="injection_jacobi", restrict="injection",
            f_relax="amg", global_smoother="none", n_max=n_max)
        lvl2 = MgrLevelSpec(
            f_fields={Field.S}, c_fields={Field.P},
            interp="injection_jacobi", restrict="injection",
            f_relax="jacobi", f_relax_sweeps=1,
            global_smoother=global_smoother, hbgs_sweeps=hbgs_sweeps,
            ilu_fill=ilu_fill, n_max=None, quasi_impes=quasi_impes)
        return cls(levels=(lvl1, lvl2), terminal="amg", terminal_cycles=terminal_cycles,
                   npartitions=npartitions)


# ---------------------------------------------------------------------------
# transfer operators
# ---------------------------------------------------------------------------


def build_transfers(blocks, split: CfSplitting, spec: MgrLevelSpec,
                    size_cap: int = 2000):
    """Interpolation P (n x n_c) and restriction R (n_c x n) in the level's
    original dof ordering, identity on the C block.

    injection_jacobi uses W_p = -D_FF^-1 A_FC; jacobi restriction uses
    W_r = -A_CF D_FF^-1; ideal modes invert A_FF densely (test scale only).
    """
    a_ff, a_fc, a_cf, a_cc = blocks
    n_f, n_c = a_ff.nrows, a_cc.nrows
    n = n_f + n_c
    f_rows = split.f_rows()
    c_rows = split.c_rows()

    if spec.interp == "ideal" or spec.restrict == "ideal":
        if n_f > size_cap:
            raise ValueError(f"ideal transfers refused for {n_f} F rows (cap {size_cap})")
        ff_dense = a_ff.to_dense()

    # W_p (n_f x n_c)
    if spec.interp == "injection_only":
        wp = None
    elif spec.interp == "injection_jacobi":
        dinv = diag_inverse(a_ff)
        wp = _scale_rows(a_fc, -dinv)
    else:
        wp = CsrMatrix.from_dense(-np.linalg.solve(ff_dense, a_fc.to_dense()))

    # W_r (n_c x n_f)
    if spec.restrict == "injection":
        wr = None
    elif spec.restrict == "jacobi":
        dinv = diag_inverse(a_ff)
        wr = _scale_cols(a_cf, -dinv)
    else:
        wr = CsrMatrix.from_dense(-np.linalg.solve(ff_dense.T, a_cf.to_dense().T).T)

    prow = [c_rows]
    pcol = [np.arange(n_c)]
    pval = [np.ones(n_c)]
    if wp is not None and wp.nnz:
        e_rows = np.repeat(np.arange(n_f), np.diff(wp.row_offsets))
        prow.append(f_rows[e_rows])
        pcol.append(wp.col_indices)
        pval.append(wp.values)
    P = CsrMatrix.from_coo(n, n_c, np.concatenate(prow), np.concatenate(pcol), np.concatenate(pval))

    rrow = [np.arange(n_c)]
    rcol = [c_rows]
    rval = [np.ones(n_c)]
    if wr is not None and wr.nnz:
        e_rows = np.repeat(np.arange(n_c), np.diff(wr.row_offsets))
        rrow.append(e_rows)
        rcol.append(f_rows[wr.col_indices])
        rval.append(wr.values)
    R = CsrMatrix.from_coo(n_c, n, np.concatenate(rrow), np.concatenate(rcol), np.concatenate(rval))
    return P, R


def _scale_rows(A: CsrMatrix, s: np.ndarray) -> CsrMatrix:
    rows = np.repeat(np.arange(A.nrows), np.diff(A.row_offsets))
    return CsrMatrix(A.nrows, A.ncols, A.row_offsets, A.col_indices, A.values * s[rows])


def _scale_cols(A: CsrMatrix, s: np.ndarray) -> CsrMatrix:
    return CsrMatrix(A.nrows, A.ncols, A.row_offsets, A.col_indices, A.values * s[A.col_indices])


def _diagonal_part(A: CsrMatrix) -> CsrMatrix:
    if A.nrows != A.ncols:
        raise ValueError("quasi-IMPES needs a square coupling block")
    d = A.diagonal()
    idx = np.arange(A.nrows)
    return CsrMatrix(A.nrows, A.ncols, np.arange(A.nrows + 1), idx, d)


# ---------------------------------------------------------------------------
# coarse operator
# ---------------------------------------------------------------------------


def build_coarse(A: CsrMatrix, layout: FieldLayout, split: CfSplitting, blocks,
                 P: CsrMatrix, R: CsrMatrix, spec: MgrLevelSpec):
    """Coarse operator R A P, optionally with quasi-IMPES decoupling of the
    C-F block and row-wise dropping of the reduction correction term.

    With dropping on, the correction A_CC - RAP is sparsified (keeping
    sub-block diagonals and the n_max largest entries per row) and
    subtracted back from A_CC, yielding a non-Galerkin coarse grid.
    """
    a_ff, a_fc, a_cf, a_cc = blocks
    a_used = A
    if spec.quasi_impes:
        a_used = reassemble_blocks((a_ff, a_fc, _diagonal_part(a_cf), a_cc), split)
    T = triple_product(R, a_used, P)
    if spec.n_max is None:
        return T
    layout_c = layout.restrict(split.c_rows())
    correction = subtract(a_cc, T)
    kept = sparsify(correction, layout_c, spec.n_max)
    return subtract(a_cc, kept)


# ---------------------------------------------------------------------------
# F-relaxation and global smoothers
# ---------------------------------------------------------------------------


class _JacobiFRelax:
    def __init__(self, a_ff: CsrMatrix, nsweeps: int):
        self.dinv = diag_inverse(a_ff)
        self.a_ff = a_ff
        self.nsweeps = max(1, nsweeps)

    def apply(self, r: np.ndarray) -> np.ndarray:
        x = self.dinv * r
        sA = self.a_ff.to_scipy()
        for _ in range(self.nsweeps - 1):
            x = x + self.dinv * (r - sA @ x)
        return x


class _AmgFRelax:
    def __init__(self, a_ff: CsrMatrix, cfg: AmgConfig, ncycles: int):
        self.hierarchy = amg_setup(a_ff, cfg)
        self.ncycles = max(1, ncycles)

    def apply(self, r: np.ndarray) -> np.ndarray:
        x = np.zeros(len(r))
        for _ in range(self.ncycles):
            x = amg_vcycle(self.hierarchy, r, x)
        return x


class _ExactFRelax:
    def __init__(self, a_ff: CsrMatrix, size_cap: int):
        if a_ff.nrows > size_cap:
            raise ValueError(f"exact F-solve refused for {a_ff.nrows} rows (cap {size_cap})")
        self.lu = scipy.linalg.lu_factor(a_ff.to_dense())

    def apply(self, r: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self.lu, r)


class _IluGlobal:
    def __init__(self, A: CsrMatrix, fill: int, parts: PartitionSet):
        local = restrict_to_partitions(A, parts) if parts.npartitions > 1 else A
        self.factors = ilu_factor(local, fill, zero_pivot_shift=1e-8)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return ilu_solve(self.factors, v)


class _HbgsGlobal:
    def __init__(self, A: CsrMatrix, layout: FieldLayout, nsweeps: int, parts: PartitionSet):
        self.A = A
        self.layout = layout
        self.nsweeps = nsweeps
        self.parts = parts

    def apply(self, v: np.ndarray) -> np.ndarray:
        return hbgs_sweeps(self.A, self.layout, v, np.zeros(len(v)), self.nsweeps, self.parts)


# ---------------------------------------------------------------------------
# hierarchy
# ---------------------------------------------------------------------------


@dataclass
class _MgrLevel:
    A: CsrMatrix
    layout: FieldLayout
    split: CfSplitting
    blocks: tuple
    P: CsrMatrix
    R: CsrMatrix
    f_relax: object
    global_smoother: object
    spec: MgrLevelSpec


@dataclass
class MgrHierarchy:
    levels: list
    terminal_A: CsrMatrix
    terminal_kind: str
    terminal_solver: object  # AmgHierarchy or dense LU factors
    terminal_cycles: int
    f_relax_position: str

    def apply(self, v: np.ndarray) -> np.ndarray:
        return mgr_apply(self, v)

    def level_sizes(self):
        return [lev.A.nrows for lev in self.levels] + [self.terminal_A.nrows]


def mgr_setup(A: CsrMatrix, layout: FieldLayout, config: MgrConfig) -> MgrHierarchy:
    """Build the reduction hierarchy for operator A laid out by `layout`."""
    if A.nrows != A.ncols:
        raise ValueError("mgr_setup requires a square matrix")
    if layout.ndofs != A.nrows:
        raise ValueError("layout does not match the matrix")
    current, cur_layout = A, layout
    levels = []
    for spec in config.levels:
        present = cur_layout.fields_present()
        if spec.f_fields | spec.c_fields != present:
            raise ValueError(
                f"level spec fields {sorted(f.name for f in spec.f_fields | spec.c_fields)} "
                f"do not cover the fields present {sorted(f.name for f in present)}")
        if not spec.c_fields:
            raise ValueError("empty C set: nothing to reduce onto")
        is_c = np.isin(cur_layout.field_of, [int(f) for f in spec.c_fields])
        split = CfSplitting(is_c)
        if split.n_f == 0:
            # reduction-free limit: only meaningful for a scalar terminal grid
            if len(present) != 1:
                raise ValueError("an all-C level requires a single remaining field")
            logger.info("all-C level: skipping reduction, solving directly with AMG")
            break
        blocks = extract_blocks(current, split)
        P, R = build_transfers(blocks, split, spec, config.ideal_size_cap)
        f_relax = _build_f_relax(blocks[0], spec, config)
        smoother = _build_global_smoother(current, cur_layout, spec, config)
        coarse = build_coarse(current, cur_layout, split, blocks, P, R, spec)
        levels.append(_MgrLevel(current, cur_layout, split, blocks, P, R, f_relax, smoother, spec))
        cur_layout = cur_layout.restrict(split.c_rows())
        current = coarse
    if len(cur_layout.fields_present()) > 1:
        logger.warning("terminal MGR grid carries %d fields; AMG works best on a single elliptic field",
                       len(cur_layout.fields_present()))
    if config.terminal == "exact":
        if current.nrows > config.ideal_size_cap:
            raise ValueError(f"exact terminal solve refused for {current.nrows} rows")
        solver = scipy.linalg.lu_factor(current.to_dense())
    else:
        solver = amg_setup(current, config.amg_terminal)
    return MgrHierarchy(levels, current, config.terminal, solver,
                        max(1, config.terminal_cycles), config.f_relax_position)


def _build_f_relax(a_ff: CsrMatrix, spec: MgrLevelSpec, config: MgrConfig):
    if spec.f_relax == "none":
        return None
    if spec.f_relax == "jacobi":
        return _JacobiFRelax(a_ff, spec.f_relax_sweeps)
    if spec.f_relax == "exact":
        return _ExactFRelax(a_ff, config.ideal_size_cap)
    cfg = config.amg_f_relax
    if spec.f_fields == {Field.U}:
        cfg = replace(cfg, num_functions=3)
    else:
        cfg = replace(cfg, num_functions=1)
    return _AmgFRelax(a_ff, cfg, spec.f_relax_sweeps)


def _build_global_smoother(A: CsrMatrix, layout: FieldLayout, spec: MgrLevelSpec,
                           config: MgrConfig):
    if spec.global_smoother == "none":
        return None
    parts = PartitionSet.contiguous(A.nrows, config.npartitions, align=2)
    if spec.global_smoother == "ilu":
        return _IluGlobal(A, spec.ilu_fill, parts)
    return _HbgsGlobal(A, layout, spec.hbgs_sweeps, parts)


def mgr_apply(h: MgrHierarchy, v: np.ndarray) -> np.ndarray:
    """z = M^-1 v: per level, optional global relaxation, F-relaxation,
    restriction of the residual, recursion, and prolongated correction."""
    return _apply_level(h, 0, np.asarray(v, dtype=np.float64))


def _apply_level(h: MgrHierarchy, l: int, v: np.ndarray) -> np.ndarray:
    if l == len(h.levels):
        return _terminal_solve(h, v)
    lev = h.levels[l]
    sA = lev.A.to_scipy()
    f_rows = lev.split.f_rows()
    z = None
    if lev.global_smoother is not None:
        z = lev.global_smoother.apply(v)
    if h.f_relax_position == "pre" and lev.f_relax is not None:
        if z is None:
            z = np.zeros(len(v))
            r = v
        else:
            r = v - sA @ z
        z[f_rows] += lev.f_relax.apply(r[f_rows])
    r = v - sA @ z if z is not None else v
    rc = lev.R.to_scipy() @ r
    ec = _apply_level(h, l + 1, rc)
    corr = lev.P.to_scipy() @ ec
    z = corr if z is None else z + corr
    if h.f_relax_position == "post" and lev.f_relax is not None:
        r = v - sA @ z
        z[f_rows] += lev.f_relax.apply(r[f_rows])
    return z


def _terminal_solve(h: MgrHierarchy, v: np.ndarray) -> np.ndarray:
    if h.terminal_kind == "exact":
        return scipy.linalg.lu_solve(h.terminal_solver, v)
    e = np.zeros(len(v))
    for _ in range(h.terminal_cycles):
        e = amg_vcycle(h.terminal_solver, v, e)
    return e
