"""Classical AMG: strength, coarsening, interpolation, V-cycle."""

import numpy as np
import pytest

from common import laplacian_1d, laplacian_2d
from poromgr.amg import (
    AmgConfig,
    amg_setup,
    amg_vcycle,
    cf_coarsen,
    direct_interpolation,
    strength_graph,
)
from poromgr.krylov import GmresConfig, gmres
from poromgr.sparse import CfSplitting, CsrMatrix, matvec


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def strength_oracle(D, theta, functions=None):
    n = D.shape[0]
    if functions is None:
        functions = np.zeros(n, dtype=int)
    S = np.zeros((n, n), dtype=bool)
    for i in range(n):
        cand = [j for j in range(n) if j != i and functions[j] == functions[i] and D[i, j] != 0.0]
        neg = [-D[i, j] for j in cand]
        if not neg or max(neg) <= 0:
            continue
        t = theta * max(neg)
        for j in cand:
            if D[i, j] < 0 and -D[i, j] >= t:
                S[i, j] = True
    return S


def greedy_replay_oracle(S):
    """Replay of the greedy rule: descending measure (columns of S), ties by
    smaller index; selected vertex -> C, undecided symmetrized neighbors -> F."""
    n = S.shape[0]
    measure = S.sum(axis=0)
    order = sorted(range(n), key=lambda v: (-measure[v], v))
    adj = S | S.T
    status = np.zeros(n, dtype=int)
    for v in order:
        if status[v] == 0:
            status[v] = 1
            for u in np.flatnonzero(adj[v]):
                if status[u] == 0:
                    status[u] = 2
    return status == 1


def setup_replay_oracle(D, theta, cutoff, max_levels=25):
    """Expected level sizes from replaying strength+greedy coarsening."""
    sizes = [D.shape[0]]
    while sizes[-1] > cutoff and len(sizes) < max_levels:
        S = strength_oracle(D, theta)
        isc = greedy_replay_oracle(S)
        if isc.sum() == len(isc):
            break
        # direct-interpolation replay is not needed for sizes: coarse size = |C|
        c = np.flatnonzero(isc)
        sizes.append(len(c))
        # Galerkin via the real interpolation formula
        P = interpolation_oracle(D, S, isc)
        D = P.T @ D @ P
    return sizes


def interpolation_oracle(D, S, isc):
    n = D.shape[0]
    c = np.flatnonzero(isc)
    cidx = {j: t for t, j in enumerate(c)}
    P = np.zeros((n, len(c)))
    for i in range(n):
        if isc[i]:
            P[i, cidx[i]] = 1.0
            continue
        cs = [j for j in np.flatnonzero(S[i]) if isc[j]]
        denom = sum(D[i, j] for j in cs)
        if not cs or denom == 0.0:
            continue
        num = sum(D[i, j] for j in range(n) if j != i and D[i, j] != 0.0)
        for j in cs:
            P[i, cidx[j]] = -(num / denom) * D[i, j] / D[i, i]
    return P


# ---------------------------------------------------------------------------
# strength graph
# ---------------------------------------------------------------------------


def test_strength_diagonal_matrix_empty():
    A = CsrMatrix.from_dense(np.diag([1.0, 2.0, 3.0]))
    assert strength_graph(A, 0.25).nnz == 0


def test_strength_1d_laplacian_all_neighbors_strong():
    A = laplacian_1d(6)
    S = strength_graph(A, 0.25)
    want = strength_oracle(A.to_dense(), 0.25)
    assert np.array_equal(S.to_dense() != 0, want)
    for i in range(1, 5):
        assert set(S.row_pattern(i)) == {i - 1, i + 1}


def test_strength_anisotropic_only_x_neighbors():
    A = laplacian_2d(5, eps_y=0.01)
    S = strength_graph(A, 0.25)
    want = strength_oracle(A.to_dense(), 0.25)
    assert np.array_equal(S.to_dense() != 0, want)
    # interior point: only x neighbors are strong
    i = 2 * 5 + 2
    assert set(S.row_pattern(i)) == {i - 1, i + 1}


def test_strength_positive_offdiagonals_ignored():
    D = np.array([[2.0, 1.0, -1.0], [1.0, 2.0, 0.0], [-1.0, 0.0, 2.0]])
    S = strength_graph(CsrMatrix.from_dense(D), 0.25)
    assert set(S.row_pattern(0)) == {2}
    assert len(S.row_pattern(1)) == 0


def test_strength_unknown_based_blocks_cross_function():
    # 2 functions interleaved by dof parity: cross-function couplings never strong
    rng = np.random.default_rng(0)
    D = -np.abs(rng.random((6, 6))) + 7 * np.eye(6)
    A = CsrMatrix.from_dense(D)
    S = strength_graph(A, 0.0, num_functions=2)
    rows = np.repeat(np.arange(6), np.diff(S.row_offsets))
    assert np.all((rows % 2) == (S.col_indices % 2))
    want = strength_oracle(D, 0.0, functions=np.arange(6) % 2)
    assert np.array_equal(S.to_dense() != 0, want)


# ---------------------------------------------------------------------------
# coarsening
# ---------------------------------------------------------------------------


def test_coarsen_empty_graph_all_c():
    A = CsrMatrix.from_dense(np.diag([1.0, 2.0, 3.0]))
    split = cf_coarsen(strength_graph(A, 0.25))
    assert split.n_c == 3


def test_coarsen_1d_laplacian_alternating():
    A = laplacian_1d(9)
    S = strength_graph(A, 0.25)
    split = cf_coarsen(S)
    want = greedy_replay_oracle(S.to_dense() != 0)
    assert np.array_equal(split.is_c, want)
    assert np.array_equal(split.c_rows(), [1, 3, 5, 7])


def test_coarsen_disconnected_components_independent():
    D = np.zeros((8, 8))
    D[:4, :4] = laplacian_1d(4).to_dense()
    D[4:, 4:] = laplacian_1d(4).to_dense()
    A = CsrMatrix.from_dense(D)
    S = strength_graph(A, 0.25)
    split = cf_coarsen(S)
    got = split.is_c
    lone = cf_coarsen(strength_graph(laplacian_1d(4), 0.25)).is_c
    assert np.array_equal(got[:4], lone)
    assert np.array_equal(got[4:], lone)


def test_coarsen_every_f_has_symmetrized_c_neighbor():
    rng = np.random.default_rng(1)
    for _ in range(5):
        n = 20
        D = -np.where(rng.random((n, n)) < 0.2, rng.random((n, n)), 0.0)
        np.fill_diagonal(D, 4.0)
        A = CsrMatrix.from_dense(D)
        S = strength_graph(A, 0.25)
        split = cf_coarsen(S)
        adj = (S.to_dense() != 0) | (S.to_dense().T != 0)
        for i in split.f_rows():
            nbrs = np.flatnonzero(adj[i])
            assert len(nbrs) == 0 or np.any(split.is_c[nbrs])
        # C is independent in the symmetrized graph
        for i in split.c_rows():
            assert not np.any(split.is_c[np.flatnonzero(adj[i])])


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def test_interpolation_all_c_is_identity():
    A = laplacian_1d(5)
    S = strength_graph(A, 0.25)
    split = CfSplitting(np.ones(5, dtype=bool))
    P = direct_interpolation(A, S, split)
    assert np.array_equal(P.to_dense(), np.eye(5))


def test_interpolation_1d_laplacian_half_half():
    A = laplacian_1d(9)
    S = strength_graph(A, 0.25)
    split = CfSplitting(np.array([i % 2 == 1 for i in range(9)]))
    P = direct_interpolation(A, S, split)
    D = P.to_dense()
    for i in (2, 4, 6):  # interior F points
        w = D[i]
        assert np.allclose(sorted(w[w != 0]), [0.5, 0.5])


def test_interpolation_matches_formula_oracle_on_m_matrix():
    rng = np.random.default_rng(2)
    n = 12
    D = -np.where(rng.random((n, n)) < 0.4, rng.random((n, n)), 0.0)
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1) + 1.0)
    A = CsrMatrix.from_dense(D)
    S = strength_graph(A, 0.25)
    split = cf_coarsen(S)
    P = direct_interpolation(A, S, split)
    want = interpolation_oracle(D, S.to_dense() != 0, split.is_c)
    assert np.max(np.abs(P.to_dense() - want)) <= 1e-14


def test_interpolation_c_rows_are_identity():
    A = laplacian_2d(6)
    S = strength_graph(A, 0.25)
    split = cf_coarsen(S)
    P = direct_interpolation(A, S, split)
    D = P.to_dense()
    for i in split.c_rows():
        row = np.zeros(split.n_c)
        row[split.c_index[i]] = 1.0
        assert np.array_equal(D[i], row)


# ---------------------------------------------------------------------------
# setup
# ---------------------------------------------------------------------------


def test_setup_small_matrix_single_level():
    A = laplacian_1d(5)
    h = amg_setup(A, AmgConfig(coarse_size_cutoff=8))
    assert len(h.levels) == 0
    assert h.level_sizes() == [5]


def test_setup_1d_laplacian_level_sizes_match_replay_oracle():
    A = laplacian_1d(33)
    cfg = AmgConfig(strength_threshold=0.25, coarse_size_cutoff=4)
    h = amg_setup(A, cfg)
    want = setup_replay_oracle(A.to_dense(), 0.25, 4)
    assert h.level_sizes() == want
    # roughly halving
    sizes = h.level_sizes()
    for a, b in zip(sizes, sizes[1:]):
        assert b <= 0.7 * a


def test_setup_galerkin_identity_per_level():
    A = laplacian_2d(8)
    h = amg_setup(A, AmgConfig(coarse_size_cutoff=4))
    for l, lev in enumerate(h.levels):
        nxt = h.levels[l + 1].A if l + 1 < len(h.levels) else h.coarse_A
        P = lev.P.to_dense()
        want = P.T @ lev.A.to_dense() @ P
        assert np.max(np.abs(nxt.to_dense() - want)) <= 1e-12 * max(1.0, np.abs(want).max())


def test_setup_stagnation_truncates_to_dense():
    A = CsrMatrix.from_dense(np.diag(np.arange(1.0, 101.0)))
    h = amg_setup(A, AmgConfig(coarse_size_cutoff=4))
    assert len(h.levels) == 0
    assert h.coarse_A.nrows == 100


# ---------------------------------------------------------------------------
# V-cycle
# ---------------------------------------------------------------------------


def test_vcycle_single_level_exact():
    A = laplacian_1d(6)
    h = amg_setup(A, AmgConfig(coarse_size_cutoff=8))
    rng = np.random.default_rng(3)
    b = rng.standard_normal(6)
    x = amg_vcycle(h, b, np.zeros(6))
    assert np.max(np.abs(A.to_dense() @ x - b)) <= 1e-12


def test_vcycle_fixed_point():
    A = laplacian_2d(8)
    h = amg_setup(A, AmgConfig(coarse_size_cutoff=8))
    rng = np.random.default_rng(4)
    xstar = rng.standard_normal(A.nrows)
    b = A.to_dense() @ xstar
    x = amg_vcycle(h, b, xstar.copy())
    assert np.max(np.abs(x - xstar)) <= 1e-13 * max(1.0, np.abs(xstar).max())


def test_vcycle_superposition():
    A = laplacian_2d(8)
    h = amg_setup(A, AmgConfig(coarse_size_cutoff=8))
    rng = np.random.default_rng(5)
    u = rng.standard_normal(A.nrows)
    v = rng.standard_normal(A.nrows)
    a, bta = 0.7, -1.3
    z1 = amg_vcycle(h, a * u + bta * v, np.zeros(A.nrows))
    z2 = a * amg_vcycle(h, u, np.zeros(A.nrows)) + bta * amg_vcycle(h, v, np.zeros(A.nrows))
    assert np.max(np.abs(z1 - z2)) <= 1e-12 * max(1.0, np.abs(z1).max())


def _vcycle_gmres_iters(n):
    A = laplacian_2d(n)
    h = amg_setup(A, AmgConfig(strength_threshold=0.25, coarse_size_cutoff=64))
    rng = np.random.default_rng(6)
    b = rng.standard_normal(A.nrows)
    apply_M = lambda v: amg_vcycle(h, v, np.zeros(len(v)))
    x, st = gmres(lambda v: matvec(A, v), apply_M, b, cfg=GmresConfig(restart=50, max_iters=100, rtol=1e-8))
    assert st.converged
    # verify against a direct solution
    xd = np.linalg.solve(A.to_dense(), b)
    assert np.linalg.norm(x - xd) <= 1e-6 * np.linalg.norm(xd)
    # SPD input: preconditioned residuals decrease monotonically
    hist = st.residual_history
    assert np.all(hist[1:] <= hist[:-1] * (1 + 1e-8))
    return st.iterations


def test_vcycle_preconditioned_gmres_2d_poisson():
    it32 = _vcycle_gmres_iters(32)
    assert it32 <= 30
    it64 = _vcycle_gmres_iters(64)
    assert it64 <= 30
    assert it64 <= 1.5 * it32


def test_invalid_config():
    with pytest.raises(ValueError):
        AmgConfig(strength_threshold=1.0)
    with pytest.raises(ValueError):
        AmgConfig(coarse_size_cutoff=0)
