"""Shared test fixtures: model operators and small dense oracles."""

import numpy as np
import scipy.sparse as sp

from poromgr.sparse import CsrMatrix


def laplacian_1d(n, h2_scaled=False):
    """Tridiagonal (-1, 2, -1) operator."""
    d = 2.0 * np.ones(n)
    o = -np.ones(n - 1)
    m = sp.diags([o, d, o], [-1, 0, 1], format="csr")
    return CsrMatrix.from_scipy(m)


def laplacian_2d(nx, ny=None, eps_y=1.0):
    """5-point Laplacian on an nx x ny grid, optionally anisotropic in y."""
    ny = nx if ny is None else ny
    ax = sp.diags([-np.ones(nx - 1), 2.0 * np.ones(nx), -np.ones(nx - 1)], [-1, 0, 1])
    ay = sp.diags([-np.ones(ny - 1), 2.0 * np.ones(ny), -np.ones(ny - 1)], [-1, 0, 1])
    m = (sp.kron(sp.identity(ny), ax) + eps_y * sp.kron(ay, sp.identity(nx))).tocsr()
    m.eliminate_zeros()  # kron can store explicit zeros
    return CsrMatrix.from_scipy(m)


def diag_dominant_random(rng, n, density=0.3, shift=1.0):
    """Random sparse matrix made strictly diagonally dominant."""
    m = sp.random(n, n, density, format="csr", random_state=np.random.RandomState(rng.integers(2**31)))
    m.data = rng.standard_normal(m.nnz)
    d = np.abs(m).sum(axis=1).A1 if hasattr(np.abs(m).sum(axis=1), "A1") else np.asarray(np.abs(m).sum(axis=1)).ravel()
    m = m + sp.diags(d + shift)
    m = m.tocsr()
    m.sort_indices()
    return CsrMatrix.from_scipy(m)


def iluk_pattern_oracle(pattern, k):
    """Textbook level-of-fill: lev(i,j) = min over elimination paths of
    lev(i,m) + lev(m,j) + 1, original entries at level 0; keep <= k."""
    n = pattern.shape[0]
    lev = np.where(pattern, 0.0, np.inf)
    for m in range(n):
        for i in range(m + 1, n):
            for j in range(m + 1, n):
                lev[i, j] = min(lev[i, j], lev[i, m] + lev[m, j] + 1)
    return lev <= k
