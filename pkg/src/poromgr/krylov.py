"""Right-preconditioned restarted GMRES.

Arnoldi with modified Gram-Schmidt on A M^-1, Givens-rotation least squares.
With right preconditioning the least-squares residual estimate coincides
with the true residual, which is still recomputed at every restart; the
convergence test uses the true (unpreconditioned) residual norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["GmresConfig", "SolveStats", "gmres"]


@dataclass(frozen=True)
class GmresConfig:
    restart: int = 50
    max_iters: int = 500
    rtol: float = 1e-6
    atol: float = 1e-12

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveStats:
    iterations: int
    residual_history: np.ndarray
    converged: bool


def gmres(apply_A, apply_M_inv, b, x0=None, cfg: GmresConfig = GmresConfig()):
    """Solve A x = b with right preconditioning M^-1.

    apply_A and apply_M_inv are callables on vectors; apply_M_inv=None means
    no preconditioning. Returns (x, SolveStats). Convergence when
    ||b - A x|| <= max(rtol * ||b - A x0||, atol). An Arnoldi breakdown is
    treated as convergence in the generated subspace.
    """
    b = np.asarray(b, dtype=np.float64)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    if apply_M_inv is None:
        apply_M_inv = lambda v: v

    r = b - apply_A(x) if np.any(x) else b.copy()
    beta = float(np.linalg.norm(r))
    history = [beta]
    tol = max(cfg.rtol * beta, cfg.atol)
    if beta <= tol:
        return x, SolveStats(0, np.array(history), True)

    m = cfg.restart
    total = 0
    converged = False
    while total < cfg.max_iters and not converged:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / beta
        g[0] = beta
        j = 0
        breakdown = False
        while j < m and total < cfg.max_iters:
            w = apply_A(apply_M_inv(V[j]))
            for i in range(j + 1):
                H[i, j] = float(V[i] @ w)
                w = w - H[i, j] * V[i]
            hnext = float(np.linalg.norm(w))
            H[j + 1, j] = hnext
            colscale = float(np.linalg.norm(H[:j + 2, j]))
            if hnext > 1e-12 * max(colscale, 1e-300):
                V[j + 1] = w / hnext
            else:
                breakdown = True
            # apply accumulated rotations, then the new one
            for i in range(j):
                t = H[i, j]
                H[i, j] = cs[i] * t + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * t + cs[i] * H[i + 1, j]
            rho = float(np.hypot(H[j, j], H[j + 1, j]))
            if rho == 0.0:
                # dead column (only possible for singular operators): discard
                breakdown = True
                break
            cs[j] = H[j, j] / rho
            sn[j] = H[j + 1, j] / rho
            H[j, j] = rho
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j += 1
            history.append(abs(float(g[j])))
            if abs(g[j]) <= tol or breakdown:
                break
        # solve the triangular least-squares system and update x
        if j > 0:
            y = scipy_solve_triangular(H[:j, :j], g[:j])
            x = x + apply_M_inv(V[:j].T @ y)
            r = b - apply_A(x)
            beta = float(np.linalg.norm(r))
            history[-1] = beta  # replace the estimate with the true residual
        if beta <= tol:
            converged = True
        elif breakdown:
            break  # subspace exhausted without reaching the tolerance
    return x, SolveStats(total, np.array(history), bool(beta <= tol))


def scipy_solve_triangular(R, g):
    if len(g) == 0:
        return np.zeros(0)
    import scipy.linalg

    return scipy.linalg.solve_triangular(R, g, lower=False)
