"""Numba kernels for the inherently sequential sweeps and factorizations.

All kernels operate on raw CSR arrays (int64 indptr, int32 indices,
float64 data) and are deterministic: loops follow the stored order.
"""

import numpy as np
from numba import njit

INT_BIG = np.int32(2**30)


@njit(cache=True)
def l1_gs_kernel(indptr, indices, data, part_starts, dtilde, b, x, forward):
    """One hybrid l1-Gauss-Seidel sweep, in place on x.

    Gauss-Seidel inside each contiguous partition, Jacobi (pre-sweep values)
    across partitions.
    """
    xpre = x.copy()
    nparts = len(part_starts) - 1
    for p in range(nparts):
        lo = part_starts[p]
        hi = part_starts[p + 1]
        if forward:
            for i in range(lo, hi):
                s = 0.0
                for q in range(indptr[i], indptr[i + 1]):
                    j = indices[q]
                    if lo <= j < hi:
                        s += data[q] * x[j]
                    else:
                        s += data[q] * xpre[j]
                x[i] += (b[i] - s) / dtilde[i]
        else:
            for i in range(hi - 1, lo - 1, -1):
                s = 0.0
                for q in range(indptr[i], indptr[i + 1]):
                    j = indices[q]
                    if lo <= j < hi:
                        s += data[q] * x[j]
                    else:
                        s += data[q] * xpre[j]
                x[i] += (b[i] - s) / dtilde[i]


@njit(cache=True)
def hbgs_kernel(indptr, indices, data, part_starts, add_diag, b, x, srow, prow, forward):
    """One hybrid block Gauss-Seidel sweep over per-cell 2x2 (s, p) blocks.

    Returns -1 on success, else the index of a cell whose modified 2x2
    diagonal block is singular.
    """
    xpre = x.copy()
    ncells = len(srow)
    nparts = len(part_starts) - 1
    for p in range(nparts):
        lo = part_starts[p]
        hi = part_starts[p + 1]
        if forward:
            c0, c1, step = 0, ncells, 1
        else:
            c0, c1, step = ncells - 1, -1, -1
        for c in range(c0, c1, step):
            i0 = srow[c]
            if i0 < lo or i0 >= hi:
                continue
            i1 = prow[c]
            a00 = 0.0
            a01 = 0.0
            a10 = 0.0
            a11 = 0.0
            r0 = b[i0]
            r1 = b[i1]
            for q in range(indptr[i0], indptr[i0 + 1]):
                j = indices[q]
                v = data[q]
                if j == i0:
                    a00 = v
                elif j == i1:
                    a01 = v
                if lo <= j < hi:
                    r0 -= v * x[j]
                else:
                    r0 -= v * xpre[j]
            for q in range(indptr[i1], indptr[i1 + 1]):
                j = indices[q]
                v = data[q]
                if j == i0:
                    a10 = v
                elif j == i1:
                    a11 = v
                if lo <= j < hi:
                    r1 -= v * x[j]
                else:
                    r1 -= v * xpre[j]
            a00 += add_diag[i0]
            a11 += add_diag[i1]
            det = a00 * a11 - a01 * a10
            if det == 0.0:
                return c
            x[i0] += (a11 * r0 - a01 * r1) / det
            x[i1] += (-a10 * r0 + a00 * r1) / det
    return -1


@njit(cache=True)
def iluk_symbolic(n, indptr, indices, k):
    """Level-of-fill pattern for ILU(k).

    Original entries have level 0; a fill entry (i, j) created while
    eliminating through column m gets level lev(i,m) + lev(m,j) + 1 and is
    kept when <= k. Returns (lu_indptr, lu_indices, lu_levels, diag_pos);
    diag_pos[i] = -1 flags a structurally missing diagonal.
    """
    nnz = indptr[n]
    cap = max(16, 4 * nnz)
    lu_ind = np.empty(cap, np.int32)
    lu_lev = np.empty(cap, np.int32)
    lu_ptr = np.empty(n + 1, np.int64)
    lu_ptr[0] = 0
    dpos = np.full(n, -1, np.int64)
    lev_ws = np.full(n, INT_BIG, np.int32)
    cols = np.empty(n, np.int32)
    count = 0
    for i in range(n):
        nact = 0
        for q in range(indptr[i], indptr[i + 1]):
            j = indices[q]
            lev_ws[j] = 0
            cols[nact] = j
            nact += 1
        ptr = 0
        while ptr < nact:
            m = cols[ptr]
            if m >= i:
                break
            lev_im = lev_ws[m]
            for q in range(dpos[m] + 1, lu_ptr[m + 1]):
                j = lu_ind[q]
                newlev = lev_im + lu_lev[q] + 1
                if newlev <= k:
                    if lev_ws[j] == INT_BIG:
                        lo = ptr + 1
                        hi = nact
                        while lo < hi:
                            mid = (lo + hi) // 2
                            if cols[mid] < j:
                                lo = mid + 1
                            else:
                                hi = mid
                        for t in range(nact, lo, -1):
                            cols[t] = cols[t - 1]
                        cols[lo] = j
                        nact += 1
                        lev_ws[j] = newlev
                    elif newlev < lev_ws[j]:
                        lev_ws[j] = newlev
            ptr += 1
        if count + nact > cap:
            while count + nact > cap:
                cap *= 2
            new_ind = np.empty(cap, np.int32)
            new_lev = np.empty(cap, np.int32)
            new_ind[:count] = lu_ind[:count]
            new_lev[:count] = lu_lev[:count]
            lu_ind = new_ind
            lu_lev = new_lev
        for t in range(nact):
            j = cols[t]
            lu_ind[count] = j
            lu_lev[count] = lev_ws[j]
            if j == i:
                dpos[i] = count
            count += 1
            lev_ws[j] = INT_BIG
        lu_ptr[i + 1] = count
        if dpos[i] < 0:
            # cannot factor further rows without a pivot; caller handles
            for r in range(i + 1, n + 1):
                lu_ptr[r] = count
            return lu_ptr, lu_ind[:count].copy(), lu_lev[:count].copy(), dpos
    return lu_ptr, lu_ind[:count].copy(), lu_lev[:count].copy(), dpos


@njit(cache=True)
def iluk_numeric(n, aptr, aind, adata, luptr, luind, dpos):
    """IKJ elimination restricted to the symbolic pattern.

    Returns (lu_data, fail_row); fail_row = -1 on success, else the row with
    a zero (or structurally missing) pivot.
    """
    ludata = np.zeros(luptr[n])
    w = np.zeros(n)
    posof = np.full(n, -1, np.int64)
    for i in range(n):
        if dpos[i] < 0:
            return ludata, i
        for q in range(luptr[i], luptr[i + 1]):
            posof[luind[q]] = q
            w[luind[q]] = 0.0
        for q in range(aptr[i], aptr[i + 1]):
            w[aind[q]] = adata[q]
        for q in range(luptr[i], dpos[i]):
            m = luind[q]
            um = ludata[dpos[m]]
            if um == 0.0:
                return ludata, m
            lam = w[m] / um
            w[m] = lam
            for t in range(dpos[m] + 1, luptr[m + 1]):
                j = luind[t]
                if posof[j] >= luptr[i]:
                    w[j] -= lam * ludata[t]
        for q in range(luptr[i], luptr[i + 1]):
            ludata[q] = w[luind[q]]
            posof[luind[q]] = -1
        if ludata[dpos[i]] == 0.0:
            return ludata, i
    return ludata, -1


@njit(cache=True)
def ilu_solve_kernel(n, luptr, luind, ludata, dpos, r):
    """z = U^-1 (L^-1 r) with unit lower diagonal."""
    z = r.copy()
    for i in range(n):
        s = z[i]
        for q in range(luptr[i], dpos[i]):
            s -= ludata[q] * z[luind[q]]
        z[i] = s
    for i in range(n - 1, -1, -1):
        s = z[i]
        for q in range(dpos[i] + 1, luptr[i + 1]):
            s -= ludata[q] * z[luind[q]]
        z[i] = s / ludata[dpos[i]]
    return z


@njit(cache=True)
def greedy_mis_kernel(n, order, adj_indptr, adj_indices):
    """Greedy maximal independent set in processing order.

    Returns int8 status: 1 = C (selected), 2 = F (neighbor of a C point).
    """
    status = np.zeros(n, np.int8)
    for t in range(n):
        v = order[t]
        if status[v] != 0:
            continue
        status[v] = 1
        for q in range(adj_indptr[v], adj_indptr[v + 1]):
            j = adj_indices[q]
            if status[j] == 0:
                status[j] = 2
    return status
