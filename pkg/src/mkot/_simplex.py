"""Primal network simplex for the dense transportation problem.

The basis is a spanning tree of the bipartite supply/demand graph, started
from the northwest-corner rule.  Entering arcs are picked by the most
negative reduced cost; after a run of degenerate pivots the selection
switches to Bland's smallest-index rule until progress resumes, which
prevents cycling.  Leaving-arc ties also break by smallest arc index.

Compiled with numba; set NUMBA_DISABLE_JIT=1 to run the same code as plain
Python when debugging.
"""

import numpy as np
from numba import njit

# consecutive degenerate pivots tolerated before switching to Bland's rule
_DEGENERATE_RUN = 40

OPTIMAL = 0
ITERATION_LIMIT = 1


@njit(cache=True)
def solve_transport(C, a, b, pivot_tol, max_pivots):  # pragma: no cover - jit
    """Solve min <C, X> s.t. X 1 = a, X^T 1 = b, X >= 0.

    Returns (basis_i, basis_j, basis_flow, alpha, beta, status, pivots)
    where alpha/beta are tree potentials with alpha_i + beta_j = C_ij on
    basic arcs, so feasibility means C_ij - alpha_i - beta_j >= -tol.
    """
    m, n = C.shape
    nn = m + n
    nb = nn - 1

    basis_i = np.empty(nb, np.int64)
    basis_j = np.empty(nb, np.int64)
    basis_f = np.empty(nb, np.float64)

    # northwest corner initial basis
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    for k in range(nb):
        basis_i[k] = i
        basis_j[k] = j
        f = ra[i] if ra[i] < rb[j] else rb[j]
        if f < 0.0:
            f = 0.0
        basis_f[k] = f
        ra[i] -= f
        rb[j] -= f
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1

    # scratch tree arrays
    head = np.empty(nn, np.int64)
    nxt = np.empty(2 * nb, np.int64)
    to = np.empty(2 * nb, np.int64)
    arc_of = np.empty(2 * nb, np.int64)
    parent = np.empty(nn, np.int64)
    parent_arc = np.empty(nn, np.int64)
    depth = np.empty(nn, np.int64)
    pot = np.empty(nn, np.float64)
    stack = np.empty(nn, np.int64)

    bland = False
    degen_run = 0
    status = ITERATION_LIMIT
    pivots = 0

    for _ in range(max_pivots):
        # ---- rebuild adjacency ----
        for u in range(nn):
            head[u] = -1
        for k in range(nb):
            u = basis_i[k]
            v = m + basis_j[k]
            e = 2 * k
            to[e] = v
            arc_of[e] = k
            nxt[e] = head[u]
            head[u] = e
            e = 2 * k + 1
            to[e] = u
            arc_of[e] = k
            nxt[e] = head[v]
            head[v] = e

        # ---- BFS/DFS from node 0: parents, depths, potentials ----
        for u in range(nn):
            parent[u] = -2
        parent[0] = -1
        parent_arc[0] = -1
        depth[0] = 0
        pot[0] = 0.0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            u = stack[top]
            e = head[u]
            while e != -1:
                v = to[e]
                if parent[v] == -2:
                    k = arc_of[e]
                    parent[v] = u
                    parent_arc[v] = k
                    depth[v] = depth[u] + 1
                    pot[v] = C[basis_i[k], basis_j[k]] - pot[u]
                    stack[top] = v
                    top += 1
                e = nxt[e]

        # ---- pricing ----
        enter_i = -1
        enter_j = -1
        if bland:
            done = False
            for ii in range(m):
                ai = pot[ii]
                for jj in range(n):
                    if C[ii, jj] - ai - pot[m + jj] < -pivot_tol:
                        enter_i = ii
                        enter_j = jj
                        done = True
                        break
                if done:
                    break
        else:
            best = -pivot_tol
            for ii in range(m):
                ai = pot[ii]
                for jj in range(n):
                    r = C[ii, jj] - ai - pot[m + jj]
                    if r < best:
                        best = r
                        enter_i = ii
                        enter_j = jj

        if enter_i < 0:
            status = OPTIMAL
            break
        pivots += 1

        # ---- find the leaving arc on the tree cycle ----
        u = enter_i
        v = m + enter_j
        du = depth[u]
        dv = depth[v]
        delta = np.inf
        leave = -1
        leave_key = np.int64(0)
        pu = u
        su = 0  # parity counting from u: even positions get -delta
        pv = v
        sv = 0
        while du > dv:
            if (su & 1) == 0:
                k = parent_arc[pu]
                f = basis_f[k]
                key = basis_i[k] * n + basis_j[k]
                if f < delta or (f == delta and (leave < 0 or key < leave_key)):
                    delta = f
                    leave = k
                    leave_key = key
            pu = parent[pu]
            su += 1
            du -= 1
        while dv > du:
            if (sv & 1) == 0:
                k = parent_arc[pv]
                f = basis_f[k]
                key = basis_i[k] * n + basis_j[k]
                if f < delta or (f == delta and (leave < 0 or key < leave_key)):
                    delta = f
                    leave = k
                    leave_key = key
            pv = parent[pv]
            sv += 1
            dv -= 1
        while pu != pv:
            if (su & 1) == 0:
                k = parent_arc[pu]
                f = basis_f[k]
                key = basis_i[k] * n + basis_j[k]
                if f < delta or (f == delta and (leave < 0 or key < leave_key)):
                    delta = f
                    leave = k
                    leave_key = key
            pu = parent[pu]
            su += 1
            if (sv & 1) == 0:
                k = parent_arc[pv]
                f = basis_f[k]
                key = basis_i[k] * n + basis_j[k]
                if f < delta or (f == delta and (leave < 0 or key < leave_key)):
                    delta = f
                    leave = k
                    leave_key = key
            pv = parent[pv]
            sv += 1

        # ---- apply the flow change along the cycle ----
        du2 = depth[u]
        dv2 = depth[v]
        pu = u
        pv = v
        su = 0
        sv = 0
        while du2 > dv2:
            k = parent_arc[pu]
            basis_f[k] += delta if (su & 1) == 1 else -delta
            pu = parent[pu]
            su += 1
            du2 -= 1
        while dv2 > du2:
            k = parent_arc[pv]
            basis_f[k] += delta if (sv & 1) == 1 else -delta
            pv = parent[pv]
            sv += 1
            dv2 -= 1
        while pu != pv:
            k = parent_arc[pu]
            basis_f[k] += delta if (su & 1) == 1 else -delta
            pu = parent[pu]
            su += 1
            k = parent_arc[pv]
            basis_f[k] += delta if (sv & 1) == 1 else -delta
            pv = parent[pv]
            sv += 1

        # clamp the leaving arc and swap in the entering one
        basis_i[leave] = enter_i
        basis_j[leave] = enter_j
        basis_f[leave] = delta
        for k in range(nb):
            if basis_f[k] < 0.0:
                basis_f[k] = 0.0

        if delta <= 1e-15:
            degen_run += 1
            if degen_run > _DEGENERATE_RUN:
                bland = True
        else:
            degen_run = 0
            bland = False

    alpha = pot[:m].copy()
    beta = pot[m:].copy()
    return basis_i, basis_j, basis_f, alpha, beta, status, pivots
