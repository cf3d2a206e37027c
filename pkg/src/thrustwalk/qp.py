"""Primal active-set solver for strictly convex box-constrained QPs.

    minimize    0.5 u^T P u + g^T u
    subject to  lb <= u <= ub
"""

from typing import NamedTuple

import numpy as np

PG_TOL = 1e-8
MAX_ITER = 500


class QpResult(NamedTuple):
    u: np.ndarray
    converged: bool
    iterations: int
    kkt_residual: float
    cost: float


def projected_gradient_norm(P, g, u, lb, ub):
    """Natural KKT residual ||u - clip(u - grad, lb, ub)||_inf."""
    grad = P @ u + g
    return float(np.max(np.abs(u - np.clip(u - grad, lb, ub)))) if u.size else 0.0


def solve_box_qp(P, g, lb, ub, u0=None, tol=PG_TOL, max_iter=MAX_ITER):
    P = np.asarray(P, dtype=float)
    g = np.asarray(g, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    n = g.size
    if np.any(lb > ub):
        raise ValueError("infeasible bounds")
    if u0 is None:
        u0 = np.linalg.solve(P, -g)
    u = np.clip(np.asarray(u0, dtype=float), lb, ub)  # a fresh array, updated in place
    # working set: -1 at lower bound, +1 at upper bound, 0 free
    W = np.zeros(n, dtype=int)
    W[u <= lb] = -1
    W[(u >= ub) & (W == 0)] = 1
    # a variable pinned with lb == ub never leaves the working set
    fixed = lb == ub

    it = 0
    at_subspace_min = False
    converged = False
    while it < max_iter:
        it += 1
        free = W == 0
        if not at_subspace_min and free.any():
            idx = np.flatnonzero(free)
            rows = P[idx]
            pf = np.linalg.solve(rows[:, idx], -(rows @ u + g[idx]))
            uf = u[idx]
            # largest step along pf that keeps the free variables feasible
            neg = pf < 0
            dist = np.where(neg, uf - lb[idx], ub[idx] - uf)
            step = np.abs(pf)
            moving = step > 0
            room = np.full(idx.size, np.inf)
            room[moving] = dist[moving] / step[moving]
            j = int(np.argmin(room))
            alpha = min(1.0, max(0.0, float(room[j])))
            u[idx] = np.clip(uf + alpha * pf, lb[idx], ub[idx])
            if room[j] < 1.0:
                k = int(idx[j])
                W[k] = -1 if neg[j] else 1
                u[k] = lb[k] if neg[j] else ub[k]
                at_subspace_min = False
            else:
                at_subspace_min = True
            continue
        # multiplier check on the working set: -W * grad for bound variables
        lam = -W * (P @ u + g)
        lam[free | fixed] = np.inf
        j = int(np.argmin(lam))
        if lam[j] >= -tol or not np.isfinite(lam[j]):
            converged = True
            break
        W[j] = 0
        at_subspace_min = False

    kkt = projected_gradient_norm(P, g, u, lb, ub)
    converged = converged and kkt < tol
    cost = float(0.5 * u @ P @ u + g @ u)
    return QpResult(u, converged, it, kkt, cost)
