"""Slow, direct reference solvers and trajectory metrics.

Nothing here shares code with the active-set kernel or the Riccati
recursion; these routines exist to check them.
"""
from __future__ import annotations

import itertools

import numpy as np

from .qpsolve import INF, QpData, QpSolution, QpStatus


class OracleError(RuntimeError):
    pass


def kkt_equality_solve(H, g, A_eq, b_eq, check: float = 1e-10):
    """Solve ``[[H, A'], [A, 0]] [x; nu] = [-g; b]`` with a dense LU.

    Returns ``(x, nu)`` satisfying ``H x + g + A' nu = 0`` and ``A x = b``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = H.shape[0]
    g = np.asarray(g, dtype=float).reshape(n)
    A = np.asarray(A_eq, dtype=float).reshape(-1, n)
    b = np.asarray(b_eq, dtype=float).reshape(A.shape[0])
    m = A.shape[0]
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([-g, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise OracleError("singular KKT matrix") from exc
    resid = np.abs(K @ sol - rhs).max(initial=0.0)
    scale = 1.0 + np.abs(K).max(initial=0.0) * np.abs(sol).max(initial=0.0) + np.abs(rhs).max(initial=0.0)
    if not np.isfinite(resid) or resid > check * scale:
        raise OracleError(f"KKT residual {resid:.3e} too large; matrix is (nearly) singular")
    return sol[:n], sol[n:]


def brute_force_box_qp(data: QpData, tol: float = 1e-9, debug: bool = False) -> QpSolution:
    """Enumerate every bound-activity pattern and return the KKT point.

    Each variable is free, at its lower bound or at its upper bound (infinite
    bounds are skipped); 3**n patterns in lexicographic order.  With
    ``debug=True`` enumeration continues and raises if a second, distinct KKT
    point is found.
    """
    n, m = data.n, data.m
    if n > 12:
        raise OracleError("brute force enumeration limited to n <= 12")
    H, g, A, b = data.H, data.g, data.A_eq, data.b_eq
    lb, ub = data.lb, data.ub
    choices = []
    for j in range(n):
        opts = [0]
        if lb[j] > -INF:
            opts.append(-1)
        if ub[j] < INF:
            opts.append(1)
        choices.append(opts)

    found = None
    for pattern in itertools.product(*choices):
        pattern = np.array(pattern)
        fixed = np.flatnonzero(pattern != 0)
        free = np.flatnonzero(pattern == 0)
        xf = np.where(pattern < 0, lb, ub)[fixed]
        Hff = H[np.ix_(free, free)]
        Af = A[:, free]
        rhs_g = g[free] + H[np.ix_(free, fixed)] @ xf
        rhs_b = b - A[:, fixed] @ xf
        k = len(free)
        K = np.block([[Hff, Af.T], [Af, np.zeros((m, m))]])
        if K.size and np.linalg.matrix_rank(K) < K.shape[0]:
            continue
        if K.size:
            sol = np.linalg.solve(K, np.concatenate([-rhs_g, rhs_b]))
        else:
            sol = np.zeros(0)
        x = np.zeros(n)
        x[fixed] = xf
        x[free] = sol[:k]
        nu = sol[k:]
        if np.abs(A @ x - b).max(initial=0.0) > 1e-7:
            continue
        scale = 1.0 + np.abs(x).max(initial=0.0)
        if np.any(x[free] < lb[free] - tol * scale) or np.any(x[free] > ub[free] + tol * scale):
            continue
        mu = -(H @ x + g + A.T @ nu)
        mu[free] = 0.0
        mscale = 1.0 + np.abs(mu).max(initial=0.0)
        if np.any(pattern * mu < -tol * mscale):
            continue
        candidate = QpSolution(x, nu, mu, tuple(int(j) for j in fixed), QpStatus.OPTIMAL, 0)
        if found is None:
            found = candidate
            if not debug:
                break
        elif np.abs(found.x - x).max() > 1e-6 * scale:
            raise OracleError("two distinct KKT points: problem is not strictly convex")
    if found is None:
        raise OracleError("no activity pattern satisfies the KKT conditions (infeasible)")
    return found


def certify_kkt(data: QpData, sol: QpSolution, tol: float = 1e-8) -> dict:
    """Recompute the KKT residuals of ``sol`` from scratch.

    Returns a dict of the residual magnitudes plus ``ok``.  Stationarity and
    equality residuals are measured relative to ``1 + max |data|``.
    """
    x, nu, mu = sol.x, sol.nu, sol.mu
    H, g, A, b, lb, ub = data.H, data.g, data.A_eq, data.b_eq, data.lb, data.ub
    scale = 1.0 + max(np.abs(H).max(initial=0.0) * np.abs(x).max(initial=0.0),
                      np.abs(g).max(initial=0.0))
    stat = np.abs(H @ x + g + A.T @ nu + mu).max(initial=0.0) / scale
    eq = np.abs(A @ x - b).max(initial=0.0) / (1.0 + np.abs(b).max(initial=0.0))
    bound = max(np.max(lb - x, initial=0.0), np.max(x - ub, initial=0.0), 0.0)
    at_lb = np.abs(x - lb) <= tol * (1.0 + np.abs(lb))
    at_ub = np.abs(x - ub) <= tol * (1.0 + np.abs(ub))
    mscale = 1.0 + np.abs(mu).max(initial=0.0)
    comp = np.abs(mu[~(at_lb | at_ub)]).max(initial=0.0) / mscale
    sign = max(np.max(mu[at_lb & ~at_ub], initial=0.0),
               np.max(-mu[at_ub & ~at_lb], initial=0.0), 0.0) / mscale
    out = {"stationarity": stat, "equality": eq, "bounds": bound,
           "complementarity": comp, "dual_sign": sign}
    out["ok"] = all(v <= tol for v in out.values())
    return out


def min_separation(trajectories, d_p: int, times=None) -> float:
    """Smallest pairwise position distance over agents and time steps.

    ``trajectories`` is a sequence of state arrays of shape (T+1, n_x) whose
    first ``d_p`` columns are positions.  ``times`` restricts the steps checked.
    """
    pos = np.stack([np.asarray(x, dtype=float)[:, :d_p] for x in trajectories])
    if times is not None:
        pos = pos[:, list(times)]
    best = np.inf
    for i, j in itertools.combinations(range(len(pos)), 2):
        best = min(best, float(np.linalg.norm(pos[i] - pos[j], axis=1).min(initial=np.inf)))
    return best


def tracking_error(trajectory, reference, d_p: int) -> float:
    """Distance between final position and the reference terminal position."""
    x = np.asarray(trajectory, dtype=float)
    r = np.asarray(reference, dtype=float)
    return float(np.linalg.norm(x[-1, :d_p] - r[-1, :d_p]))
