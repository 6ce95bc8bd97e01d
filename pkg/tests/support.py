"""Random instance generators shared by the unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from turboadmm.model import AgentModel
from turboadmm.qpsolve import QpData


def random_qp(rng: np.random.Generator, n_max: int = 6, m_max: int = 3) -> QpData:
    """Strictly convex dense QP with a feasible box and mixed finite/infinite bounds."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, min(m_max, n - 1) + 1)) if n > 1 else 0
    M = rng.standard_normal((n, n))
    H = M @ M.T + rng.uniform(0.05, 1.0) * np.eye(n)
    g = 3.0 * rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    lb = -rng.uniform(0.0, 2.0, n)
    ub = rng.uniform(0.0, 2.0, n)
    u = rng.random(n)
    lb[u < 0.2] = -np.inf
    ub[(u > 0.1) & (u < 0.3)] = np.inf
    pin = rng.random(n) < 0.05
    # generic A_eq stays independent of the pinned unit rows while m + pins <= n
    pin[np.flatnonzero(pin)[max(0, n - m):]] = False
    ub[pin & np.isfinite(lb)] = lb[pin & np.isfinite(lb)]
    # b_eq from an interior point keeps the feasible set nonempty
    inner = np.clip(0.5 * rng.standard_normal(n), np.maximum(lb, -1.0), np.minimum(ub, 1.0))
    return QpData(H, g, A, A @ inner, lb, ub)


def random_agent(rng: np.random.Generator, T: int | None = None):
    """A random linear agent with PSD state weights and PD input weight."""
    n_x = int(rng.integers(1, 7))
    n_u = int(rng.integers(1, 4))
    d_p = int(rng.integers(1, min(n_x, 3) + 1))
    T = int(rng.integers(1, 11)) if T is None else T
    A = rng.standard_normal((n_x, n_x))
    A *= rng.uniform(0.5, 1.1) / max(1e-9, np.abs(np.linalg.eigvals(A)).max())
    B = rng.standard_normal((n_x, n_u))

    def psd(k, rank=None):
        F = rng.standard_normal((k, rank or k))
        return F @ F.T

    Q = psd(n_x, int(rng.integers(1, n_x + 1)))
    R = psd(n_u) + 0.1 * np.eye(n_u)
    Q_T = psd(n_x, int(rng.integers(1, n_x + 1)))
    C = np.zeros((d_p, n_x))
    C[np.arange(d_p), rng.choice(n_x, d_p, replace=False)] = 1.0
    big = np.full(n_x, np.inf)
    agent = AgentModel(A=A, B=B, Q=Q, R=R, Q_T=Q_T, C=C,
                       x_init=rng.standard_normal(n_x),
                       x_ref=rng.standard_normal((T + 1, n_x)),
                       x_lb=-big, x_ub=big,
                       u_lb=np.full(n_u, -np.inf), u_ub=np.full(n_u, np.inf))
    return agent
