"""Affine LQR by Riccati recursion: the equality relaxation of an agent QP.

The per-agent QP stacks ``z = [x_0..x_T, u_0..u_{T-1}]`` with objective
``sum_t 1/2 x_t'Qbar_t x_t + q_t'x_t + 1/2 u_t'Rbar u_t + r_t'u_t`` and equality
rows, one block per state::

    -x_0                      = -x_init      (defines x_0)
    A x_t + B u_t - x_{t+1}   = 0            (defines x_{t+1})

Written this way the KKT duals of the block defining ``x_t`` equal the
value-function gradient ``P_t x_t + p_t`` under the convention
``H z + g + A_eq' nu = 0``, so the costates from :func:`costates` can be
handed to the QP solver unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import AgentModel


class RiccatiIllConditioned(ArithmeticError):
    def __init__(self, stage: int, cond: float):
        super().__init__(f"input Hessian S_t at stage {stage} is ill-conditioned (cond={cond:.3e})")
        self.stage = stage
        self.cond = cond


@dataclass(frozen=True, eq=False)
class StageCost:
    Qbar: np.ndarray
    q: np.ndarray
    Rbar: np.ndarray | None = None
    r: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class RiccatiGains:
    K: np.ndarray  # (T, n_u, n_x)
    k: np.ndarray  # (T, n_u)
    P: np.ndarray  # (T+1, n_x, n_x)
    p: np.ndarray  # (T+1, n_x)


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    K: np.ndarray
    k: np.ndarray
    P: np.ndarray
    p: np.ndarray
    x_warm: np.ndarray  # (T+1, n_x)
    u_warm: np.ndarray  # (T, n_u)
    nu: np.ndarray  # (T, n_x), costates t = 0..T-1

    @property
    def primal(self) -> np.ndarray:
        """Stacked ``[x_0..x_T, u_0..u_{T-1}]``."""
        return np.concatenate([self.x_warm.ravel(), self.u_warm.ravel()])

    @property
    def equality_duals(self) -> np.ndarray:
        """Duals for every equality block, including the terminal one."""
        nu_T = self.P[-1] @ self.x_warm[-1] + self.p[-1]
        return np.concatenate([self.nu.ravel(), nu_T])


def default_window(T: int, start: int = 1) -> np.ndarray:
    return np.arange(start, T + 1)


def build_stage_costs(agent: AgentModel, z: np.ndarray, lam: np.ndarray, rho: float,
                      window: Sequence[int] | None = None,
                      input_prox: float = 0.0) -> list[StageCost]:
    """Expand tracking costs plus consensus penalties into per-stage terms.

    ``z`` and ``lam`` have shape (n_neighbors, len(window), d_p).  Each
    neighbor contributes ``rho/2 ||C x_t - z + lam/rho||^2`` at window times,
    i.e. ``rho C'C`` to the state Hessian and ``C'(lam - rho z)`` to the
    linear term.  ``input_prox`` adds ``input_prox * I`` to the input weight
    (zero keeps the relaxation exact).
    """
    T = agent.T
    window = default_window(T) if window is None else np.asarray(window, dtype=int)
    z = np.asarray(z, dtype=float).reshape(-1, len(window), agent.d_p)
    lam = np.asarray(lam, dtype=float).reshape(z.shape)
    if z.shape[0] and rho <= 0:
        raise ValueError("rho must be positive when neighbors are present")
    n_nb = z.shape[0]
    C = agent.C
    CtC = C.T @ C
    lin = (lam - rho * z).sum(axis=0) @ C  # (len(window), n_x)
    in_window = np.zeros(T + 1, dtype=bool)
    in_window[window] = True
    slot = {int(t): s for s, t in enumerate(window)}

    Rbar = agent.R + input_prox * np.eye(agent.n_u)
    stages = []
    for t in range(T + 1):
        W = agent.Q_T if t == T else agent.Q
        Qbar = W.copy()
        q = -W @ agent.x_ref[t]
        if in_window[t] and n_nb:
            Qbar = Qbar + rho * n_nb * CtC
            q = q + lin[slot[t]]
        if t < T:
            stages.append(StageCost(Qbar, q, Rbar, np.zeros(agent.n_u)))
        else:
            stages.append(StageCost(Qbar, q))
    return stages


def backward_pass(stages: Sequence[StageCost], A: np.ndarray, B: np.ndarray,
                  cond_limit: float = 1e12) -> RiccatiGains:
    T = len(stages) - 1
    if T < 1:
        raise ValueError("need at least one input stage")
    n_x, n_u = B.shape
    K = np.zeros((T, n_u, n_x))
    k = np.zeros((T, n_u))
    P = np.zeros((T + 1, n_x, n_x))
    p = np.zeros((T + 1, n_x))
    P[T] = 0.5 * (stages[T].Qbar + stages[T].Qbar.T)
    p[T] = stages[T].q
    for t in range(T - 1, -1, -1):
        st = stages[t]
        Pn, pn = P[t + 1], p[t + 1]
        PA = Pn @ A
        Qxx = st.Qbar + A.T @ PA
        S = st.Rbar + B.T @ Pn @ B
        M = B.T @ PA
        s = st.r + B.T @ pn
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > cond_limit:
            raise RiccatiIllConditioned(t, cond)
        sol = np.linalg.solve(S, np.column_stack([M, s]))
        K[t] = -sol[:, :n_x]
        k[t] = -sol[:, n_x]
        Pt = Qxx + M.T @ K[t]
        P[t] = 0.5 * (Pt + Pt.T)
        p[t] = st.q + A.T @ pn + M.T @ k[t]
    return RiccatiGains(K, k, P, p)


def forward_pass(gains: RiccatiGains, A: np.ndarray, B: np.ndarray, x_init):
    T = gains.K.shape[0]
    x = np.zeros((T + 1, A.shape[0]))
    u = np.zeros((T, B.shape[1]))
    x[0] = x_init
    for t in range(T):
        u[t] = gains.K[t] @ x[t] + gains.k[t]
        x[t + 1] = A @ x[t] + B @ u[t]
    return x, u


def costates(P: np.ndarray, p: np.ndarray, x_warm: np.ndarray) -> np.ndarray:
    """``nu_t = P_t x_t + p_t`` for t = 0..T-1."""
    T = x_warm.shape[0] - 1
    return np.einsum("tij,tj->ti", P[:T], x_warm[:T]) + p[:T]


def affine_lqr(stages: Sequence[StageCost], A: np.ndarray, B: np.ndarray, x_init) -> RiccatiSolution:
    gains = backward_pass(stages, A, B)
    x, u = forward_pass(gains, A, B, x_init)
    nu = costates(gains.P, gains.p, x)
    return RiccatiSolution(gains.K, gains.k, gains.P, gains.p, x, u, nu)


def equality_qp(stages: Sequence[StageCost], A: np.ndarray, B: np.ndarray, x_init):
    """Dense ``(H, g, A_eq, b_eq)`` whose equality-constrained minimizer affine_lqr returns."""
    T = len(stages) - 1
    n_x, n_u = B.shape
    nx_all = (T + 1) * n_x
    n = nx_all + T * n_u
    H = np.zeros((n, n))
    g = np.zeros(n)
    for t, st in enumerate(stages):
        sl = slice(t * n_x, (t + 1) * n_x)
        H[sl, sl] = st.Qbar
        g[sl] = st.q
        if t < T:
            su = slice(nx_all + t * n_u, nx_all + (t + 1) * n_u)
            H[su, su] = st.Rbar
            g[su] = st.r
    A_eq, b_eq = dynamics_constraints(A, B, T, x_init)
    return H, g, A_eq, b_eq


def dynamics_constraints(A: np.ndarray, B: np.ndarray, T: int, x_init):
    n_x, n_u = B.shape
    nx_all = (T + 1) * n_x
    A_eq = np.zeros(((T + 1) * n_x, nx_all + T * n_u))
    b_eq = np.zeros((T + 1) * n_x)
    I = np.eye(n_x)
    A_eq[:n_x, :n_x] = -I
    b_eq[:n_x] = -np.asarray(x_init, dtype=float)
    for t in range(T):
        rows = slice((t + 1) * n_x, (t + 2) * n_x)
        A_eq[rows, t * n_x:(t + 1) * n_x] = A
        A_eq[rows, (t + 1) * n_x:(t + 2) * n_x] = -I
        A_eq[rows, nx_all + t * n_u:nx_all + (t + 1) * n_u] = B
    return A_eq, b_eq
