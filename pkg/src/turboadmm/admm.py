"""Consensus ADMM over agents with base / hotstart / turbo QP strategies.

Each ordered pair (i, j) keeps its own consensus target ``z[i, j, s]`` (agent
i's agreed position at window slot s) and scaled dual ``lam[i, j, s]``.  The
coordinator projects the two targets of a pair jointly so that they are at
least ``d_safe`` apart.  Diagonal entries (i == i) are unused and stay zero.
"""
from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import oracle
from .model import Scenario, reference_positions
from .qpsolve import QpData, QpSolution, QpStatus, create
from .riccati import affine_lqr, build_stage_costs, dynamics_constraints

MODES = ("base", "hotstart", "turbo")
TIE_AXIS = -1
"""Coincident targets are split along this coordinate axis.

The first axis is the head-on axis of the 2-agent circle swap, where a split
along the direction of travel cannot be realized under the velocity bounds.
"""


class AgentSolveError(RuntimeError):
    """A per-agent QP did not reach optimality."""

    def __init__(self, agent: int, iteration: int, status: QpStatus, data: QpData):
        super().__init__(f"agent {agent} QP failed at ADMM iteration {iteration}: {status.value}")
        self.agent = agent
        self.iteration = iteration
        self.status = status
        self.data = data


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 25.0
    eps_primal: float = 1e-4
    eps_dual: float = 1e-4
    max_admm_iters: int = 500
    mode: str = "turbo"
    qp_tol: float = 1e-8
    qp_max_iter: int | None = None
    threads: int = 1
    window_start: int = 1
    consensus: str = "pairwise"
    input_prox: float = 0.0
    track_structure: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.rho > 0 and self.eps_primal > 0 and self.eps_dual > 0 and self.qp_tol > 0):
            raise ValueError("rho and tolerances must be positive")
        if self.window_start not in (0, 1):
            raise ValueError("window_start must be 0 or 1")
        if self.consensus not in ("pairwise", "literal"):
            raise ValueError("consensus must be 'pairwise' or 'literal'")
        if self.threads < 0 or self.max_admm_iters < 1:
            raise ValueError("threads must be >= 0 and max_admm_iters >= 1")

    def worker_count(self) -> int:
        return self.threads or (os.cpu_count() or 1)


@dataclass(frozen=True, eq=False)
class ConsensusState:
    z: np.ndarray  # (N, N, W, d_p)
    lam: np.ndarray  # (N, N, W, d_p)
    rho: float
    window: np.ndarray  # time indices covered by consensus


@dataclass
class IterationRecord:
    qp_iterations: list
    qp_times: list
    r_primal: float
    r_dual: float
    wall_time: float


@dataclass
class SolveReport:
    converged: bool
    admm_iterations: int
    per_iteration: list
    trajectories: list  # [(x (T+1, n_x), u (T, n_u))] per agent
    min_separation: float
    final_tracking_errors: list
    wall_time: float
    phase_times: dict = field(default_factory=dict)
    structure_hashes: list | None = None

    @property
    def total_qp_iterations(self) -> int:
        return int(sum(sum(r.qp_iterations) for r in self.per_iteration))

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "admm_iterations": self.admm_iterations,
            "total_qp_iterations": self.total_qp_iterations,
            "per_iteration": [vars(r) for r in self.per_iteration],
            "trajectories": [{"x": x.tolist(), "u": u.tolist()} for x, u in self.trajectories],
            "min_separation": self.min_separation,
            "final_tracking_errors": list(self.final_tracking_errors),
            "wall_time": self.wall_time,
            "phase_times": dict(self.phase_times),
            "structure_hashes": self.structure_hashes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        rep = cls(
            converged=bool(d["converged"]),
            admm_iterations=int(d["admm_iterations"]),
            per_iteration=[IterationRecord(**r) for r in d["per_iteration"]],
            trajectories=[(np.array(t["x"], dtype=float), np.array(t["u"], dtype=float))
                          for t in d["trajectories"]],
            min_separation=float(d["min_separation"]),
            final_tracking_errors=[float(e) for e in d["final_tracking_errors"]],
            wall_time=float(d["wall_time"]),
            phase_times=dict(d.get("phase_times", {})),
            structure_hashes=d.get("structure_hashes"),
        )
        if rep.total_qp_iterations != d.get("total_qp_iterations", rep.total_qp_iterations):
            raise ValueError("total_qp_iterations does not match per-iteration counts")
        return rep


# ----------------------------------------------------------------- consensus
def consensus_window(s: Scenario, cfg: SolverConfig) -> np.ndarray:
    return np.arange(cfg.window_start, s.T + 1)


def consensus_project(z_hat_i, z_hat_j, d_safe: float):
    """Move two points apart symmetrically until they are ``d_safe`` apart.

    Points already separated are returned unchanged.  Coincident points are
    split along the last coordinate axis (``TIE_AXIS``), ``z_hat_i`` towards
    negative.
    """
    zi, zj = _project(np.asarray(z_hat_i, dtype=float)[None], np.asarray(z_hat_j, dtype=float)[None],
                      d_safe)
    return zi[0], zj[0]


def _tie_direction(d_p: int) -> np.ndarray:
    e = np.zeros(d_p)
    e[TIE_AXIS] = 1.0
    return e


def _project(zi: np.ndarray, zj: np.ndarray, d_safe: float):
    diff = zj - zi
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    close = dist[..., 0] < d_safe
    if not close.any():
        return zi.copy(), zj.copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        direction = np.where(dist > 0, diff / dist, _tie_direction(zi.shape[-1]))
    mid = 0.5 * (zi + zj)
    half = 0.5 * d_safe * direction
    out_i = np.where(close[..., None], mid - half, zi)
    out_j = np.where(close[..., None], mid + half, zj)
    return out_i, out_j


def _project_literal(v: np.ndarray, d_safe: float) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(norm > 0, v / norm, _tie_direction(v.shape[-1]))
    return np.where(norm < d_safe, d_safe * unit, v)


def init_state(s: Scenario, cfg: SolverConfig) -> ConsensusState:
    """Zero duals; targets from pairwise projection of the reference positions."""
    window = consensus_window(s, cfg)
    N, W, d_p = s.N, len(window), s.d_p
    ref = reference_positions(s)[:, window]
    z = np.zeros((N, N, W, d_p))
    iu, ju = np.triu_indices(N, 1)
    zi, zj = _project(ref[iu], ref[ju], s.d_safe)
    z[iu, ju] = zi
    z[ju, iu] = zj
    return ConsensusState(z, np.zeros_like(z), cfg.rho, window)


def consensus_update(state: ConsensusState, positions: np.ndarray, d_safe: float,
                     literal: bool = False) -> ConsensusState:
    """New targets from ``positions`` (N, W, d_p) and the current duals."""
    N = positions.shape[0]
    rho = state.rho
    iu, ju = np.triu_indices(N, 1)
    z = np.zeros_like(state.z)
    lij, lji = state.lam[iu, ju], state.lam[ju, iu]
    if literal:
        avg = 0.5 * (positions[iu] + positions[ju])
        z[iu, ju] = _project_literal(avg + (lij - lji) / (2 * rho), d_safe)
        z[ju, iu] = _project_literal(avg + (lji - lij) / (2 * rho), d_safe)
    else:
        zi, zj = _project(positions[iu] + lij / rho, positions[ju] + lji / rho, d_safe)
        z[iu, ju] = zi
        z[ju, iu] = zj
    return replace(state, z=z)


def _offdiag(N: int) -> np.ndarray:
    return ~np.eye(N, dtype=bool)


def dual_update(state: ConsensusState, positions: np.ndarray, rho: float) -> ConsensusState:
    """``lam_ij += rho * (p_i - z_ij)`` for every ordered pair."""
    N = positions.shape[0]
    step = rho * (positions[:, None] - state.z)
    step[~_offdiag(N)] = 0.0
    return replace(state, lam=state.lam + step)


def residuals(z_prev: np.ndarray, z: np.ndarray, positions: np.ndarray, rho: float):
    """Infinity-norm primal (``p_i - z_ij``) and dual (``rho * dz``) residuals."""
    N = positions.shape[0]
    if N < 2:
        return 0.0, 0.0
    off = _offdiag(N)
    rp = np.abs((positions[:, None] - z)[off]).max(initial=0.0)
    rd = rho * np.abs((z - z_prev)[off]).max(initial=0.0)
    return float(rp), float(rd)


# ---------------------------------------------------------------- agent QPs
def assemble_qp(i: int, s: Scenario, cfg: SolverConfig) -> QpData:
    """Agent i's QP with zero consensus terms.

    H, A_eq, b_eq, lb and ub depend only on the scenario and rho; ADMM
    iterations only change g (see :func:`update_gradient`).  Bounds on x_0 are
    dropped because the initial-condition rows already fix it.
    """
    ag = s.agents[i]
    window = consensus_window(s, cfg)
    n_nb = s.N - 1
    zeros = np.zeros((n_nb, len(window), ag.d_p))
    stages = build_stage_costs(ag, zeros, zeros, cfg.rho, window)
    T, n_x, n_u = s.T, ag.n_x, ag.n_u
    nx_all = (T + 1) * n_x
    n = nx_all + T * n_u
    H = np.zeros((n, n))
    g = np.zeros(n)
    for t, st in enumerate(stages):
        H[t * n_x:(t + 1) * n_x, t * n_x:(t + 1) * n_x] = st.Qbar
        g[t * n_x:(t + 1) * n_x] = st.q
        if t < T:
            su = slice(nx_all + t * n_u, nx_all + (t + 1) * n_u)
            H[su, su] = st.Rbar
            g[su] = st.r
    A_eq, b_eq = dynamics_constraints(ag.A, ag.B, T, ag.x_init)
    lb = np.concatenate([np.full(n_x, -np.inf), np.tile(ag.x_lb, T), np.tile(ag.u_lb, T)])
    ub = np.concatenate([np.full(n_x, np.inf), np.tile(ag.x_ub, T), np.tile(ag.u_ub, T)])
    return QpData(H, g, A_eq, b_eq, lb, ub)


def _neighbors(i: int, N: int) -> np.ndarray:
    return np.array([j for j in range(N) if j != i], dtype=int)


def update_gradient(i: int, state: ConsensusState, s: Scenario, cfg: SolverConfig,
                    base: QpData | None = None) -> np.ndarray:
    """Linear term of agent i's QP for the current targets and duals."""
    base = assemble_qp(i, s, cfg) if base is None else base
    ag = s.agents[i]
    g = base.g.copy()
    nb = _neighbors(i, s.N)
    if len(nb):
        lin = (state.lam[i, nb] - state.rho * state.z[i, nb]).sum(axis=0) @ ag.C  # (W, n_x)
        gx = g[:(s.T + 1) * ag.n_x].reshape(s.T + 1, ag.n_x)
        gx[state.window] += lin
    return g


def _structure_hash(d: QpData) -> str:
    h = hashlib.sha256()
    for a in (d.H, d.A_eq, d.b_eq, d.lb, d.ub):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class _Agent:
    def __init__(self, i: int, s: Scenario, cfg: SolverConfig):
        self.i = i
        self.s = s
        self.cfg = cfg
        self.model = s.agents[i]
        self.data = assemble_qp(i, s, cfg)
        self.handle = create(self.data, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)

    def solve(self, state: ConsensusState, k: int):
        cfg = self.cfg
        g = update_gradient(self.i, state, self.s, cfg, self.data)
        t0 = time.perf_counter()
        warm_time = 0.0
        h = self.handle
        if k > 1 and cfg.mode != "base":
            sol = h.solve_hot(g)
        elif cfg.mode == "turbo":
            nb = _neighbors(self.i, self.s.N)
            stages = build_stage_costs(self.model, state.z[self.i, nb], state.lam[self.i, nb],
                                       state.rho, state.window, cfg.input_prox)
            lqr = affine_lqr(stages, self.model.A, self.model.B, self.model.x_init)
            warm_time = time.perf_counter() - t0
            sol = h.solve_warm(lqr.primal, lqr.equality_duals, None, g=g)
        else:
            if cfg.mode == "base":
                h.reset()
            sol = h.solve_cold(g=g)
        elapsed = time.perf_counter() - t0
        if not sol.optimal:
            raise AgentSolveError(self.i, k, sol.status, replace(self.data, g=g))
        return sol, elapsed - warm_time, warm_time


def run(s: Scenario, cfg: SolverConfig | None = None, callback=None) -> SolveReport:
    """Consensus ADMM until both residuals drop below tolerance.

    ``callback(k, state)`` is invoked after every iteration with the updated
    consensus state.  Non-convergence is reported, not raised.
    """
    cfg = cfg or SolverConfig()
    t_start = time.perf_counter()
    agents = [_Agent(i, s, cfg) for i in range(s.N)]
    state = init_state(s, cfg)
    window = state.window
    T = s.T
    workers = cfg.worker_count()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 and s.N > 1 else None
    records = []
    hashes = [] if cfg.track_structure else None
    phase = {"warmstart": 0.0, "qp": 0.0, "consensus": 0.0}
    converged = False
    sols: list[QpSolution] = []
    try:
        for k in range(1, cfg.max_admm_iters + 1):
            t_it = time.perf_counter()
            if pool is None:
                results = [a.solve(state, k) for a in agents]
            else:
                results = list(pool.map(lambda a: a.solve(state, k), agents))
            sols = [r[0] for r in results]
            phase["qp"] += sum(r[1] for r in results)
            phase["warmstart"] += sum(r[2] for r in results)
            if hashes is not None:
                hashes.append([_structure_hash(a.handle.data) for a in agents])

            t_c = time.perf_counter()
            pos = np.stack([
                sol.x[:(T + 1) * a.model.n_x].reshape(T + 1, a.model.n_x)[window] @ a.model.C.T
                for a, sol in zip(agents, sols)
            ])
            new = consensus_update(state, pos, s.d_safe, literal=cfg.consensus == "literal")
            new = dual_update(new, pos, cfg.rho)
            rp, rd = residuals(state.z, new.z, pos, cfg.rho)
            state = new
            phase["consensus"] += time.perf_counter() - t_c

            records.append(IterationRecord(
                qp_iterations=[int(sol.iterations) for sol in sols],
                qp_times=[float(r[1] + r[2]) for r in results],
                r_primal=rp, r_dual=rd, wall_time=time.perf_counter() - t_it,
            ))
            if callback is not None:
                callback(k, state)
            if rp < cfg.eps_primal and rd < cfg.eps_dual:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    trajectories = []
    for a, sol in zip(agents, sols):
        n_x, n_u = a.model.n_x, a.model.n_u
        x = sol.x[:(T + 1) * n_x].reshape(T + 1, n_x).copy()
        u = sol.x[(T + 1) * n_x:].reshape(T, n_u).copy()
        trajectories.append((x, u))
    states = [x for x, _ in trajectories]
    min_sep = oracle.min_separation(states, s.d_p, window) if s.N > 1 else float("inf")
    track = [oracle.tracking_error(x, a.x_ref, s.d_p) for x, a in zip(states, s.agents)]
    return SolveReport(
        converged=converged,
        admm_iterations=len(records),
        per_iteration=records,
        trajectories=trajectories,
        min_separation=min_sep,
        final_tracking_errors=track,
        wall_time=time.perf_counter() - t_start,
        phase_times=phase,
        structure_hashes=hashes,
    )
