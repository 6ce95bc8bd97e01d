"""Dense parametric active-set QP kernel with cold, warm and hot starts.

Problem class::

    min  1/2 x'Hx + g'x
    s.t. A_eq x = b_eq
         lb <= x <= ub

Every solve is a homotopy in ``(g, b_eq, lb, ub)`` from an auxiliary QP
whose optimum is known (the start point) to the target QP.  Along each segment the
working set W of bounds is fixed and the primal-dual point moves affinely;
segments end when a free variable hits a bound (bound added) or a working
multiplier reaches zero (bound removed).  ``iterations`` counts these
additions and removals, identically in every start mode.

Sign convention for the duals::

    H x + g + A_eq' nu + mu = 0,   mu_j <= 0 at a lower bound, >= 0 at an upper bound.

Linear algebra: the full KKT matrix ``[[H, A'], [A, 0]]`` is LU-factored once
per handle (at :func:`create`).  Working-set bounds are handled through a
Schur complement ``S = E' K^-1 E`` whose Cholesky factor is grown by
bordering when a bound enters and refactored when one leaves, so a solve whose
working set never changes costs only back-substitutions.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse

INF = 1e19
"""Bounds with magnitude at or above this are treated as absent."""


class QpSetupError(ValueError):
    """Raised when QP data violates the kernel's preconditions."""


class QpUsageError(RuntimeError):
    """Raised when a handle is driven in an invalid order."""


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    ILL_CONDITIONED = "ill_conditioned"


@dataclass(frozen=True, eq=False)
class QpData:
    """Dense strictly convex QP with equality rows and variable bounds."""

    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float, ndmin=2)
        n = H.shape[0]
        g = np.array(self.g, dtype=float).reshape(n)
        A = np.array(self.A_eq, dtype=float)
        if A.size == 0:
            A = np.zeros((0, n))
        A = A.reshape(-1, n)
        b = np.array(self.b_eq, dtype=float).reshape(A.shape[0])
        lb = np.array(self.lb, dtype=float).reshape(n)
        ub = np.array(self.ub, dtype=float).reshape(n)
        for name, arr in (("H", H), ("g", g), ("A_eq", A), ("b_eq", b),
                          ("lb", lb), ("ub", ub)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if H.shape != (n, n):
            raise QpSetupError(f"H must be square, got {H.shape}")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.A_eq.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    working_set: tuple
    status: QpStatus
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


class _WorkingSet:
    """Schur-complement solver for the KKT system with a set of fixed bounds."""

    def __init__(self, lu, n: int, m: int, column_cache: dict):
        self._lu = lu
        self.n = n
        self.m = m
        self._cache = column_cache
        self.idx: list[int] = []
        self.side: list[int] = []  # -1 lower, +1 upper, 0 pinned (lb == ub)
        self._Y = np.zeros((n + m, 0))
        self._L = np.zeros((0, 0))

    def copy(self) -> "_WorkingSet":
        other = _WorkingSet(self._lu, self.n, self.m, self._cache)
        other.idx = list(self.idx)
        other.side = list(self.side)
        other._Y = self._Y.copy()
        other._L = self._L.copy()
        return other

    def __len__(self):
        return len(self.idx)

    def column(self, j: int) -> np.ndarray:
        y = self._cache.get(j)
        if y is None:
            e = np.zeros(self.n + self.m)
            e[j] = 1.0
            y = scipy.linalg.lu_solve(self._lu, e)
            self._cache[j] = y
        return y

    def pivot(self, j: int) -> tuple[float, np.ndarray, np.ndarray]:
        """Schur pivot of adding bound j; zero when j depends on W and A_eq."""
        y = self.column(j)
        s = y[self.idx]
        if len(self.idx):
            l = scipy.linalg.solve_triangular(self._L, s, lower=True)
        else:
            l = np.zeros(0)
        return float(y[j] - l @ l), y, l

    def independent(self, j: int) -> bool:
        piv, y, _ = self.pivot(j)
        return piv > 1e-10 * max(1.0, abs(y[j]))

    def add(self, j: int, side: int) -> None:
        piv, y, l = self.pivot(j)
        k = len(self.idx)
        L = np.zeros((k + 1, k + 1))
        L[:k, :k] = self._L
        L[k, :k] = l
        L[k, k] = np.sqrt(max(piv, 1e-300))
        self._L = L
        self._Y = np.column_stack([self._Y, y])
        self.idx.append(j)
        self.side.append(side)

    def remove(self, pos: int) -> None:
        del self.idx[pos]
        del self.side[pos]
        self._Y = np.delete(self._Y, pos, axis=1)
        if self.idx:
            S = self._Y[self.idx, :]
            S = 0.5 * (S + S.T)
            self._L = np.linalg.cholesky(S)
        else:
            self._L = np.zeros((0, 0))

    def solve(self, r1: np.ndarray, r2: np.ndarray):
        """Solve ``K d + E w = r1, E'd = r2``; returns (x, nu, w)."""
        d = scipy.linalg.lu_solve(self._lu, r1)
        if self.idx:
            rhs = d[self.idx] - r2
            w = scipy.linalg.cho_solve((self._L, True), rhs)
            d = d - self._Y @ w
        else:
            w = np.zeros(0)
        return d[: self.n], d[self.n:], w


@dataclass
class _State:
    """Primal-dual point that is optimal for the QP with data (g, b, lb, ub)."""

    x: np.ndarray
    nu: np.ndarray
    mu_w: np.ndarray
    ws: _WorkingSet
    g: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def copy(self) -> "_State":
        return _State(self.x.copy(), self.nu.copy(), self.mu_w.copy(), self.ws.copy(),
                      self.g.copy(), self.b.copy(), self.lb.copy(), self.ub.copy())


@dataclass
class SolverHandle:
    """Persistent per-QP solver state.

    The KKT matrix is factorized eagerly by :func:`create`; bound columns of
    its inverse are cached on first use and shared by all later solves.
    A handle must not be used from two threads at once.
    """

    data: QpData
    tol: float = 1e-8
    max_iter: int | None = None
    refine_sweeps: int = 8
    _lu: tuple = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)
    _pinned: np.ndarray = field(default=None, repr=False)
    _last: _State | None = field(default=None, repr=False)

    @property
    def iteration_cap(self) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 10 * (self.data.n + self.data.m)

    def _empty_ws(self) -> _WorkingSet:
        ws = _WorkingSet(self._lu, self.data.n, self.data.m, self._cache)
        for j in self._pinned:
            ws.add(int(j), 0)
        return ws

    def reset(self) -> None:
        """Forget cached bound columns and the last solution (KKT factor kept)."""
        self._cache.clear()
        self._last = None

    def _target(self, g) -> np.ndarray:
        if g is None:
            return self.data.g
        return np.asarray(g, dtype=float).reshape(self.data.n)

    # ------------------------------------------------------------------ solves
    def solve_cold(self, g=None) -> QpSolution:
        """Solve from zero (clipped to the bounds) with only fixed variables working.

        ``g`` replaces the stored linear term for this and later hot solves.
        """
        d = self.data
        x0 = np.clip(np.zeros(d.n), _finite(d.lb, -1), _finite(d.ub, 1))
        ws = self._empty_ws()
        state = _State(x0, np.zeros(d.m), np.zeros(len(ws)), ws,
                       -(d.H @ x0), d.A_eq @ x0, d.lb.copy(), d.ub.copy())
        return self._run(state, self._target(g))

    def solve_warm(self, x0, nu0, mu0=None, g=None) -> QpSolution:
        """Solve from an external primal-dual guess.

        Bounds that ``x0`` touches or violates form the initial working set,
        taken in order of decreasing ``|mu0|`` and skipping linearly dependent
        ones.  When ``mu0`` is omitted it is estimated from stationarity,
        ``-(H x0 + g + A' nu0)``.  The target QP is solved on that working set
        directly; whatever is still wrong (free variables outside their bounds,
        multipliers of the wrong sign) is relaxed in an auxiliary QP and
        removed by the homotopy.  A guess that is already optimal therefore
        costs no working-set changes.
        """
        d = self.data
        g1 = self._target(g)
        x = np.asarray(x0, dtype=float).reshape(d.n)
        nu0 = np.asarray(nu0, dtype=float).reshape(d.m)
        if mu0 is None:
            mu0 = -(d.H @ x + g1 + d.A_eq.T @ nu0)
        else:
            mu0 = np.asarray(mu0, dtype=float).reshape(d.n)
        pinned = set(int(j) for j in self._pinned)
        near = self.tol * (1.0 + np.abs(x))
        at_lb = (d.lb > -INF) & (x <= d.lb + near)
        at_ub = (d.ub < INF) & (x >= d.ub - near)
        ws = self._empty_ws()
        for j in sorted(np.flatnonzero(at_lb | at_ub), key=lambda j: (-abs(mu0[j]), j)):
            if j in pinned:
                continue
            if at_lb[j] and at_ub[j]:
                side = -1 if mu0[j] <= 0 else 1
            else:
                side = -1 if at_lb[j] else 1
            if ws.independent(int(j)):
                ws.add(int(j), side)

        st = _State(x.copy(), nu0.copy(), np.zeros(len(ws)), ws, g1.copy(), d.b_eq.copy(),
                    d.lb.copy(), d.ub.copy())
        self._recompute(st)
        changes = self._refine(st, pinned)
        free = np.ones(d.n, dtype=bool)
        free[ws.idx] = False
        # violations within rounding stay unrelaxed; the final check tolerates them
        near = self.tol * (1.0 + np.abs(st.x))
        st.lb = np.where(free & (d.lb > -INF) & (st.x < d.lb - near), st.x, d.lb)
        st.ub = np.where(free & (d.ub < INF) & (st.x > d.ub + near), st.x, d.ub)
        sides = np.array(ws.side, dtype=float)
        wrong = sides * st.mu_w < 0
        if wrong.any():
            # the auxiliary QP absorbs the wrong-sign part into its gradient
            st.g[np.asarray(ws.idx)[wrong]] += st.mu_w[wrong]
            st.mu_w = np.where(wrong, 0.0, st.mu_w)
        sol = self._run(st, g1)
        sol.iterations += changes
        return sol

    def _refine(self, st: _State, pinned: set) -> int:
        """Grow the guessed working set by the bounds its solution violates.

        Each sweep adds every violated bound that is independent of W, then
        re-solves on the larger set.  Bounds are only ever added here; any
        that turn out wrong are dropped later by the homotopy.  Each addition
        counts as a working-set change.
        """
        d = self.data
        changes = 0
        for _ in range(self.refine_sweeps):
            ws = st.ws
            free = np.ones(d.n, dtype=bool)
            free[ws.idx] = False
            near = self.tol * (1.0 + np.abs(st.x))
            lo = np.flatnonzero(free & (d.lb > -INF) & (st.x < d.lb - near))
            hi = np.flatnonzero(free & (d.ub < INF) & (st.x > d.ub + near))
            added = 0
            for j, side in sorted([(int(j), -1) for j in lo] + [(int(j), 1) for j in hi]):
                if j not in pinned and ws.independent(j):
                    ws.add(j, side)
                    added += 1
            if not added:
                break
            changes += added
            self._recompute(st)
        return changes

    def solve_hot(self, g_new) -> QpSolution:
        """Re-solve for a new linear term from the previous optimum and working set."""
        if self._last is None:
            raise QpUsageError("solve_hot requires a prior successful solve on this handle")
        g_new = np.asarray(g_new, dtype=float).reshape(self.data.n)
        return self._run(self._last.copy(), g_new)

    # ----------------------------------------------------------------- engine
    def _bound_values(self, st: _State, lb, ub) -> np.ndarray:
        return np.array([lb[j] if s <= 0 else ub[j] for j, s in zip(st.ws.idx, st.ws.side)])

    def _recompute(self, st: _State) -> None:
        ws = st.ws
        bvals = self._bound_values(st, st.lb, st.ub)
        x, nu, w = ws.solve(np.concatenate([-st.g, st.b]), bvals)
        if ws.idx:
            x[ws.idx] = bvals
        st.x, st.nu, st.mu_w = x, nu, w

    def _run(self, st: _State, g1: np.ndarray) -> QpSolution:
        d = self.data
        b1, lb1, ub1 = d.b_eq, d.lb, d.ub
        has_lb = lb1 > -INF
        has_ub = ub1 < INF
        iterations = 0
        status = QpStatus.OPTIMAL
        cap = self.iteration_cap

        while True:
            dg = g1 - st.g
            db = b1 - st.b
            with np.errstate(invalid="ignore"):  # inf - inf on absent bounds
                dlb = np.where(has_lb, lb1 - st.lb, 0.0)
                dub = np.where(has_ub, ub1 - st.ub, 0.0)
            if not (dg.any() or db.any() or dlb.any() or dub.any()):
                break
            ws = st.ws
            dx, dnu, dmu = ws.solve(np.concatenate([-dg, db]), self._bound_values(st, dlb, dub))
            tiny_x = 1e-13 * (1.0 + np.abs(dx).max(initial=0.0))
            tiny_mu = 1e-13 * (1.0 + np.abs(dmu).max(initial=0.0))

            step = 1.0
            block = None  # ("add", j, side) or ("remove", pos)
            free = np.ones(d.n, dtype=bool)
            free[ws.idx] = False
            # closing speed of each free variable towards its (moving) bound
            close_lo = np.where(free & has_lb, dlb - dx, -np.inf)
            close_hi = np.where(free & has_ub, dx - dub, -np.inf)
            for close, side in ((close_lo, -1), (close_hi, 1)):
                for j in np.flatnonzero(close > tiny_x):
                    gap = st.x[j] - st.lb[j] if side < 0 else st.ub[j] - st.x[j]
                    s = max(gap, 0.0) / close[j]
                    if s < step or (block is not None and s == step and _key(block) > j):
                        step, block = s, ("add", int(j), side)
            for pos, (j, side) in enumerate(zip(ws.idx, ws.side)):
                if side == 0:
                    continue
                rate = side * dmu[pos]
                if rate < -tiny_mu:
                    s = max(side * st.mu_w[pos], 0.0) / -rate
                    if s < step or (block is not None and s == step and _key(block) > j):
                        step, block = s, ("remove", pos)

            if block is None or step >= 1.0:
                self._finish(st, g1)
                break

            st.x = st.x + step * dx
            st.nu = st.nu + step * dnu
            st.mu_w = st.mu_w + step * dmu
            st.g = st.g + step * dg
            st.b = st.b + step * db
            st.lb = st.lb + step * dlb
            st.ub = st.ub + step * dub

            if block[0] == "remove":
                ws.remove(block[1])
                iterations += 1
            else:
                _, j, side = block
                if ws.independent(j):
                    ws.add(j, side)
                    iterations += 1
                elif self._exchange(st, j, side):
                    iterations += 2
                else:
                    # no exchange partner: either the target is already
                    # reached up to rounding or the QP is infeasible
                    self._finish(st, g1)
                    if not self._endpoint_ok(st):
                        status = QpStatus.INFEASIBLE
                    break
            self._recompute(st)
            if iterations >= cap:
                status = QpStatus.MAX_ITER
                break

        mu = np.zeros(d.n)
        mu[st.ws.idx] = st.mu_w
        sol = QpSolution(st.x.copy(), st.nu.copy(), mu, tuple(sorted(st.ws.idx)),
                         status, iterations)
        if status is QpStatus.OPTIMAL:
            if not np.all(np.isfinite(st.x)):
                sol.status = QpStatus.ILL_CONDITIONED
            else:
                self._last = st
        return sol

    def _finish(self, st: _State, g1: np.ndarray) -> None:
        d = self.data
        st.g = g1.copy()
        st.b = d.b_eq.copy()
        st.lb = d.lb.copy()
        st.ub = d.ub.copy()
        self._recompute(st)

    def _endpoint_ok(self, st: _State) -> bool:
        d = self.data
        free = np.ones(d.n, dtype=bool)
        free[st.ws.idx] = False
        tol = self.tol * (1.0 + np.abs(st.x).max(initial=0.0))
        if np.any(st.x[free] < d.lb[free] - tol) or np.any(st.x[free] > d.ub[free] + tol):
            return False
        sides = np.array(st.ws.side, dtype=float)
        mtol = self.tol * (1.0 + np.abs(st.mu_w).max(initial=0.0))
        return not np.any(sides * st.mu_w < -mtol)

    def _exchange(self, st: _State, j: int, side: int) -> bool:
        """Add bound j that is linearly dependent on W; drop a bound to make room.

        The dependence ``e_j = A'w + sum_k v_k e_k`` lets multiplier weight move
        from W onto j without moving the primal point; the first working bound
        whose multiplier reaches zero leaves.
        """
        ws = st.ws
        e = np.zeros(ws.n + ws.m)
        e[j] = 1.0
        _, w, v = ws.solve(e, np.zeros(len(ws)))
        best, best_t = None, np.inf
        for pos, (k, sk) in enumerate(zip(ws.idx, ws.side)):
            if sk == 0:
                continue
            rate = side * sk * v[pos]
            if rate > 1e-12:
                t = max(sk * st.mu_w[pos], 0.0) / rate
                if t < best_t or (t == best_t and k < ws.idx[best]):
                    best, best_t = pos, t
        if best is None:
            return False
        theta = side * best_t
        st.nu = st.nu - theta * w
        st.mu_w = st.mu_w - theta * v
        ws.remove(best)
        st.mu_w = np.delete(st.mu_w, best)
        ws.add(j, side)
        st.mu_w = np.append(st.mu_w, theta)
        return True


def _key(block) -> int:
    return block[1] if block[0] == "add" else 10**9


def _finite(bound: np.ndarray, sign: int) -> np.ndarray:
    out = bound.astype(float).copy()
    out[np.abs(out) >= INF] = sign * np.inf
    return out


# ---------------------------------------------------------------------- API
def create(data: QpData, tol: float = 1e-8, max_iter: int | None = None) -> SolverHandle:
    """Validate ``data``, factorize its KKT matrix and return a solver handle."""
    n, m = data.n, data.m
    H = data.H
    if np.abs(H - H.T).max(initial=0.0) > 1e-10:
        raise QpSetupError("H is not symmetric")
    if m and np.linalg.matrix_rank(data.A_eq) < m:
        raise QpSetupError(f"A_eq ({m} rows) is rank deficient")
    if np.any(data.lb > data.ub):
        raise QpSetupError("lb > ub for some variables")
    K = np.zeros((n + m, n + m))
    K[:n, :n] = 0.5 * (H + H.T)
    K[:n, n:] = data.A_eq.T
    K[n:, :n] = data.A_eq
    lu, piv = scipy.linalg.lu_factor(K, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.min(initial=np.inf) <= 1e-13 * max(diag.max(initial=0.0), 1.0):
        raise QpSetupError("KKT matrix is singular: H is not positive definite on null(A_eq)")
    pinned = np.flatnonzero((data.lb == data.ub) & (np.abs(data.lb) < INF))
    handle = SolverHandle(data, tol=tol, max_iter=max_iter, _lu=(lu, piv), _pinned=pinned)
    ws = _WorkingSet(handle._lu, n, m, handle._cache)
    for j in pinned:
        if not ws.independent(int(j)):
            raise QpSetupError(f"fixed variable {j} is determined by A_eq")
        ws.add(int(j), 0)
    return handle


def solve_cold(h: SolverHandle, g=None) -> QpSolution:
    return h.solve_cold(g)


def solve_warm(h: SolverHandle, x0, nu0, mu0=None, g=None) -> QpSolution:
    return h.solve_warm(x0, nu0, mu0, g)


def solve_hot(h: SolverHandle, g_new) -> QpSolution:
    return h.solve_hot(g_new)


def dump_qp(data: QpData, directory: str | os.PathLike, g: np.ndarray | None = None) -> str:
    """Write ``data`` as Matrix Market files into ``directory`` for offline triage."""
    os.makedirs(directory, exist_ok=True)
    arrays = {
        "H": data.H,
        "A_eq": data.A_eq,
        "g": (data.g if g is None else np.asarray(g))[:, None],
        "b_eq": data.b_eq[:, None],
        "lb": data.lb[:, None],
        "ub": data.ub[:, None],
    }
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        if arr.size == 0:
            # scipy's dense writer never returns on empty arrays; coordinate format keeps the shape
            arr = scipy.sparse.coo_array(arr.shape)
        scipy.io.mmwrite(os.path.join(directory, f"{name}.mtx"), arr, precision=17)
    return str(directory)
