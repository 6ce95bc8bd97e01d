"""Agents, scenarios and the benchmark scenario generator."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

SCENARIO_SCHEMA = "turboadmm.scenario/1"


class ParameterError(ValueError):
    """Invalid model parameter."""


class InfeasibleScenarioError(ParameterError):
    """Scenario cannot satisfy its own separation requirement."""


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def _check_psd(name: str, M: np.ndarray, strict: bool = False) -> None:
    if M.shape[0] != M.shape[1]:
        raise ParameterError(f"{name} must be square, got {M.shape}")
    if np.abs(M - M.T).max(initial=0.0) > 1e-10 * (1.0 + np.abs(M).max(initial=0.0)):
        raise ParameterError(f"{name} must be symmetric")
    if M.size:
        lo = np.linalg.eigvalsh(M).min()
        floor = 1e-12 * (1.0 + np.abs(M).max())
        if (strict and lo <= floor) or lo < -floor:
            kind = "positive definite" if strict else "positive semidefinite"
            raise ParameterError(f"{name} must be {kind} (min eigenvalue {lo:.3g})")


@dataclass(frozen=True, eq=False)
class AgentModel:
    """One agent: linear dynamics, quadratic costs, box bounds and a reference.

    ``x_ref`` has shape (T+1, n_x).  ``C`` selects the position (d_p, n_x).
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_T: np.ndarray
    C: np.ndarray
    x_init: np.ndarray
    x_ref: np.ndarray
    x_lb: np.ndarray
    x_ub: np.ndarray
    u_lb: np.ndarray
    u_ub: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A)
        n_x = A.shape[0]
        B = _frozen(self.B).reshape(n_x, -1)
        n_u = B.shape[1]
        fields = {
            "A": A, "B": _frozen(B),
            "Q": _frozen(self.Q, (n_x, n_x)),
            "R": _frozen(self.R, (n_u, n_u)),
            "Q_T": _frozen(self.Q_T, (n_x, n_x)),
            "C": _frozen(self.C).reshape(-1, n_x),
            "x_init": _frozen(self.x_init, n_x),
            "x_ref": _frozen(self.x_ref).reshape(-1, n_x),
            "x_lb": _frozen(self.x_lb, n_x), "x_ub": _frozen(self.x_ub, n_x),
            "u_lb": _frozen(self.u_lb, n_u), "u_ub": _frozen(self.u_ub, n_u),
        }
        for k, v in fields.items():
            object.__setattr__(self, k, v)
        if A.shape != (n_x, n_x):
            raise ParameterError(f"A must be square, got {A.shape}")
        _check_psd("Q", self.Q)
        _check_psd("Q_T", self.Q_T)
        _check_psd("R", self.R, strict=True)
        if np.any(self.x_lb > self.x_ub) or np.any(self.u_lb > self.u_ub):
            raise ParameterError("lower bounds exceed upper bounds")
        if np.any(self.x_init < self.x_lb) or np.any(self.x_init > self.x_ub):
            raise ParameterError("x_init violates the state bounds")
        if np.linalg.matrix_rank(self.C) < self.C.shape[0]:
            raise ParameterError("position selector C must have full row rank")
        if self.x_ref.shape[0] < 2:
            raise ParameterError("x_ref must cover at least two time steps (T >= 1)")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def d_p(self) -> int:
        return self.C.shape[0]

    @property
    def T(self) -> int:
        return self.x_ref.shape[0] - 1


@dataclass(frozen=True, eq=False)
class Scenario:
    agents: tuple
    T: int
    dt: float
    d_safe: float

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if len(self.agents) < 1:
            raise ParameterError("a scenario needs at least one agent")
        if self.T < 1:
            raise ParameterError("horizon T must be >= 1")
        if not self.d_safe > 0:
            raise ParameterError("d_safe must be positive")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        for i, ag in enumerate(self.agents):
            if ag.T != self.T:
                raise ParameterError(f"agent {i} reference has horizon {ag.T}, expected {self.T}")
            if ag.d_p != self.agents[0].d_p:
                raise ParameterError("all agents must share the position dimension")

    @property
    def N(self) -> int:
        return len(self.agents)

    @property
    def d_p(self) -> int:
        return self.agents[0].d_p


def double_integrator(dt: float, d_p: int):
    """Exact zero-order-hold discretization of a ``d_p``-axis double integrator.

    State ordering is ``[positions; velocities]``, input is acceleration.
    """
    if not (isinstance(dt, (int, float)) and dt > 0 and math.isfinite(dt)):
        raise ParameterError(f"dt must be a positive finite number, got {dt!r}")
    if d_p not in (1, 2, 3):
        raise ParameterError(f"d_p must be 1, 2 or 3, got {d_p!r}")
    I = np.eye(d_p)
    Z = np.zeros((d_p, d_p))
    A = np.block([[I, dt * I], [Z, I]])
    B = np.vstack([0.5 * dt * dt * I, dt * I])
    return A, B


def straight_line_reference(p_start, p_goal, T: int, dt: float) -> np.ndarray:
    """Constant-velocity reference from ``p_start`` (t=0) to ``p_goal`` (t=T)."""
    if T < 1:
        raise ParameterError("T must be >= 1")
    if not dt > 0:
        raise ParameterError("dt must be positive")
    p0 = np.asarray(p_start, dtype=float)
    p1 = np.asarray(p_goal, dtype=float)
    frac = np.arange(T + 1)[:, None] / T
    pos = p0 + frac * (p1 - p0)
    vel = np.broadcast_to((p1 - p0) / (T * dt), pos.shape)
    return np.hstack([pos, vel])


DEFAULT_WEIGHTS = {"Q": 5.0, "R": 0.1, "Q_T": 50.0}


def circle_scenario(N: int, radius: float = 8.0, T: int = 20, dt: float = 1.0,
                    d_safe: float = 2.0, weights: Mapping[str, float] | None = None,
                    accel_bound: float = 10.0) -> Scenario:
    """Antipodal swap on a circle: agent i starts at angle 2*pi*i/N at rest.

    Costs are scalar multiples of identity on positions (velocities carry no
    weight).  Position bounds are +-2*radius, velocity bounds
    +-2*radius/(T*dt), acceleration bounds +-``accel_bound``.
    """
    if N < 2:
        raise ParameterError("circle_scenario needs N >= 2")
    if radius <= d_safe:
        raise InfeasibleScenarioError(f"radius {radius} must exceed d_safe {d_safe}")
    w = dict(DEFAULT_WEIGHTS)
    w.update(weights or {})
    d_p = 2
    A, B = double_integrator(dt, d_p)
    n_u = d_p
    pos_weight = np.diag([1.0] * d_p + [0.0] * d_p)
    C = np.hstack([np.eye(d_p), np.zeros((d_p, d_p))])
    v_max = 2.0 * radius / (T * dt)
    x_ub = np.array([2.0 * radius] * d_p + [v_max] * d_p)
    u_ub = np.full(n_u, accel_bound)
    agents = []
    for i in range(N):
        th = 2.0 * math.pi * i / N
        start = radius * np.array([math.cos(th), math.sin(th)])
        start[np.abs(start) < 1e-12] = 0.0
        goal = -start
        agents.append(AgentModel(
            A=A, B=B,
            Q=w["Q"] * pos_weight, R=w["R"] * np.eye(n_u), Q_T=w["Q_T"] * pos_weight,
            C=C,
            x_init=np.concatenate([start, np.zeros(d_p)]),
            x_ref=straight_line_reference(start, goal, T, dt),
            x_lb=-x_ub, x_ub=x_ub, u_lb=-u_ub, u_ub=u_ub,
        ))
    return Scenario(agents=tuple(agents), T=T, dt=dt, d_safe=d_safe)


class ProblemDimensions(NamedTuple):
    num_variables: int
    num_dynamics_constraints: int
    num_collision_pairs_times_steps: int


def problem_dimensions(s: Scenario) -> ProblemDimensions:
    """Centralized problem size: variables, dynamics rows, pair-time count."""
    T = s.T
    nv = sum((T + 1) * a.n_x + T * a.n_u for a in s.agents)
    nd = sum(T * a.n_x for a in s.agents)
    return ProblemDimensions(nv, nd, s.N * (s.N - 1) // 2 * T)


# --------------------------------------------------------------- file format
def _enc(a: np.ndarray):
    # JSON has no infinities in strict mode; None marks an absent bound.
    return [None if not math.isfinite(v) else float(v) for v in np.ravel(a)] \
        if a.ndim == 1 else [_enc(row) for row in a]


def _dec(v, fill: float = np.nan) -> np.ndarray:
    def conv(x):
        if isinstance(x, list):
            return [conv(y) for y in x]
        return fill if x is None else float(x)
    return np.array(conv(v), dtype=float)


def scenario_to_dict(s: Scenario, meta: Mapping | None = None) -> dict:
    agents = []
    for a in s.agents:
        agents.append({
            "A": _enc(a.A), "B": _enc(a.B), "Q": _enc(a.Q), "R": _enc(a.R),
            "Q_T": _enc(a.Q_T), "C": _enc(a.C), "x_init": _enc(a.x_init),
            "x_ref": _enc(a.x_ref),
            "bounds": {"x_lb": _enc(a.x_lb), "x_ub": _enc(a.x_ub),
                       "u_lb": _enc(a.u_lb), "u_ub": _enc(a.u_ub)},
        })
    out = {"schema": SCENARIO_SCHEMA, "T": s.T, "dt": s.dt, "d_safe": s.d_safe,
           "agents": agents}
    if meta:
        out["meta"] = dict(meta)
    return out


def scenario_from_dict(doc: Mapping) -> Scenario:
    schema = doc.get("schema", SCENARIO_SCHEMA)
    if schema.split("/")[0] != SCENARIO_SCHEMA.split("/")[0] or schema.split("/")[-1] != "1":
        raise ParameterError(f"unsupported scenario schema {schema!r}")
    agents = []
    for a in doc["agents"]:
        b = a["bounds"]
        agents.append(AgentModel(
            A=_dec(a["A"]), B=_dec(a["B"]), Q=_dec(a["Q"]), R=_dec(a["R"]),
            Q_T=_dec(a["Q_T"]), C=_dec(a["C"]), x_init=_dec(a["x_init"]),
            x_ref=_dec(a["x_ref"]),
            x_lb=_dec(b["x_lb"], -np.inf), x_ub=_dec(b["x_ub"], np.inf),
            u_lb=_dec(b["u_lb"], -np.inf), u_ub=_dec(b["u_ub"], np.inf),
        ))
    return Scenario(agents=tuple(agents), T=int(doc["T"]), dt=float(doc["dt"]),
                    d_safe=float(doc["d_safe"]))


def save_scenario(s: Scenario, path: str | os.PathLike, meta: Mapping | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(s, meta), fh, indent=1)


def load_scenario(path: str | os.PathLike) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def reference_positions(s: Scenario) -> np.ndarray:
    """Reference positions, shape (N, T+1, d_p)."""
    return np.stack([a.x_ref @ a.C.T for a in s.agents])


def agent_positions(s: Scenario, states: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(x) @ a.C.T for a, x in zip(s.agents, states)])
