"""Command-line front end: generate scenarios, run ADMM, ablate modes, export trajectories.

Exit codes: 0 success, 1 non-convergence under ``--strict``, 2 usage or I/O
error, 3 solver failure (a QP dump directory is printed).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import admm
from .model import (DEFAULT_WEIGHTS, ParameterError, Scenario, circle_scenario, load_scenario,
                    problem_dimensions, save_scenario)
from .qpsolve import QpSetupError, dump_qp

RUN_SCHEMA = "turboadmm.run/1"
ABLATE_COLUMNS = ["N", "mode", "admm_iters", "converged", "total_qp_iters",
                  "wall_ms_mean", "wall_ms_std", "min_sep", "max_track_err", "status"]
EXIT_OK, EXIT_NONCONVERGED, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


class SchemaError(ValueError):
    pass


@dataclass
class RunRecord:
    scenario: dict  # N, T, dt, d_safe, seed, source
    mode: str
    config: dict
    report: admm.SolveReport
    wall_time: float
    phase_times: dict = field(default_factory=dict)
    schema: str = RUN_SCHEMA

    def to_dict(self) -> dict:
        return {"schema": self.schema, "scenario": dict(self.scenario), "mode": self.mode,
                "config": dict(self.config), "wall_time": self.wall_time,
                "phase_times": dict(self.phase_times), "report": self.report.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        check_schema(d.get("schema"), RUN_SCHEMA)
        return cls(scenario=dict(d["scenario"]), mode=d["mode"], config=dict(d["config"]),
                   report=admm.SolveReport.from_dict(d["report"]),
                   wall_time=float(d["wall_time"]), phase_times=dict(d.get("phase_times", {})),
                   schema=d["schema"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_schema(found, expected: str) -> None:
    if not isinstance(found, str) or "/" not in found:
        raise SchemaError(f"missing or malformed schema field: {found!r}")
    name, major = found.rsplit("/", 1)
    want_name, want_major = expected.rsplit("/", 1)
    if name != want_name or major.split(".")[0] != want_major:
        raise SchemaError(f"unsupported schema {found!r} (expected {expected!r})")


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("TURBOADMM_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ValueError(f"TURBOADMM_THREADS must be an integer, got {env!r}") from exc
    return 1


def scenario_descriptor(s: Scenario, seed: int | None = None, source: str | None = None) -> dict:
    return {"N": s.N, "T": s.T, "dt": s.dt, "d_safe": s.d_safe, "seed": seed, "source": source}


def run_scenario(s: Scenario, cfg: admm.SolverConfig, seed: int | None = None,
                 source: str | None = None) -> RunRecord:
    t0 = time.perf_counter()
    rep = admm.run(s, cfg)
    wall = time.perf_counter() - t0
    return RunRecord(scenario_descriptor(s, seed, source), cfg.mode, asdict(cfg), rep, wall,
                     dict(rep.phase_times))


# ------------------------------------------------------------------ ablation
@dataclass
class AblateCell:
    N: int
    mode: str
    admm_iters: int = 0
    converged: bool = False
    total_qp_iters: int = 0
    wall_ms_mean: float = math.nan
    wall_ms_std: float = math.nan
    min_sep: float = math.nan
    max_track_err: float = math.nan
    status: str = "ok"

    def row(self) -> list:
        return [getattr(self, c) for c in ABLATE_COLUMNS]


def ablate(Ns: Sequence[int], modes: Sequence[str], repeats: int = 20, warmup: int = 1,
           scenario_kwargs: dict | None = None, cfg: admm.SolverConfig | None = None,
           log=None) -> list[AblateCell]:
    """Run every (N, mode) cell ``warmup + repeats`` times; warmup runs are not timed.

    Iteration counts come from the first timed run (they are deterministic).
    A failing cell is recorded with its error and the grid continues.
    """
    if repeats < 1 or warmup < 0:
        raise ValueError("repeats must be >= 1 and warmup >= 0")
    cfg = cfg or admm.SolverConfig()
    cells = []
    for N in Ns:
        s = circle_scenario(N, **(scenario_kwargs or {}))
        for mode in modes:
            c = AblateCell(N, mode)
            mcfg = admm.SolverConfig(**{**asdict(cfg), "mode": mode})
            try:
                for _ in range(warmup):
                    admm.run(s, mcfg)
                times = []
                for r in range(repeats):
                    t0 = time.perf_counter()
                    rep = admm.run(s, mcfg)
                    times.append(1e3 * (time.perf_counter() - t0))
                    if r == 0:
                        c.admm_iters = rep.admm_iterations
                        c.converged = rep.converged
                        c.total_qp_iters = rep.total_qp_iterations
                        c.min_sep = rep.min_separation
                        c.max_track_err = max(rep.final_tracking_errors)
                c.wall_ms_mean = float(np.mean(times))
                c.wall_ms_std = float(np.std(times))
            except (admm.AgentSolveError, ArithmeticError, ValueError) as exc:
                c.status = f"error: {exc}"
            if log:
                log(f"N={N} mode={mode} iters={c.admm_iters} qp={c.total_qp_iters} "
                    f"converged={c.converged} wall={c.wall_ms_mean:.1f}ms {c.status}")
            cells.append(c)
    return cells


def scaling_slope(cells: Sequence[AblateCell], mode: str = "turbo") -> float:
    """Least-squares slope of log(wall time) against log(N)."""
    pts = [(c.N, c.wall_ms_mean) for c in cells
           if c.mode == mode and c.status == "ok" and c.wall_ms_mean > 0]
    if len({n for n, _ in pts}) < 2:
        return math.nan
    n, w = np.array(pts, dtype=float).T
    return float(np.polyfit(np.log(n), np.log(w), 1)[0])


def write_ablate_csv(cells: Sequence[AblateCell], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATE_COLUMNS)
        for c in cells:
            w.writerow([_fmt(v) for v in c.row()])


def _fmt(v):
    # repr of a float is its shortest round-trip form
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, float):
        return repr(v)
    return v


# ------------------------------------------------------------ trajectory CSV
def _traj_columns(n_x: int, n_u: int, d_p: int) -> list[str]:
    names = "xyz"[:d_p] if d_p <= 3 else [f"p{k + 1}" for k in range(d_p)]
    pos = list(names)
    vel = [f"v{p}" for p in pos] + [f"s{k}" for k in range(n_x - 2 * d_p)]
    return ["agent", "t"] + pos + vel[:n_x - d_p] + [f"u{k + 1}" for k in range(n_u)]


def trajectory_rows(rec: RunRecord, d_p: int = 2):
    trajs = rec.report.trajectories
    if not trajs:
        return [], _traj_columns(0, 0, d_p)
    n_x, n_u = trajs[0][0].shape[1], trajs[0][1].shape[1]
    cols = _traj_columns(n_x, n_u, d_p)
    rows = []
    for i, (x, u) in enumerate(trajs):
        for t in range(x.shape[0]):
            uu = [repr(float(v)) for v in u[t]] if t < u.shape[0] else [""] * n_u
            rows.append([i, t] + [repr(float(v)) for v in x[t]] + uu)
    return rows, cols


def export_trajectories(rec: RunRecord, path, d_p: int = 2) -> None:
    rows, cols = trajectory_rows(rec, d_p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows(rows)


def read_trajectory_csv(path, d_p: int = 2):
    """Parse an exported CSV back into per-agent ``(x, u)`` arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = list(reader)
    n_u = sum(1 for h in header if h.startswith("u") and h[1:].isdigit())
    n_x = len(header) - 2 - n_u
    out: dict[int, list] = {}
    for r in body:
        out.setdefault(int(r[0]), []).append(r)
    trajs = []
    for i in sorted(out):
        rs = sorted(out[i], key=lambda r: int(r[1]))
        x = np.array([[float(v) for v in r[2:2 + n_x]] for r in rs])
        u = np.array([[float(v) for v in r[2 + n_x:]] for r in rs if r[2 + n_x] != ""])
        trajs.append((x, u.reshape(-1, n_u)))
    return trajs


# ----------------------------------------------------------------------- CLI
def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _mode_list(text: str) -> list[str]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in vals if v not in admm.MODES]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"modes must be drawn from {admm.MODES}")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_scenario_flags(p):
    p.add_argument("--radius", type=float, default=8.0)
    p.add_argument("--horizon", type=int, default=20, help="number of steps T")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--d-safe", type=float, default=2.0)
    p.add_argument("--q", type=float, default=DEFAULT_WEIGHTS["Q"], help="stage position weight")
    p.add_argument("--r", type=float, default=DEFAULT_WEIGHTS["R"], help="input weight")
    p.add_argument("--qt", type=float, default=DEFAULT_WEIGHTS["Q_T"], help="terminal position weight")


def _add_solver_flags(p, mode=True):
    p.add_argument("--rho", type=float, default=25.0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (0 = all cores); falls back to TURBOADMM_THREADS, then 1")
    if mode:
        p.add_argument("--mode", choices=admm.MODES, default="turbo")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="turboadmm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a circle-swap scenario file")
    g.add_argument("--agents", type=int, required=True)
    _add_scenario_flags(g)
    g.add_argument("--seed", type=int, default=None, help="recorded in the file metadata")
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="solve a scenario file and write a run record")
    r.add_argument("scenario")
    _add_solver_flags(r)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="run record (JSON)")
    r.add_argument("--strict", action="store_true", help="exit 1 if ADMM does not converge")

    a = sub.add_parser("ablate", help="mode x N grid with repeated timing")
    a.add_argument("--agents", type=_int_list, default=[2, 4, 6])
    a.add_argument("--modes", type=_mode_list, default=list(admm.MODES))
    a.add_argument("--repeats", type=int, default=20)
    a.add_argument("--warmup", type=int, default=1, help="untimed runs per cell")
    _add_scenario_flags(a)
    _add_solver_flags(a, mode=False)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--out", required=True, help="CSV path; scaling summary goes next to it")

    e = sub.add_parser("export-traj", help="per-agent trajectory CSV from a run record")
    e.add_argument("report")
    e.add_argument("--out", required=True)
    return ap


def _weights(ns) -> dict:
    return {"Q": ns.q, "R": ns.r, "Q_T": ns.qt}


def _config(ns, mode: str) -> admm.SolverConfig:
    return admm.SolverConfig(rho=ns.rho, eps_primal=ns.eps, eps_dual=ns.eps,
                             max_admm_iters=ns.max_iters, mode=mode,
                             threads=resolve_threads(ns.threads))


def generate_scenario(N: int, radius: float = 8.0, T: int = 20, dt: float = 1.0,
                      d_safe: float = 2.0, weights: dict | None = None) -> Scenario:
    """Circle swap for ``N >= 2``; a lone agent crossing the circle for ``N == 1``."""
    if N == 1:
        s = circle_scenario(2, radius, T, dt, d_safe, weights)
        return Scenario(agents=s.agents[:1], T=s.T, dt=s.dt, d_safe=s.d_safe)
    if N < 1:
        raise ParameterError("need at least one agent")
    return circle_scenario(N, radius, T, dt, d_safe, weights)


def cmd_generate(ns, out) -> int:
    s = generate_scenario(ns.agents, radius=ns.radius, T=ns.horizon, dt=ns.dt,
                          d_safe=ns.d_safe, weights=_weights(ns))
    dims = problem_dimensions(s)
    save_scenario(s, ns.out, meta={"generator": "circle", "radius": ns.radius,
                                   "weights": _weights(ns), "seed": ns.seed})
    print(f"wrote {ns.out}: N={s.N} T={s.T} variables={dims.num_variables} "
          f"dynamics={dims.num_dynamics_constraints} pair_steps={dims.num_collision_pairs_times_steps}",
          file=out)
    return EXIT_OK


def cmd_run(ns, out) -> int:
    s = load_scenario(ns.scenario)
    cfg = _config(ns, ns.mode)
    try:
        rec = run_scenario(s, cfg, seed=ns.seed, source=str(ns.scenario))
    except admm.AgentSolveError as exc:
        base = Path(ns.out).parent if ns.out else Path(".")
        dump = base / f"qp_failure_agent{exc.agent}_iter{exc.iteration}"
        dump_qp(exc.data, dump)
        print(f"solver failure: {exc}\nQP dump: {dump}", file=sys.stderr)
        return EXIT_SOLVER
    if ns.out:
        rec.save(ns.out)
    rep = rec.report
    print(f"converged={str(rep.converged).lower()} admm_iterations={rep.admm_iterations} "
          f"total_qp_iterations={rep.total_qp_iterations} "
          f"min_separation={rep.min_separation:.6g} "
          f"max_tracking_error={max(rep.final_tracking_errors):.6g} wall_time={rec.wall_time:.4f}s",
          file=out)
    if ns.strict and not rep.converged:
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_ablate(ns, out) -> int:
    cfg = _config(ns, "turbo")
    kw = dict(radius=ns.radius, T=ns.horizon, dt=ns.dt, d_safe=ns.d_safe, weights=_weights(ns))
    cells = ablate(ns.agents, ns.modes, ns.repeats, ns.warmup, kw, cfg,
                   log=lambda m: print(m, file=out, flush=True))
    write_ablate_csv(cells, ns.out)
    slope = scaling_slope(cells)
    summary = {"mode": "turbo", "N": sorted({c.N for c in cells if c.mode == "turbo"}),
               "loglog_slope": slope, "repeats": ns.repeats, "warmup": ns.warmup,
               "threads": cfg.threads}
    side = Path(ns.out).with_suffix(".scaling.json")
    side.write_text(json.dumps(summary, indent=1))
    print(f"turbo wall-time log-log slope: {slope:.3f} (summary in {side})", file=out)
    return EXIT_OK


def cmd_export_traj(ns, out) -> int:
    rec = RunRecord.load(ns.report)
    export_trajectories(rec, ns.out)
    print(f"wrote {ns.out}: {len(rec.report.trajectories)} agents", file=out)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "ablate": cmd_ablate,
            "export-traj": cmd_export_traj}


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[ns.command](ns, out)
    except (OSError, json.JSONDecodeError, KeyError, SchemaError, ParameterError,
            QpSetupError, ValueError) as exc:
        print(f"turboadmm {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def console() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    console()
