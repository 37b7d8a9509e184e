"""Command-line driver: configuration, subcommands and deterministic output files.

Every subcommand writes into a staging directory next to ``--out`` and moves
the files into place only on success, so a failed run leaves no partial
output.  CSV files use 17 significant digits, LF line endings and a header
row; JSON files are key-sorted with two-space indentation.  Wall-clock
timings go to ``timing.json`` only, so every other file is byte-stable for
identical inputs.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .background import (
    ChokingError,
    InadmissibleBackgroundError,
    build_background,
    coefficients,
    sign_report,
    write_profile_csv,
)
from .gas import DomainError, GasParams, PrimitiveState
from .scondition import check_table, scan_scondition
from .shockmap import (
    NonConvergenceError,
    ShockFront,
    StepError,
    SubsonicState,
    build_problem,
    physical_state,
    solve_transonic,
    transform,
    verify_solution,
)
from .venttsel import SConditionViolation

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PHYSICS = 3
EXIT_NONCONVERGENCE = 4
EXIT_SCONDITION = 5
THREADS_ENV = "FANNO_SHOCK_THREADS"

DEFAULT_CONFIG = {
    "gas": {"gamma": 1.4, "mu": 0.1},
    "duct": {"L": 1.0, "r_b": 0.5},
    "inlet": {"u0": 1.6, "p": 1.0 / 1.4, "rho": 1.0},
    "perturbations": {"inflow": {}, "back_pressure": [], "epsilon": 0.0},
    "numerics": {"N0": 200, "N": 16, "Q_max": 400, "tol": 1e-10, "max_iter": 30, "seed": 0},
    "sweep": {"r_b": None, "mu": None, "solve": True},
}
INFLOW_KEYS = ("p", "rho", "u0", "u1", "u2")
TERM_KEYS = {"m1", "m2", "block", "amplitude"}


class ConfigError(ValueError):
    """An inadmissible configuration; the message names the offending field."""


class RunFailure(RuntimeError):
    """A run failed with a definite exit code."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; ``raw`` is the resolved JSON echo."""

    gamma: float
    mu: float
    L: float
    r_b: float
    u0: float
    p: float
    rho: float
    inflow: dict
    back_pressure: list
    epsilon: float
    N0: int
    N: int
    Q_max: int
    tol: float
    max_iter: int
    seed: int
    sweep_r_b: list
    sweep_mu: list
    sweep_solve: bool
    raw: dict

    @property
    def gas(self):
        return GasParams(self.gamma, self.mu)

    @property
    def inlet(self):
        return PrimitiveState(p=self.p, rho=self.rho, u=np.array([self.u0, 0.0, 0.0]))


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"{path}{key}: unknown field")
        if isinstance(defaults[key], dict) and key != "inflow":
            out[key] = _merge(defaults[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def _number(value, name, *, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: expected a number")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{name}: expected an integer")
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{name}: must be finite")
    return value


def _terms(terms, name, N):
    if not isinstance(terms, list):
        raise ConfigError(f"{name}: expected a list of Fourier terms")
    out = []
    for k, t in enumerate(terms):
        where = f"{name}[{k}]"
        if not isinstance(t, dict) or not {"m1", "m2", "amplitude"} <= set(t) or set(t) - TERM_KEYS:
            raise ConfigError(f"{where}: expected keys m1, m2, amplitude and optional block")
        m1 = _number(t["m1"], f"{where}.m1", integer=True)
        m2 = _number(t["m2"], f"{where}.m2", integer=True)
        if min(m1, m2) < 0 or max(m1, m2) >= N // 2:
            raise ConfigError(f"{where}: mode ({m1}, {m2}) not resolved on an {N}x{N} torus grid")
        block = t.get("block", "cc")
        if block not in ("cc", "cs", "sc", "ss"):
            raise ConfigError(f"{where}.block: must be one of cc, cs, sc, ss")
        out.append({"m1": m1, "m2": m2, "block": block,
                    "amplitude": _number(t["amplitude"], f"{where}.amplitude")})
    return out


def parse_config(data) -> RunConfig:
    """Validate a configuration mapping against the physical constraints.

    Raises
    ------
    ConfigError
        Naming the first inadmissible field.
    """
    raw = _merge(DEFAULT_CONFIG, data, "")
    g, d, i = raw["gas"], raw["duct"], raw["inlet"]
    pert, num, sw = raw["perturbations"], raw["numerics"], raw["sweep"]
    gamma = _number(g["gamma"], "gas.gamma")
    mu = _number(g["mu"], "gas.mu")
    L = _number(d["L"], "duct.L")
    r_b = _number(d["r_b"], "duct.r_b")
    u0, p, rho = (_number(i[k], f"inlet.{k}") for k in ("u0", "p", "rho"))
    if gamma <= 1.0:
        raise ConfigError("gas.gamma: must exceed 1")
    if mu < 0.0:
        raise ConfigError("gas.mu: must be non-negative")
    if L <= 0.0:
        raise ConfigError("duct.L: must be positive")
    if not 0.0 < r_b < L:
        raise ConfigError("duct.r_b: must satisfy 0 < r_b < L")
    if p <= 0.0 or rho <= 0.0:
        raise ConfigError("inlet: pressure and density must be positive")
    if u0 * u0 <= gamma * p / rho:
        raise ConfigError("inlet: flow must be supersonic (u0^2 > gamma p / rho)")

    N0 = _number(num["N0"], "numerics.N0", integer=True)
    N = _number(num["N"], "numerics.N", integer=True)
    Q_max = _number(num["Q_max"], "numerics.Q_max", integer=True)
    tol = _number(num["tol"], "numerics.tol")
    max_iter = _number(num["max_iter"], "numerics.max_iter", integer=True)
    seed = _number(num["seed"], "numerics.seed", integer=True)
    if N0 < 16:
        raise ConfigError("numerics.N0: need at least 16 axial nodes")
    if N < 4 or N % 2:
        raise ConfigError("numerics.N: must be an even integer >= 4")
    if Q_max < 0:
        raise ConfigError("numerics.Q_max: must be non-negative")
    if tol <= 0.0:
        raise ConfigError("numerics.tol: must be positive")
    if max_iter < 1:
        raise ConfigError("numerics.max_iter: must be at least 1")

    epsilon = _number(pert["epsilon"], "perturbations.epsilon")
    if epsilon < 0.0:
        raise ConfigError("perturbations.epsilon: must be non-negative")
    back = _terms(pert["back_pressure"], "perturbations.back_pressure", N)
    inflow_raw = pert["inflow"] or {}
    if not isinstance(inflow_raw, dict) or set(inflow_raw) - set(INFLOW_KEYS):
        raise ConfigError(f"perturbations.inflow: keys must be among {', '.join(INFLOW_KEYS)}")
    inflow = {k: _terms(v, f"perturbations.inflow.{k}", N) for k, v in sorted(inflow_raw.items())}

    sweep_r_b = sw["r_b"]
    if sweep_r_b is None:
        sweep_r_b = [float(v) for v in np.linspace(0.1, 0.9, 10) * L]
    sweep_mu = sw["mu"] if sw["mu"] is not None else [mu]
    if not isinstance(sweep_r_b, list) or not sweep_r_b:
        raise ConfigError("sweep.r_b: expected a non-empty list")
    if not isinstance(sweep_mu, list) or not sweep_mu:
        raise ConfigError("sweep.mu: expected a non-empty list")
    sweep_r_b = [_number(v, "sweep.r_b") for v in sweep_r_b]
    sweep_mu = [_number(v, "sweep.mu") for v in sweep_mu]
    if any(not 0.0 < v < L for v in sweep_r_b):
        raise ConfigError("sweep.r_b: every value must satisfy 0 < r_b < L")
    if any(v < 0.0 for v in sweep_mu):
        raise ConfigError("sweep.mu: every value must be non-negative")
    if not isinstance(sw["solve"], bool):
        raise ConfigError("sweep.solve: expected true or false")

    raw["sweep"] = {"r_b": sweep_r_b, "mu": sweep_mu, "solve": sw["solve"]}
    raw["perturbations"] = {"inflow": inflow, "back_pressure": back, "epsilon": epsilon}
    return RunConfig(gamma=gamma, mu=mu, L=L, r_b=r_b, u0=u0, p=p, rho=rho, inflow=inflow,
                     back_pressure=back, epsilon=epsilon, N0=N0, N=N, Q_max=Q_max, tol=tol,
                     max_iter=max_iter, seed=seed, sweep_r_b=sweep_r_b, sweep_mu=sweep_mu,
                     sweep_solve=sw["solve"], raw=raw)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data)


def resolve_threads(flag):
    """``--threads`` if given, else ``FANNO_SHOCK_THREADS``, else 1."""
    value, source = flag, "--threads"
    if value is None:
        value, source = os.environ.get(THREADS_ENV), THREADS_ENV
    if value is None:
        return 1
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: expected a positive integer") from None
    if n < 1:
        raise ConfigError(f"{source}: expected a positive integer")
    return n


# ---------------------------------------------------------------------------
# deterministic writers


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path, obj):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


class Staging:
    """Write into a hidden sibling directory, then move into ``out`` on success."""

    def __init__(self, out):
        self.out = Path(out)

    def __enter__(self):
        parent = self.out.resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        self.path = Path(tempfile.mkdtemp(prefix=".fanno-shock-", dir=parent))
        return self.path

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for item in sorted(self.path.iterdir()):
                    target = self.out / item.name
                    if target.is_dir():
                        shutil.rmtree(target)
                    elif target.exists():
                        target.unlink()
                    shutil.move(str(item), str(target))
        finally:
            shutil.rmtree(self.path, ignore_errors=True)
        return False


# ---------------------------------------------------------------------------
# shared pieces


def _background(cfg: RunConfig, mu=None, r_b=None):
    gas = GasParams(cfg.gamma, cfg.mu if mu is None else mu)
    return build_background(gas, cfg.L, cfg.r_b if r_b is None else r_b, cfg.inlet)


def _manifest(cfg, command, bg=None, table=None, scond=None):
    return {
        "command": command,
        "version": __version__,
        "config": cfg.raw,
        "h_b": None if bg is None else bg.h_b,
        "signs": None if table is None else sign_report(table),
        "scondition": scond,
        "timing": "timing.json",
    }


def _scondition(cfg, table, threads):
    """Tabulated and solver-table S-Condition verdicts at the configured ``r_b``."""
    from .shockmap import _effective_table

    rep = scan_scondition(cfg.gas, cfg.L, cfg.inlet, [cfg.r_b], Q_max=cfg.Q_max, threads=threads)
    solver = check_table(_effective_table(table), cfg.Q_max)
    summary = rep.summary()
    summary["solver_table"] = {k: solver[k] for k in ("holds", "zeros", "min_abs_theta")}
    summary["passed"] = bool(all(rep.holds) and solver["holds"])
    return rep, summary


def _problem(cfg, table, threads):
    return build_problem(table, N=cfg.N, n0=cfg.N0, back_pressure=cfg.back_pressure,
                         inflow=cfg.inflow or None, epsilon=cfg.epsilon, Q_max=cfg.Q_max,
                         threads=threads)


def _torus(N):
    return 2.0 * np.pi * np.arange(N) / N


def _thresholds(cfg):
    return max(1e-6, 10.0 * cfg.epsilon**2)


# ---------------------------------------------------------------------------
# subcommands


def cmd_background(cfg, out, threads, force=False):
    t0 = time.perf_counter()
    bg = _background(cfg)
    table = coefficients(bg)
    grid = np.linspace(cfg.r_b, cfg.L, cfg.N0)
    prof = table.profiles(grid)
    d1, d2, d3, d4 = table.d(prof["t"])
    from .shockmap import _effective_table

    eff = _effective_table(table)
    data = {
        "variant": table.variant,
        "h_b": bg.h_b,
        "coefficients": sign_report(table),
        "auxiliary": {"q_A": table.q_A, "q_E": table.q_E, "kappa_E": table.kappa_E},
        "solver_coefficients": {k: getattr(eff, k) for k in ("gamma1", "mu6", "mu7", "mu9")},
        "profiles": {"y0": grid, **{k: np.real(prof[k]) for k in
                                    ("e1", "e2", "e3", "e4", "e5", "e6", "b", "t")},
                     "d1": d1, "d2": d2, "d3": d3, "d4": d4},
    }
    with Staging(out) as stage:
        write_profile_csv(bg, stage / "background.csv")
        write_json(stage / "coefficients.json", data)
        write_json(stage / "manifest.json", _manifest(cfg, "background", bg, table))
        write_json(stage / "timing.json", {"wall_clock": time.perf_counter() - t0})
    return EXIT_OK


def cmd_scondition(cfg, out, threads, force=False):
    t0 = time.perf_counter()
    bg = _background(cfg)
    table = coefficients(bg)
    rep, summary = _scondition(cfg, table, threads)
    with Staging(out) as stage:
        write_csv(stage / "scondition.csv", ["q", "r_b", "theta"], rep.rows())
        write_json(stage / "scondition.json", summary)
        write_json(stage / "manifest.json", _manifest(cfg, "scondition", bg, table, summary))
        write_json(stage / "timing.json", {"wall_clock": time.perf_counter() - t0})
    return EXIT_OK if summary["passed"] else EXIT_SCONDITION


def _write_solution(stage, cfg, problem, front, U):
    N = cfg.N
    y = _torus(N)
    rows = [(y[i], y[j], front.psi[i, j]) for i in range(N) for j in range(N)]
    write_csv(stage / "shock_front.csv", ["y1", "y2", "psi"], rows)
    geom = transform(front, problem.grid, problem.L, problem.r_b)
    state = physical_state(U, geom, problem)
    A = problem.bg.entropy_plus + U.A
    E = problem.bg.plus(geom.x0)["E"] + U.E
    fields = stage / "fields"
    fields.mkdir()
    header = ["y0", "x0", "y1", "y2", "p", "A", "E", "u0", "u1", "u2", "p_hat", "A_hat", "E_hat"]
    width = len(str(len(problem.grid) - 1))
    for k, y0 in enumerate(problem.grid):
        rows = [(y0, geom.x0[k, i, j], y[i], y[j], state.p[k, i, j], A[k, i, j], E[k, i, j],
                 state.u[0, k, i, j], state.u[1, k, i, j], state.u[2, k, i, j],
                 U.p[k, i, j], U.A[k, i, j], U.E[k, i, j]) for i in range(N) for j in range(N)]
        write_csv(fields / f"station_{k:0{width}d}.csv", header, rows)


def cmd_solve(cfg, out, threads, force=False):
    t0 = time.perf_counter()
    bg = _background(cfg)
    table = coefficients(bg)
    _, summary = _scondition(cfg, table, threads)
    if not summary["passed"] and not force:
        raise RunFailure(EXIT_SCONDITION, "S-Condition fails at the configured r_b "
                                          "(rerun with --force to solve anyway)")
    problem = _problem(cfg, table, threads)
    front, U, report = solve_transonic(problem, tol=cfg.tol, max_iter=cfg.max_iter)
    if not report.converged:
        raise RunFailure(EXIT_NONCONVERGENCE,
                         f"no convergence after {report.iterations} iterations "
                         f"(last step {report.norms[-1]:.3e})")
    rep = report.to_dict()
    wall = rep.pop("wall_clock")
    rep["thresholds"] = _thresholds(cfg)
    rep["solver_coefficients"] = {k: getattr(problem.table, k) for k in ("gamma1", "mu6", "mu7", "mu9")}
    with Staging(out) as stage:
        _write_solution(stage, cfg, problem, front, U)
        write_json(stage / "report.json", rep)
        write_json(stage / "manifest.json", _manifest(cfg, "solve", bg, table, summary))
        write_json(stage / "timing.json", {"wall_clock": time.perf_counter() - t0, "solve": wall})
    return EXIT_OK


def read_solution(directory, cfg, problem):
    """Front and subsonic state from a solution bundle written by ``solve``."""
    directory = Path(directory)
    N, n = cfg.N, len(problem.grid)
    try:
        _, front_rows = read_csv(directory / "shock_front.csv")
        stations = sorted((directory / "fields").glob("station_*.csv"))
    except OSError as exc:
        raise ConfigError(f"cannot read solution bundle: {exc}") from exc
    if front_rows.shape != (N * N, 3) or len(stations) != n:
        raise ConfigError("solution bundle does not match the configured grid")
    psi = front_rows[:, 2].reshape(N, N)
    position = float(np.mean(psi))
    front = ShockFront(profile=psi - position, position=position)
    p, A, E = (np.zeros((n, N, N)) for _ in range(3))
    u = np.zeros((2, n, N, N))
    for k, path in enumerate(stations):
        header, rows = read_csv(path)
        col = {name: rows[:, j].reshape(N, N) for j, name in enumerate(header)}
        p[k], A[k], E[k] = col["p_hat"], col["A_hat"], col["E_hat"]
        u[0, k], u[1, k] = col["u1"], col["u2"]
    return front, SubsonicState(p=p, A=A, E=E, u=u)


def cmd_verify(cfg, out, threads, force=False):
    t0 = time.perf_counter()
    bg = _background(cfg)
    table = coefficients(bg)
    problem = _problem(cfg, table, threads)
    front, U = read_solution(out, cfg, problem)
    res = verify_solution(problem, front, U)
    bound = _thresholds(cfg)
    res["thresholds"] = bound
    res["passed"] = bool(
        max(res[k]["sup"] for k in ("euler_subsonic", "euler_supersonic", "rankine_hugoniot")) <= bound
        and res["entropy_condition"] and res["profile_mean"] <= 1e-12)
    with Staging(Path(out) / "verify") as stage:
        write_json(stage / "report.json", res)
        write_json(stage / "manifest.json", _manifest(cfg, "verify", bg, table))
        write_json(stage / "timing.json", {"wall_clock": time.perf_counter() - t0})
    return EXIT_OK if res["passed"] else EXIT_PHYSICS


def _sweep_point(cfg, mu, r_b, threads):
    try:
        bg = _background(cfg, mu=mu, r_b=r_b)
        table = coefficients(bg, check_signs=False)
    except (ChokingError, DomainError) as exc:
        return (r_b, mu, math.nan, False, math.nan), f"background: {exc}"
    min_theta = check_table(table, cfg.Q_max)["min_abs_theta"]
    if not cfg.sweep_solve:
        return (r_b, mu, min_theta, False, math.nan), None
    try:
        problem = _problem(cfg, table, threads)
        front, _, report = solve_transonic(problem, tol=cfg.tol, max_iter=cfg.max_iter,
                                           verify=False)
    except (NonConvergenceError, StepError, DomainError) as exc:
        return (r_b, mu, min_theta, False, math.nan), f"solve: {exc}"
    dev = float(np.max(np.abs(front.psi - r_b)))
    return (r_b, mu, min_theta, report.converged, dev), None


def cmd_sweep(cfg, out, threads, force=False):
    t0 = time.perf_counter()
    rows, notes = [], []
    for mu in cfg.sweep_mu:
        for r_b in cfg.sweep_r_b:
            row, note = _sweep_point(cfg, mu, r_b, threads)
            rows.append(row)
            if note:
                notes.append({"r_b": r_b, "mu": mu, "reason": note})
    with Staging(out) as stage:
        write_csv(stage / "sweep.csv", ["r_b", "mu", "min_abs_theta", "converged", "psi_deviation"],
                  rows)
        manifest = _manifest(cfg, "sweep")
        manifest["failures"] = notes
        write_json(stage / "manifest.json", manifest)
        write_json(stage / "timing.json", {"wall_clock": time.perf_counter() - t0})
    return EXIT_OK


COMMANDS = {
    "background": cmd_background,
    "scondition": cmd_scondition,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# entry point


def _exit_code(exc):
    if isinstance(exc, RunFailure):
        return exc.code
    if isinstance(exc, ConfigError):
        return EXIT_VALIDATION
    if isinstance(exc, NonConvergenceError):
        return EXIT_NONCONVERGENCE
    if isinstance(exc, SConditionViolation):
        return EXIT_SCONDITION
    if isinstance(exc, StepError):
        return _exit_code(exc.cause) if not isinstance(exc.cause, StepError) else EXIT_PHYSICS
    if isinstance(exc, (ChokingError, InadmissibleBackgroundError, DomainError)):
        return EXIT_PHYSICS
    return None


def build_parser():
    parser = argparse.ArgumentParser(prog="fanno-shock",
                                     description="Transonic shocks in a duct with friction.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--threads", default=None,
                        help=f"worker cap (default: ${THREADS_ENV} or 1)")
    parser.add_argument("--force", action="store_true",
                        help="solve even if the S-Condition fails")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = resolve_threads(args.threads)
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args.out, threads, force=args.force)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"fanno-shock {args.command}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
