"""Nondegeneracy (S-Condition) test for the mode problems of the pressure operator.

For a Fourier mode with ``q = m1^2 + m2^2`` the pressure coefficient ``p_m``
solves a second-order nonlocal ODE.  With ``W(y) = int_{r_b}^y b p_m / p_m(r_b)``
it becomes the local third-order Cauchy problem

    e1t W''' + e2t W'' + e3t W' + e4 W + e5 = 0,
    W(r_b) = 0,  W'(r_b) = b(r_b),  W''(r_b) = b'(r_b) - s_q b(r_b),

where ``s_q = (mu7 - q)/mu8`` is the Venttsel slope.  A nontrivial homogeneous
mode exists exactly when the exit value ``theta(q) = W'(L)`` vanishes.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .background import (
    ChokingError,
    CoefficientTable,
    build_background,
    coefficients,
    integrate_fanno,
    normal_shock,
)
from .gas import DomainError, PrimitiveState
from .numerics import integrate_linear_system, local_derivative

Q_MAX = 400
AXIAL_STEP = 2.5e-3
TOL_THETA_REL = 1e-8
COMPLEX_STEP = 1e-30


class DegenerateModeError(RuntimeError):
    """The leading coefficient of the mode equation vanishes."""


class TransformationError(RuntimeError):
    """``e4`` vanishes somewhere, so the differentiated problem is not equivalent."""


def is_sum_of_two_squares(q):
    """Whether ``q = m1^2 + m2^2`` for some integers."""
    q = int(q)
    if q < 0:
        return False
    m = 0
    while m * m <= q:
        r = q - m * m
        s = math.isqrt(r)
        if s * s == r:
            return True
        m += 1
    return False


def venttsel_slope(table: CoefficientTable, q):
    """``(mu7 - q)/mu8``; without friction ``mu8 = 0`` and only ``q = 0`` stays finite.

    Since ``mu7/mu8 = gamma1`` identically, the frictionless ``q = 0`` limit is
    ``gamma1 = 0``.  For ``q > 0`` the Venttsel condition then forces a zero
    trace and the slope is reported as infinite.
    """
    q = np.asarray(q, dtype=float)
    if table.mu8 == 0.0:
        return np.where(q == 0, table.gamma1, np.inf)
    return (table.mu7 - q) / table.mu8


def mode_coefficients(table: CoefficientTable, y, q, dy=None):
    """``e1t, e2t, e3t, e4, e5`` and ``b, db`` at nodes ``y`` (S,) for modes ``q`` (B,).

    Returned arrays have shape (S, B).  ``dy`` switches on complex-step
    evaluation (see :meth:`CoefficientTable.profiles`).
    """
    pr = table.profiles(y, dy=dy)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    col = lambda a: np.asarray(a)[..., None] * np.ones_like(q)
    e1, e2, e3 = col(pr["e1"]), col(pr["e2"]), col(pr["e3"])
    b, db, d2b = col(pr["b"]), col(pr["db"]), col(pr["d2b"])
    return {
        "e1t": e1 / b,
        "e2t": e2 / b - 2 * e1 * db / b**2,
        "e3t": (e3 + q) / b - (e2 * db + e1 * d2b) / b**2 + 2 * e1 * db**2 / b**3,
        "e4": col(pr["e4"]),
        "e5": col(pr["e5"]),
        "b": b,
        "db": db,
    }


def axial_grid(table: CoefficientTable, n_intervals=None):
    """Uniform grid on ``[r_b, L]`` with step about ``AXIAL_STEP`` (at least 64 intervals)."""
    r_b, L = table.bg.r_b, table.bg.L
    if n_intervals is None:
        n_intervals = max(64, int(math.ceil((L - r_b) / AXIAL_STEP)))
    return np.linspace(r_b, L, n_intervals + 1)


def _companion(c, keys=("e4", "e3t", "e2t")):
    # rows of the first-order system for the third derivative
    lead = c["e1t"]
    S, B = lead.shape
    M = np.zeros((S, B, 3, 3))
    M[..., 0, 1] = 1.0
    M[..., 1, 2] = 1.0
    for j, k in enumerate(keys):
        M[..., 2, j] = -c[k] / lead
    return M


@dataclass(frozen=True)
class CauchySolution:
    """``values[i, k, j]`` is ``W^{(j)}`` at ``grid[i]`` for mode ``q[k]``."""

    grid: np.ndarray
    q: np.ndarray
    values: np.ndarray

    @property
    def theta(self):
        return self.values[-1, :, 1]


def cauchy_W(table: CoefficientTable, q, grid=None, source_scale=1.0, initial=None):
    """Solve the third-order Cauchy problem for every mode in ``q``.

    Parameters
    ----------
    q : int or array_like
        Mode indices ``|m|^2``.
    grid : ndarray, optional
        Uniform nodes from ``r_b`` to ``L``; see :func:`axial_grid`.
    source_scale : float
        Multiplier of the ``e5`` source; 0 gives the homogeneous equation.
    initial : ndarray, optional
        Cauchy data of shape (B, 3) overriding the mode's own data.

    Raises
    ------
    DegenerateModeError
        If ``e1 = t - 1`` is not negative along the grid.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    grid = axial_grid(table) if grid is None else np.asarray(grid, dtype=float)
    t = table.profiles(grid)["t"]
    if np.any(t >= 1.0):
        raise DegenerateModeError("leading coefficient e1 = t - 1 vanishes on [r_b, L]")
    if initial is None:
        c0 = mode_coefficients(table, grid[:1], q)
        b, db = c0["b"][0], c0["db"][0]
        s = venttsel_slope(table, q)
        initial = np.stack([np.zeros_like(b), b, db - s * b], axis=-1)
    y0 = np.asarray(initial, dtype=float)[..., None]

    finite = np.all(np.isfinite(y0), axis=(1, 2))
    values = np.full((len(grid), len(q), 3), np.inf)
    if np.any(finite):
        sub_q = q[finite]

        def matrix_sub(xs):
            return _companion(mode_coefficients(table, xs, sub_q))

        def forcing_sub(i, xs):
            g = np.zeros((len(xs), len(sub_q), 3, 1))
            if source_scale != 0.0:
                c = mode_coefficients(table, xs, sub_q)
                g[..., 2, 0] = -source_scale * c["e5"] / c["e1t"]
            return g

        sol = integrate_linear_system(matrix_sub, forcing_sub, y0[finite], grid)
        values[:, finite] = sol[..., 0]
    return CauchySolution(grid=grid, q=q, values=values)


def theta(table: CoefficientTable, q, grid=None):
    """Exit functional ``W'(L)``; the same for all four trigonometric blocks of a mode."""
    return cauchy_W(table, q, grid).theta


def cauchy_residual(table: CoefficientTable, sol: CauchySolution):
    """Sup of the ODE residual with ``W'''`` from eighth-order differences of ``W''``."""
    h = sol.grid[1] - sol.grid[0]
    c = mode_coefficients(table, sol.grid, sol.q)
    W = sol.values
    W3 = local_derivative(W[..., 2], h, axis=0)
    res = c["e1t"] * W3 + c["e2t"] * W[..., 2] + c["e3t"] * W[..., 1] + c["e4"] * W[..., 0] + c["e5"]
    return float(np.max(np.abs(res)))


def transformed_coefficients(table: CoefficientTable, y, q):
    """Coefficients of the differentiated problem for ``Wt = W'``."""
    base = mode_coefficients(table, y, q)
    dc = mode_coefficients(table, y, q, dy=COMPLEX_STEP)
    der = {k: np.imag(v) / COMPLEX_STEP for k, v in dc.items()}
    e4 = base["e4"]
    # e4 (f/e4)' = f' - f e4'/e4
    twist = lambda k: der[k] - base[k] * der["e4"] / e4
    return {
        "e1t": base["e1t"],
        "a2": base["e2t"] + twist("e1t"),
        "a1": base["e3t"] + twist("e2t"),
        "a0": e4 + twist("e3t"),
        "src": twist("e5"),
    }


def crosscheck_transformed(table: CoefficientTable, q, grid=None):
    """Exit value from the differentiated route, ``Wt(L)`` with ``Wt = W'``.

    Returns ``(theta_t, profile)`` where ``profile[i, k]`` is ``Wt`` at
    ``grid[i]`` for mode ``q[k]``.

    Raises
    ------
    TransformationError
        If ``e4`` vanishes or changes sign on ``[r_b, L]``.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    grid = axial_grid(table) if grid is None else np.asarray(grid, dtype=float)
    e4 = table.profiles(grid)["e4"]
    if not (np.all(e4 > 0) or np.all(e4 < 0)):
        raise TransformationError("e4 vanishes on [r_b, L]; the transformed route is invalid")
    c0 = mode_coefficients(table, grid[:1], q)
    b, db = c0["b"][0], c0["db"][0]
    w1 = db - venttsel_slope(table, q) * b
    w2 = -(c0["e2t"][0] * w1 + c0["e3t"][0] * b + c0["e5"][0]) / c0["e1t"][0]
    y0 = np.stack([b, w1, w2], axis=-1)[..., None]

    def matrix(xs):
        return _companion(transformed_coefficients(table, xs, q), keys=("a0", "a1", "a2"))

    def forcing(i, xs):
        c = transformed_coefficients(table, xs, q)
        g = np.zeros((len(xs), len(q), 3, 1))
        g[..., 2, 0] = -c["src"] / c["e1t"]
        return g

    sol = integrate_linear_system(matrix, forcing, y0, grid)
    return sol[-1, :, 0, 0], sol[:, :, 0, 0]


def e4_sign_ok(table: CoefficientTable, grid=None):
    """``True`` when ``e4`` keeps one strict sign on ``[r_b, L]``."""
    grid = axial_grid(table) if grid is None else grid
    e4 = table.profiles(grid)["e4"]
    return bool(np.all(e4 > 0) or np.all(e4 < 0))


# ---------------------------------------------------------------------------
# scans


@dataclass
class SConditionReport:
    """Exit values on a ``(r_b, q)`` grid and the flagged near-zeros.

    ``holds[j]`` is the verdict for ``r_b_grid[j]``: no realizable mode up to
    ``Q_max`` has ``|theta| < tol_theta``.  A finite ``Q_max`` cannot certify
    all modes; ``tail_start`` records the first ``q`` after which ``|theta|``
    grows monotonically at every grid point (``None`` if it never does).
    """

    Q_max: int
    q: np.ndarray
    realizable: np.ndarray
    r_b_grid: np.ndarray
    theta: np.ndarray
    scale: np.ndarray
    tol_theta: np.ndarray
    zeros: list
    e4_sign_ok: list
    holds: list
    tail_start: int | None
    inadmissible: list = field(default_factory=list)
    note: str = field(default="S-Condition verified only for modes q <= Q_max")

    def summary(self):
        return {
            "Q_max": int(self.Q_max),
            "zeros": self.zeros,
            "e4_sign_ok": bool(all(self.e4_sign_ok)),
            "e4_sign_ok_per_r_b": [bool(v) for v in self.e4_sign_ok],
            "holds": [bool(v) for v in self.holds],
            "tail_start": self.tail_start,
            "inadmissible": self.inadmissible,
            "note": self.note,
        }

    def rows(self):
        """``(q, r_b, theta)`` rows ordered by ``r_b`` then ``q``."""
        out = []
        for j, r in enumerate(self.r_b_grid):
            for k, qq in enumerate(self.q):
                out.append((int(qq), float(r), float(self.theta[j, k])))
        return out


def _tail_start(theta_abs):
    # first index after which |theta| is nondecreasing in q at every r_b
    theta_abs = theta_abs[~np.any(np.isnan(theta_abs), axis=1)]
    n = theta_abs.shape[1]
    if theta_abs.shape[0] == 0:
        return None
    with np.errstate(invalid="ignore"):
        inc = np.all(np.diff(theta_abs, axis=1) > 0, axis=0)
    start = n - 1
    while start > 0 and inc[start - 1]:
        start -= 1
    return None if start == n - 1 else int(start)


def _evaluate(table, q):
    sol = cauchy_W(table, q)
    scale = np.max(np.abs(np.where(np.isfinite(sol.values[..., 1]), sol.values[..., 1], 0.0)),
                   axis=0)
    return sol.theta, scale


def scan_scondition(gas, L, inlet, r_b_grid, Q_max=Q_MAX, variant="linearized", threads=1,
                    refine=True, xtol=1e-10):
    """Evaluate ``theta(q, r_b)`` for ``q = 0..Q_max`` over ``r_b_grid``.

    Near-zeros are flagged when ``|theta| < tol_theta`` with
    ``tol_theta = 1e-8 * scale`` and ``scale`` the largest ``|W'|`` met for
    that mode over the axial and ``r_b`` grids.  Sign changes between
    neighbouring ``r_b`` are refined by bracketing root finding.
    """
    r_b_grid = np.asarray(r_b_grid, dtype=float)
    q = np.arange(Q_max + 1, dtype=float)
    realizable = np.array([is_sum_of_two_squares(k) for k in range(Q_max + 1)])

    def table_at(r_b):
        return coefficients(build_background(gas, L, r_b, inlet), variant=variant,
                            check_signs=False)

    def one(r_b):
        try:
            tab = table_at(r_b)
        except (ChokingError, DomainError) as exc:
            nan = np.full(len(q), np.nan)
            return nan, np.zeros(len(q)), False, str(exc)
        th, sc = _evaluate(tab, q)
        return th, sc, e4_sign_ok(tab), None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, r_b_grid))
    else:
        results = [one(r) for r in r_b_grid]
    th = np.array([r[0] for r in results])
    scale = np.max(np.array([r[1] for r in results]), axis=0)
    e4ok = [r[2] for r in results]
    inadmissible = [{"r_b": float(r), "reason": res[3]} for r, res in zip(r_b_grid, results)
                    if res[3] is not None]
    tol = TOL_THETA_REL * scale

    zeros = []
    finite = np.isfinite(th)
    for j, r_b in enumerate(r_b_grid):
        for k in np.nonzero(finite[j] & (np.abs(th[j]) < tol))[0]:
            zeros.append({"q": int(q[k]), "r_b": float(r_b), "theta": float(th[j, k]),
                          "realizable": bool(realizable[k]), "kind": "small"})
    if refine and len(r_b_grid) > 1:
        for k in range(len(q)):
            for j in range(len(r_b_grid) - 1):
                a, b = th[j, k], th[j + 1, k]
                if not (np.isfinite(a) and np.isfinite(b)) or a * b >= 0:
                    continue
                f = lambda r: float(theta(table_at(r), q[k])[0])
                root = brentq(f, r_b_grid[j], r_b_grid[j + 1], xtol=xtol)
                zeros.append({"q": int(q[k]), "r_b": float(root), "theta": 0.0,
                              "realizable": bool(realizable[k]), "kind": "sign_change"})
    holds = []
    for j in range(len(r_b_grid)):
        bad = finite[j] & realizable & (np.abs(th[j]) < tol)
        holds.append(not bool(np.any(bad)) and not bool(np.all(np.isnan(th[j]))))
    return SConditionReport(
        Q_max=Q_max, q=q, realizable=realizable, r_b_grid=r_b_grid, theta=th, scale=scale,
        tol_theta=tol, zeros=zeros, e4_sign_ok=e4ok, holds=holds, inadmissible=inadmissible,
        tail_start=_tail_start(np.abs(th)),
    )


def exit_limit(gas, L, inlet, exponents=range(4, 10), q=0, variant="linearized"):
    """``theta(q, L - delta)`` for ``delta = 2^-k L`` and its extrapolation to ``delta = 0``.

    Returns ``(deltas, thetas, extrapolated, target)`` with ``target`` the
    exact limit ``b(mu, L) = exp(2 mu L)/rho_b(L)``, ``rho_b(L)`` being the
    density just behind a shock standing at the exit.
    """
    deltas = np.array([2.0 ** (-k) * L for k in exponents])
    thetas = []
    for d in deltas:
        tab = coefficients(build_background(gas, L, L - d, inlet), variant=variant,
                           check_signs=False)
        thetas.append(float(theta(tab, q)[0]))
    thetas = np.array(thetas)
    # polynomial extrapolation in delta through the finest points
    deg = min(3, len(deltas) - 1)
    coef = np.polyfit(deltas[-(deg + 1):], thetas[-(deg + 1):], deg)
    extrapolated = float(np.polyval(coef, 0.0))
    sup = integrate_fanno(inlet, (0.0, L), gas)
    shocked = normal_shock(PrimitiveState(p=sup.p[-1], rho=sup.rho[-1],
                                          u=np.array([sup.u[-1], 0.0, 0.0])), gas)
    target = math.exp(2 * gas.mu * L) / float(shocked.rho)
    return deltas, thetas, extrapolated, target


def check_table(table: CoefficientTable, Q_max=Q_MAX):
    """S-Condition for one coefficient table: ``theta`` over ``q = 0..Q_max`` and its near-zeros.

    Uses the same relative threshold as :func:`scan_scondition`, with the
    scale taken from this table alone.

    Returns
    -------
    dict
        ``holds``, ``zeros`` (realizable ``q`` with ``|theta| < tol_theta``),
        ``min_abs_theta`` over realizable modes, ``q`` and ``theta``.
    """
    q = np.arange(Q_max + 1, dtype=float)
    realizable = np.array([is_sum_of_two_squares(k) for k in range(Q_max + 1)])
    th, scale = _evaluate(table, q)
    tol = TOL_THETA_REL * scale
    bad = realizable & np.isfinite(th) & (np.abs(th) < tol)
    finite = realizable & np.isfinite(th)
    return {
        "holds": bool(not np.any(bad)) and bool(np.any(finite)),
        "zeros": [{"q": int(q[k]), "theta": float(th[k])} for k in np.nonzero(bad)[0]],
        "min_abs_theta": float(np.min(np.abs(th[finite]))) if np.any(finite) else math.nan,
        "q": q,
        "theta": th,
    }
