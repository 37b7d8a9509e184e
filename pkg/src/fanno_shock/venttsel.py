"""Elliptic pressure problem with a Venttsel boundary condition.

On the cylinder ``M = [r_b, L] x T^2`` the pressure perturbation solves

    e1 d0^2 p - Lap' p + e2 d0 p + e3 p + e4 int_{r_b}^{y0} b p + e5 p|_{r_b} = f,
    Lap' p + mu7 p + mu8 d0 p = h0   on y0 = r_b,
    p = h1                            on y0 = L.

Fields are sampled on ``n0`` uniform axial nodes times an ``N x N`` torus grid
and separated into the four real trigonometric blocks.  Each Fourier mode is
then a two-point problem for a nonlocal second-order ODE, solved by
superposing three Cauchy problems for the primitive ``P = int b p``.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.integrate import cumulative_simpson

from .background import CoefficientTable
from .numerics import (
    StageInterpolator,
    fd_derivative,
    gauss_legendre_tableau,
    integrate_linear_system,
    torus_laplacian,
)
from .scondition import mode_coefficients

COND_MAX = 1e12
TAIL_TOL = 1e-10
LIFT_FRACTION = 0.25
STAGES = 4
_LIFT_QUAD = np.polynomial.legendre.leggauss(16)


class SConditionViolation(RuntimeError):
    """The superposition system of some mode is singular or ill conditioned."""

    def __init__(self, q, cond):
        super().__init__(f"S-Condition violated at q={q:g} (cond={cond:.3g})")
        self.q = q
        self.cond = cond


class TruncationWarning(UserWarning):
    """Energy of the data outside the retained modes is not negligible."""


# ---------------------------------------------------------------------------
# torus analysis


def torus_nodes(N):
    """Nodes ``2 pi j / N``, ``j = 0..N-1``."""
    return 2.0 * np.pi * np.arange(N) / N


def retained_modes(N):
    """Mode indices ``0..N/2-1`` kept per direction (the Nyquist mode is dropped)."""
    if N < 2 or N & (N - 1):
        raise ValueError(f"N must be a power of two, got {N}")
    return np.arange(N // 2)


def lambda_weights(K):
    """``lambda_m`` on a K x K index grid: 1/4 at the origin, 1/2 on the axes, 1 inside."""
    axis = np.where(np.arange(K) == 0, 0.5, 1.0)
    return np.outer(axis, axis)


def mode_numbers(K):
    """``q = m1^2 + m2^2`` on a K x K index grid."""
    m = np.arange(K)
    return (m[:, None] ** 2 + m[None, :] ** 2).astype(float)


def _trig(N):
    m = retained_modes(N)
    y = torus_nodes(N)
    return np.cos(np.outer(m, y)), np.sin(np.outer(m, y))


def analyze(f):
    """Block coefficients ``(1/pi^2) int_T2 f trig1 trig2``.

    Parameters
    ----------
    f : ndarray
        Nodal values with the torus on the last two axes, shape (..., N, N).

    Returns
    -------
    ndarray
        Shape (..., 4, K, K) with ``K = N/2``; blocks are cos.cos, sin.cos,
        cos.sin and sin.sin, so that ``f = sum lambda_m (...)``.
    """
    f = np.asarray(f, dtype=float)
    N = f.shape[-1]
    if f.shape[-2] != N:
        raise ValueError("torus grid must be square")
    C, S = _trig(N)
    scale = 4.0 / N**2
    pairs = ((C, C), (S, C), (C, S), (S, S))
    return np.stack([scale * np.einsum("aj,...jk,bk->...ab", A, f, B) for A, B in pairs], axis=-3)


def synthesize(coeffs, N):
    """Inverse of :func:`analyze` on the ``N x N`` grid."""
    coeffs = np.asarray(coeffs, dtype=float)
    K = coeffs.shape[-1]
    if K != N // 2:
        raise ValueError(f"{K} modes per direction do not match N={N}")
    C, S = _trig(N)
    w = coeffs * lambda_weights(K)
    pairs = ((C, C), (S, C), (C, S), (S, S))
    return sum(np.einsum("...ab,aj,bk->...jk", w[..., i, :, :], A, B) for i, (A, B) in enumerate(pairs))


def tail_fraction(f):
    """Share of the nodal energy of ``f`` outside the retained modes."""
    f = np.asarray(f, dtype=float)
    total = float(np.sum(f * f))
    if total == 0.0:
        return 0.0
    kept = synthesize(analyze(f), f.shape[-1])
    return float(np.sum((f - kept) ** 2)) / total


# ---------------------------------------------------------------------------
# single-mode two-point problems


@dataclass(frozen=True)
class ModeBVPSolution:
    """Mode coefficient ``p`` and its derivative on ``grid``.

    ``c`` holds the superposition constants ``(c1, c2)`` = ``(P'(r_b), P''(r_b))``
    and ``cond`` the condition number of the row-equilibrated 2x2 system.
    """

    grid: np.ndarray
    q: float
    p: np.ndarray
    dp: np.ndarray
    c: np.ndarray
    cond: float
    bc_residual: float


def _equilibrated_cond(M):
    scale = np.max(np.abs(M), axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        Ms = M / np.where(scale > 0, scale, 1.0)
        cond = np.linalg.cond(Ms)
    cond = np.where(np.all(scale > 0, axis=(-2, -1)) & np.isfinite(cond), cond, np.inf)
    return cond


def _solve_modes(table: CoefficientTable, q, F, h0, h1, grid, extra_forcing=None):
    """Batched superposition solve.

    ``F`` has shape (n, B); ``h0`` and ``h1`` shape (B,).  ``extra_forcing(i, xs)``
    may add an (S, B) forcing evaluated exactly at the stage points.
    Returns ``p, dp`` of shape (n, B), ``c`` (B, 2) and ``cond`` (B,).
    """
    q = np.asarray(q, dtype=float)
    B = len(q)
    _, _, cs = gauss_legendre_tableau(STAGES)
    at_stages = StageInterpolator(len(grid) - 1, cs)(np.asarray(F, dtype=float).T)  # (B, n-1, S)
    c0 = mode_coefficients(table, grid[:1], q)
    b0, db0 = c0["b"][0, 0], c0["db"][0, 0]

    def matrix(xs):
        c = mode_coefficients(table, xs, q)
        M = np.zeros((len(xs), B, 3, 3))
        M[..., 0, 1] = 1.0
        M[..., 1, 2] = 1.0
        M[..., 2, 0] = -c["e4"] / c["e1t"]
        M[..., 2, 1] = -c["e3t"] / c["e1t"]
        M[..., 2, 2] = -c["e2t"] / c["e1t"]
        return M

    def forcing(i, xs):
        c = mode_coefficients(table, xs, q)
        g = np.zeros((len(xs), B, 3, 3))
        g[..., 2, 0] = -c["e5"] / (b0 * c["e1t"])
        f = at_stages[:, i, :].T
        if extra_forcing is not None:
            f = f + extra_forcing(i, xs)
        g[..., 2, 2] = f / c["e1t"]
        return g

    y0 = np.zeros((B, 3, 3))
    y0[:, 1, 0] = 1.0  # P1: P'(r_b) = 1, carries the trace term
    y0[:, 2, 1] = 1.0  # P2: P''(r_b) = 1
    sol = integrate_linear_system(matrix, forcing, y0, grid, stages=STAGES)

    # Venttsel row in (c1, c2):  mu8 (c2 - c1 b'/b)/b + (mu7 - q) c1/b = h0
    # exit row:                  P1'(L) c1 + P2'(L) c2 = b(L) h1 - Pf'(L)
    bL = mode_coefficients(table, grid[-1:], q[:1])["b"][0, 0]
    M = np.zeros((B, 2, 2))
    M[:, 0, 0] = ((table.mu7 - q) - table.mu8 * db0 / b0) / b0
    M[:, 0, 1] = table.mu8 / b0
    M[:, 1, 0] = sol[-1, :, 1, 0]
    M[:, 1, 1] = sol[-1, :, 1, 1]
    rhs = np.stack([np.asarray(h0, dtype=float), bL * np.asarray(h1, dtype=float) - sol[-1, :, 1, 2]], axis=-1)
    cond = _equilibrated_cond(M)
    bad = np.flatnonzero(cond > COND_MAX)
    if len(bad):
        k = bad[np.argmax(cond[bad])]
        raise SConditionViolation(float(q[k]), float(cond[k]))
    c = np.linalg.solve(M, rhs[..., None])[..., 0]

    weights = np.stack([c[:, 0], c[:, 1], np.ones(B)], axis=-1)  # (B, 3)
    P = np.einsum("nbjr,br->nbj", sol, weights)
    prof = table.profiles(grid)
    b, db = prof["b"][:, None], prof["db"][:, None]
    p = P[..., 1] / b
    dp = (P[..., 2] * b - P[..., 1] * db) / b**2
    return p, dp, c, cond


def solve_mode_bvp(q, f_m, h0_m, table: CoefficientTable, grid, h1_m=0.0):
    """Solve one mode problem by superposition of three Cauchy problems.

    Parameters
    ----------
    q : float
        ``|m|^2``.
    f_m : ndarray
        Right-hand side coefficient at the nodes of ``grid``.
    h0_m, h1_m : float
        Venttsel and exit data.
    table : CoefficientTable
    grid : ndarray
        Uniform axial nodes from ``r_b`` to ``L``.

    Raises
    ------
    SConditionViolation
        If the 2x2 superposition system has condition number above 1e12.
    """
    grid = np.asarray(grid, dtype=float)
    f_m = np.asarray(f_m, dtype=float)
    p, dp, c, cond = _solve_modes(table, [q], f_m[:, None], [h0_m], [h1_m], grid)
    p, dp = p[:, 0], dp[:, 0]
    vent = table.mu8 * dp[0] + (table.mu7 - q) * p[0] - h0_m
    bc = max(abs(vent), abs(p[-1] - h1_m))
    return ModeBVPSolution(grid=grid, q=float(q), p=p, dp=dp, c=c[0], cond=float(cond[0]),
                           bc_residual=float(bc))


def mode_ode_residual(sol: ModeBVPSolution, f_m, table: CoefficientTable):
    """Nodal residual of the nonlocal mode ODE with fourth-order differences."""
    grid = sol.grid
    h = grid[1] - grid[0]
    pr = table.profiles(grid)
    d2p = fd_derivative(sol.dp, h)
    integral = cumulative_simpson(pr["b"] * sol.p, x=grid, initial=0.0)
    return (pr["e1"] * d2p + pr["e2"] * sol.dp + (pr["e3"] + sol.q) * sol.p
            + pr["e4"] * integral + pr["e5"] * sol.p[0] - f_m)


def collocation_mode_bvp(table: CoefficientTable, q, f_fn, h0_m, h1_m=0.0, n=48):
    """Chebyshev collocation of one mode problem, solved directly for ``p``.

    An independent discretization: nodal values at ``n`` Gauss-Lobatto
    points, spectral differentiation and spectral cumulative integration for
    the nonlocal term.  Returns a callable evaluating ``p`` anywhere on
    ``[r_b, L]``.
    """
    r_b, L = table.bg.r_b, table.bg.L
    half = 0.5 * (L - r_b)
    x = np.cos(np.pi * np.arange(n) / (n - 1))  # x[0] = 1 at L, x[-1] = -1 at r_b
    y = r_b + (x + 1.0) * half
    V = cheb.chebvander(x, n - 1)
    Vinv = np.linalg.inv(V)
    eye = np.eye(n)
    D1 = V @ np.vstack([cheb.chebder(eye, axis=0), np.zeros((1, n))]) @ Vinv / half
    D2 = D1 @ D1
    Icum = cheb.chebvander(x, n) @ cheb.chebint(eye, lbnd=-1, axis=0) @ Vinv * half

    pr = table.profiles(y)
    A = (pr["e1"][:, None] * D2 + pr["e2"][:, None] * D1 + np.diag(pr["e3"] + q)
         + pr["e4"][:, None] * (Icum * pr["b"][None, :]))
    A[:, -1] += pr["e5"]
    rhs = np.asarray(f_fn(y), dtype=float).copy()
    A[0] = eye[0]
    rhs[0] = h1_m
    A[-1] = table.mu8 * D1[-1] + (table.mu7 - q) * eye[-1]
    rhs[-1] = h0_m
    values = np.linalg.solve(A, rhs)
    coef = Vinv @ values

    def evaluate(yy):
        return cheb.chebval((np.asarray(yy, dtype=float) - r_b) / half - 1.0, coef)

    return evaluate


# ---------------------------------------------------------------------------
# full problem


def lift_start(grid, fraction=LIFT_FRACTION):
    """First node of ``grid`` at or beyond ``r_b + fraction (L - r_b)``.

    Starting the blend on a node keeps the lift forcing smooth inside every
    integration interval.
    """
    grid = np.asarray(grid, dtype=float)
    target = grid[0] + fraction * (grid[-1] - grid[0])
    return float(grid[np.searchsorted(grid, target - 1e-12 * (grid[-1] - grid[0]))])


def lift_profile(y, a, L):
    """Quintic blend ``s`` with ``s = 0`` on ``[r_b, a]``, ``s(L) = 1``, ``s'(L) = s''(L) = 0``.

    The blend is C2 at ``a``.  Returns ``(s, s', s'')``.
    """
    w = L - a
    tau = np.clip((np.asarray(y, dtype=float) - a) / w, 0.0, 1.0)
    s = tau**3 * (10 - 15 * tau + 6 * tau**2)
    ds = 30 * tau**2 * (1 - tau) ** 2 / w
    d2s = 60 * tau * (1 - tau) * (1 - 2 * tau) / w**2
    return s, ds, d2s


def _lift_operator(table: CoefficientTable, xs, a):
    # e1 s'' + e2 s' + e3 s + e4 int b s, and s itself, at the points xs
    L = table.bg.L
    s, ds, d2s = lift_profile(xs, a, L)
    pr = table.profiles(xs)
    xg, wg = _LIFT_QUAD
    integral = np.zeros(len(xs))
    for k, x in enumerate(xs):
        if x > a:
            nodes = a + (xg + 1.0) * 0.5 * (x - a)
            integral[k] = 0.5 * (x - a) * np.sum(
                wg * table.profiles(nodes)["b"] * lift_profile(nodes, a, L)[0])
    return pr["e1"] * d2s + pr["e2"] * ds + pr["e3"] * s + pr["e4"] * integral, s


@dataclass(frozen=True)
class VenttselSolution:
    """Solution on the cylinder grid.

    ``p`` and ``d0p`` have shape (n0, N, N); ``trace`` and ``d0_trace`` are
    their restrictions to ``y0 = r_b``.  ``max_q`` is the largest retained
    ``|m|^2``; ``covered`` says whether the S-Condition scan reached it.
    """

    grid: np.ndarray
    p: np.ndarray
    d0p: np.ndarray
    max_cond: float
    max_q: float
    covered: bool
    tail: float

    @property
    def trace(self):
        return self.p[0]

    @property
    def d0_trace(self):
        return self.d0p[0]


def solve_venttsel(f, h0, h1, table: CoefficientTable, grid, Q_max=None, threads=1,
                   lift_fraction=LIFT_FRACTION):
    """Solve the Venttsel problem mode by mode.

    Parameters
    ----------
    f : ndarray
        Right-hand side, shape (n0, N, N) on ``grid`` times the torus.
    h0, h1 : ndarray
        Boundary data on the torus, shape (N, N).
    table : CoefficientTable
    grid : ndarray
        Uniform axial nodes from ``r_b`` to ``L``.
    Q_max : int, optional
        Range of the S-Condition scan backing this solve; ``covered`` reports
        whether it includes every retained mode.
    threads : int
        Mode batches solved concurrently.
    lift_fraction : float
        Share of ``[r_b, L]`` on which the exit lift vanishes; the blend
        starts at the next grid node.

    Returns
    -------
    VenttselSolution
    """
    grid = np.asarray(grid, dtype=float)
    f = np.asarray(f, dtype=float)
    N = f.shape[-1]
    if f.shape != (len(grid), N, N):
        raise ValueError(f"f has shape {f.shape}, expected {(len(grid), N, N)}")
    tail = tail_fraction(f)
    if tail > TAIL_TOL:
        warnings.warn(f"data energy outside the retained modes is {tail:.2e} of the total",
                      TruncationWarning, stacklevel=2)

    K = N // 2
    q_grid = mode_numbers(K)
    q = np.broadcast_to(q_grid, (4, K, K)).reshape(-1)
    F = analyze(f).reshape(len(grid), -1)
    H0 = analyze(h0).reshape(-1)
    H1 = analyze(h1).reshape(-1)

    # exit data enter through the lift h1(y') s(y0); the remainder has zero exit data
    _, cs = gauss_legendre_tableau(STAGES)[1:]
    step = grid[1] - grid[0]
    stage_points = (grid[:-1, None] + cs[None, :] * step).reshape(-1)
    a = lift_start(grid, lift_fraction)
    lift_L, lift_s = _lift_operator(table, stage_points, a)
    lift_L = lift_L.reshape(len(grid) - 1, STAGES)
    lift_s = lift_s.reshape(len(grid) - 1, STAGES)

    def batch(idx):
        qb, h1b = q[idx], H1[idx]

        def extra(i, xs):
            return -(lift_L[i][:, None] + lift_s[i][:, None] * qb[None, :]) * h1b[None, :]

        return _solve_modes(table, qb, F[:, idx], H0[idx], np.zeros(len(idx)), grid, extra)

    chunks = np.array_split(np.arange(len(q)), max(1, min(threads, len(q))))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(batch, chunks))
    else:
        parts = [batch(idx) for idx in chunks]
    p_modes = np.concatenate([r[0] for r in parts], axis=1)
    dp_modes = np.concatenate([r[1] for r in parts], axis=1)
    cond = np.concatenate([r[3] for r in parts])

    s, ds, _ = lift_profile(grid, a, table.bg.L)
    shape = (len(grid), 4, K, K)
    p = synthesize(p_modes.reshape(shape), N) + s[:, None, None] * synthesize(analyze(h1), N)[None]
    d0p = synthesize(dp_modes.reshape(shape), N) + ds[:, None, None] * synthesize(analyze(h1), N)[None]
    max_q = float(2 * (K - 1) ** 2)
    covered = Q_max is not None and Q_max >= max_q
    return VenttselSolution(grid=grid, p=p, d0p=d0p, max_cond=float(np.max(cond)),
                            max_q=max_q, covered=bool(covered), tail=tail)


# ---------------------------------------------------------------------------
# operators


def cumulative_integral(values, grid):
    """``int_{r_b}^{y0} values`` along axis 0 by composite Simpson quadrature."""
    return cumulative_simpson(np.asarray(values, dtype=float), x=grid, axis=0, initial=0.0)


def apply_L(p, table: CoefficientTable, grid):
    """Apply the pressure operator to nodal values ``p`` of shape (n0, N, N).

    Axial derivatives use fourth-order differences, the torus Laplacian is
    spectral and the nonlocal term uses composite Simpson quadrature.
    """
    p = np.asarray(p, dtype=float)
    grid = np.asarray(grid, dtype=float)
    h = grid[1] - grid[0]
    pr = table.profiles(grid)
    col = lambda k: pr[k][:, None, None]
    integral = cumulative_integral(col("b") * p, grid)
    return (col("e1") * fd_derivative(p, h, order=2) - torus_laplacian(p)
            + col("e2") * fd_derivative(p, h) + col("e3") * p + col("e4") * integral
            + col("e5") * p[0][None])


def venttsel_residual(trace, d0_trace, h0, table: CoefficientTable):
    """``Lap' trace + mu7 trace + mu8 d0_trace - h0`` on the torus."""
    trace = np.asarray(trace, dtype=float)
    return torus_laplacian(trace) + table.mu7 * trace + table.mu8 * np.asarray(d0_trace) - h0


def default_grid(table: CoefficientTable, n0=200):
    """``n0`` uniform nodes on ``[r_b, L]``."""
    if n0 < 9:
        raise ValueError("need at least 9 axial nodes")
    return np.linspace(table.bg.r_b, table.bg.L, int(n0))


__all__ = [
    "COND_MAX",
    "ModeBVPSolution",
    "SConditionViolation",
    "TruncationWarning",
    "VenttselSolution",
    "analyze",
    "apply_L",
    "collocation_mode_bvp",
    "cumulative_integral",
    "default_grid",
    "lambda_weights",
    "lift_profile",
    "lift_start",
    "mode_numbers",
    "mode_ode_residual",
    "retained_modes",
    "solve_mode_bvp",
    "solve_venttsel",
    "synthesize",
    "tail_fraction",
    "torus_nodes",
    "venttsel_residual",
]
