"""Hyperbolic parts of the transonic problem.

Supersonic marching of the steady Euler system with friction along ``x0``,
streamline tracing in the subsonic cylinder, Lagrangian transport of the
entropy function, the Bernoulli quantity and the tangential velocity, and the
torus div-curl solve for the tangential velocity on the shock front.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from .background import BackgroundSolution
from .gas import DomainError, GasParams, PrimitiveState, bernoulli
from .numerics import (
    StageInterpolator,
    TorusInterpolant,
    fd_derivative,
    torus_derivative,
    wavenumbers,
)

MARCH_STEP = 2.5e-3
NEWTON_TOL = 1e-13
NEWTON_MAX = 30


class SupersonicityLost(DomainError):
    """The marched state left the supersonic branch."""

    def __init__(self, message, x0):
        super().__init__(message)
        self.x0 = x0


class StreamlineError(DomainError):
    """Axial velocity falls below the admissible floor."""


# ---------------------------------------------------------------------------
# supersonic marching


def _dealias(N):
    k = np.abs(wavenumbers(N))
    keep = k <= N / 3.0
    return np.outer(keep, keep)


def _spectral_d(f, axis, mask):
    fh = np.fft.fft2(f, axes=(-2, -1)) * mask
    k = wavenumbers(f.shape[-1])
    shape = [1, 1]
    shape[axis] = -1
    return np.real(np.fft.ifft2(1j * k.reshape(shape) * fh, axes=(-2, -1)))


def march_derivative(x, N):
    """Derivative operator consistent with the march: fourth-order differences
    along ``x0`` and dealiased spectral derivatives on the torus."""
    h = float(x[1] - x[0])
    mask = _dealias(N)

    def deriv(f, j):
        if j == 0:
            return fd_derivative(f, h, axis=0)
        return _spectral_d(f, j - 1, mask)

    return deriv


def axial_flux(state: PrimitiveState, gamma):
    """``(rho u0, rho u0^2 + p, rho u0 u1, rho u0 u2, rho u0 E)``."""
    m = state.rho * state.u[0]
    E = bernoulli(state.p, state.rho, state.u, gamma)
    return np.stack([m, m * state.u[0] + state.p, m * state.u[1], m * state.u[2], m * E])


def state_from_flux(W, gamma, x0=None):
    """Supersonic state with axial flux ``W``.

    ``u0`` is the larger root of
    ``(g+1)/(2(g-1)) u0^2 - g/(g-1) (P/m) u0 + E - |u'|^2/2 = 0``.
    """
    m, P, mu1, mu2, mE = W
    u1, u2, E = mu1 / m, mu2 / m, mE / m
    g = gamma
    a = (g + 1.0) / (2.0 * (g - 1.0))
    bb = g / (g - 1.0) * P / m
    c = E - 0.5 * (u1 * u1 + u2 * u2)
    disc = bb * bb - 4.0 * a * c
    if np.any(disc < 0):
        raise SupersonicityLost("axial flux admits no real state (sonic point passed)", x0)
    u0 = (bb + np.sqrt(disc)) / (2.0 * a)
    rho = m / u0
    p = P - m * u0
    if np.any(p <= 0) or np.any(rho <= 0):
        raise SupersonicityLost("non-positive pressure or density during the march", x0)
    return PrimitiveState(p=p, rho=rho, u=np.stack([u0, u1, u2]))


def _march_rhs(W, gas: GasParams, mask, x0):
    s = state_from_flux(W, gas.gamma, x0)
    rho, u, p = s.rho, s.u, s.p
    E = bernoulli(p, rho, u, gas.gamma)
    out = np.zeros_like(W)
    for beta in (1, 2):
        mb = rho * u[beta]
        F = np.stack([mb, mb * u[0], mb * u[1] + (p if beta == 1 else 0.0),
                      mb * u[2] + (p if beta == 2 else 0.0), mb * E])
        out -= _spectral_d(F, beta - 1, mask)
    fr = gas.mu * rho * u[0] ** 2
    out[1] -= fr
    out[4] -= fr * u[0]
    return out


@dataclass(frozen=True)
class SupersonicField:
    """Marched supersonic state on ``x`` (uniform) times the torus."""

    x: np.ndarray
    state: PrimitiveState
    gas: GasParams

    def sample(self, x0):
        """State at axial positions ``x0`` (N, N), one per torus column.

        Local degree-7 Lagrange interpolation along each column.
        """
        x0 = np.asarray(x0, dtype=float)
        h = self.x[1] - self.x[0]
        n = len(self.x)
        width = 8
        pos = (x0 - self.x[0]) / h
        if np.any(pos < -1e-9) or np.any(pos > n - 1 + 1e-9):
            raise ValueError("sample position outside the marched range")
        start = np.clip(np.floor(pos).astype(int) - width // 2 + 1, 0, n - width)
        offsets = np.arange(width)
        nodes = start[..., None] + offsets
        rel = pos[..., None] - nodes
        w = np.ones(nodes.shape)
        for j in range(width):
            for k in range(width):
                if k != j:
                    w[..., j] *= rel[..., k] / (j - k)
        ii, jj = np.meshgrid(np.arange(x0.shape[0]), np.arange(x0.shape[1]), indexing="ij")

        def interp(f):
            return np.sum(w * f[nodes, ii[..., None], jj[..., None]], axis=-1)

        s = self.state
        return PrimitiveState(p=interp(s.p), rho=interp(s.rho),
                              u=np.stack([interp(s.u[k]) for k in range(3)]))

    def deviation(self, bg: BackgroundSolution):
        """Sup norm of ``(p, rho, u) - U_b^-`` over the marched field."""
        ref = bg.minus(self.x)
        s = self.state
        dev = [np.abs(s.p - ref["p"][:, None, None]), np.abs(s.rho - ref["rho"][:, None, None]),
               np.abs(s.u[0] - ref["u"][:, None, None]), np.abs(s.u[1]), np.abs(s.u[2])]
        return float(max(np.max(d) for d in dev))


def march_supersonic(inlet: PrimitiveState, x_max, gas: GasParams, step=MARCH_STEP):
    """March the steady Euler system with friction from ``x0 = 0`` to ``x_max``.

    Parameters
    ----------
    inlet : PrimitiveState
        Fields of shape (N, N) on the torus at ``x0 = 0``; must be supersonic.
    x_max : float
        End of the march.
    step : float
        Upper bound on the RK4 step; the actual step divides ``x_max``.

    Raises
    ------
    SupersonicityLost
        With ``x0`` set to the location where the state leaves the branch.
    """
    c2 = gas.gamma * inlet.p / inlet.rho
    if np.any(inlet.u[0] ** 2 <= c2):
        raise SupersonicityLost("inlet is not supersonic", 0.0)
    N = inlet.p.shape[-1]
    n = max(int(math.ceil(x_max / step)), 1)
    x = np.linspace(0.0, x_max, n + 1)
    h = x[1] - x[0]
    mask = _dealias(N)
    W = axial_flux(inlet, gas.gamma)
    out = np.empty((n + 1,) + W.shape)
    out[0] = W
    for i in range(n):
        xi = x[i]
        k1 = _march_rhs(W, gas, mask, xi)
        k2 = _march_rhs(W + 0.5 * h * k1, gas, mask, xi + 0.5 * h)
        k3 = _march_rhs(W + 0.5 * h * k2, gas, mask, xi + 0.5 * h)
        k4 = _march_rhs(W + h * k3, gas, mask, xi + h)
        W = W + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = W
    s = state_from_flux(np.moveaxis(out, 0, 1), gas.gamma)
    c2 = gas.gamma * s.p / s.rho
    sub = np.argwhere(s.u[0] ** 2 <= c2)
    if len(sub):
        raise SupersonicityLost("flow became subsonic during the march", float(x[sub[0][0]]))
    return SupersonicField(x=x, state=s, gas=gas)


# ---------------------------------------------------------------------------
# streamlines


@dataclass(frozen=True)
class StreamlineMap:
    """Integral curves of ``u'/u0`` from the torus nodes at ``y0 = r_b``.

    ``forward[i]`` holds ``phi(grid[i], seed)`` for the node seeds (unwrapped,
    shape (2, N, N)); ``inverse[i]`` holds ``phi_{grid[i]}^{-1}(y')`` for the
    node targets ``y'``.
    """

    grid: np.ndarray
    forward: np.ndarray
    inverse: np.ndarray

    @property
    def N(self):
        return self.forward.shape[-1]

    def displacement(self):
        """``max |phi^{-1}(y') - y'|`` over the grid (Euclidean)."""
        nodes = _torus_points(self.N)
        return float(np.max(np.sqrt(np.sum((self.inverse - nodes[None]) ** 2, axis=1))))

    def pull_back(self, seed_values):
        """Evaluate seed data at ``phi_{y0}^{-1}(y')`` on every node.

        ``seed_values`` is either (N, N), one value per seed, or (n, N, N)
        with values varying along each streamline.
        """
        v = np.asarray(seed_values, dtype=float)
        if v.ndim == 2:
            it = TorusInterpolant(v)
            return np.stack([it(self.inverse[i, 0], self.inverse[i, 1]) for i in range(len(self.grid))])
        return np.stack([TorusInterpolant(v[i])(self.inverse[i, 0], self.inverse[i, 1])
                         for i in range(len(self.grid))])

    def along(self, field):
        """Values of a nodal field (n, N, N) along every streamline, (n, N, N)."""
        field = np.asarray(field, dtype=float)
        return np.stack([TorusInterpolant(field[i])(self.forward[i, 0], self.forward[i, 1])
                         for i in range(len(self.grid))])


def _torus_points(N):
    y = 2.0 * np.pi * np.arange(N) / N
    return np.stack(np.meshgrid(y, y, indexing="ij"))


def _invert(disp, targets):
    # Newton for ybar + d(ybar) = y'
    it = TorusInterpolant(disp)
    ybar = targets - it(targets[0], targets[1])
    for _ in range(NEWTON_MAX):
        d = it(ybar[0], ybar[1])
        res = ybar + d - targets
        if np.max(np.abs(res)) < NEWTON_TOL:
            break
        j11 = 1.0 + it(ybar[0], ybar[1], derivative=1)[0]
        j12 = it(ybar[0], ybar[1], derivative=2)[0]
        j21 = it(ybar[0], ybar[1], derivative=1)[1]
        j22 = 1.0 + it(ybar[0], ybar[1], derivative=2)[1]
        det = j11 * j22 - j12 * j21
        ybar = ybar - np.stack([(j22 * res[0] - j12 * res[1]) / det, (j11 * res[1] - j21 * res[0]) / det])
    else:
        raise StreamlineError("inverse streamline map did not converge")
    return ybar


def trace_streamlines(u, grid, delta=None):
    """RK4 integration of ``dy'/dy0 = u'/u0`` from every torus node at ``grid[0]``.

    Parameters
    ----------
    u : ndarray
        Velocity (3, n, N, N) on the cylinder nodes.
    grid : ndarray
        Uniform axial nodes.
    delta : float, optional
        Floor for ``u0``; defaults to half the smallest ``u0``.

    Raises
    ------
    StreamlineError
        If ``u0 < delta`` anywhere.
    """
    u = np.asarray(u, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if delta is None:
        delta = 0.5 * float(np.min(u[0]))
    if not delta > 0 or np.any(u[0] < delta):
        raise StreamlineError(f"u0 falls below the floor {delta:g}")
    n, N = u.shape[1], u.shape[-1]
    slope = u[1:] / u[0]  # (2, n, N, N)
    mid = StageInterpolator(n - 1, np.array([0.5]))(np.moveaxis(slope, 1, -1))[..., 0]  # (2, N, N, n-1)
    mid = np.moveaxis(mid, -1, 1)
    seeds = _torus_points(N)
    forward = np.empty((n, 2, N, N))
    forward[0] = seeds
    inverse = np.empty((n, 2, N, N))
    inverse[0] = seeds
    h = grid[1] - grid[0]
    y = seeds.copy()
    for i in range(n - 1):
        a = TorusInterpolant(slope[:, i])
        m = TorusInterpolant(mid[:, i])
        b = TorusInterpolant(slope[:, i + 1])
        k1 = a(y[0], y[1])
        k2 = m(y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1])
        k3 = m(y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1])
        k4 = b(y[0] + h * k3[0], y[1] + h * k3[1])
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        forward[i + 1] = y
        inverse[i + 1] = _invert(y - seeds, seeds)
    return StreamlineMap(grid=grid, forward=forward, inverse=inverse)


def displacement_bound(smap: StreamlineMap, u, delta):
    """Measured displacement and the bound ``(L - r_b)/delta * ||u'||_C0``."""
    u = np.asarray(u, dtype=float)
    C = (smap.grid[-1] - smap.grid[0]) / delta
    tangential = float(np.max(np.sqrt(u[1] ** 2 + u[2] ** 2)))
    return smap.displacement(), C * tangential


# ---------------------------------------------------------------------------
# transports


def transport_entropy(A0, smap: StreamlineMap):
    """``A(y0, y') = A0(phi_{y0}^{-1}(y'))``."""
    return smap.pull_back(A0)


def _streamline_integral(smap, integrand):
    # cumulative integral along each streamline of a nodal integrand
    along = smap.along(integrand)
    return cumulative_simpson(along, x=smap.grid, axis=0, initial=0.0)


def transport_bernoulli(E0, A_hat, p_hat, H_bar, u0, rho_b, gas: GasParams, smap: StreamlineMap):
    """Bernoulli perturbation from the integrated damped transport equation.

    ``E(y) = exp(2 mu (r_b - y0)) E0(ybar) + int_{r_b}^{y0} exp(2 mu (tau - y0)) S dtau``
    along the streamline through ``(y0, y')``, with
    ``S = 2 mu/(g-1) rho_b^(g-1) A_hat + 2 mu/rho_b p_hat + H_bar/u0``.

    ``rho_b`` is the background density on the axial grid (n,); all other
    fields are (n, N, N) except ``E0`` (N, N).
    """
    g, mu = gas.gamma, gas.mu
    grid = smap.grid
    r = np.asarray(rho_b, dtype=float)[:, None, None]
    S = 2 * mu / (g - 1) * r ** (g - 1) * A_hat + 2 * mu / r * p_hat + np.asarray(H_bar) / u0
    damp = np.exp(2 * mu * (grid - grid[0]))[:, None, None]
    G = _streamline_integral(smap, damp * S)
    on_lines = (np.asarray(E0, dtype=float)[None] + G) / damp
    return smap.pull_back(on_lines)


def transport_tangential(u0_beta, rhs, u0, smap: StreamlineMap):
    """``u^beta = u0^beta(ybar) + int rhs/u0`` along streamlines.

    ``u0_beta`` is (2, N, N) boundary data, ``rhs`` (2, n, N, N) and ``u0``
    the axial velocity (n, N, N).
    """
    out = []
    for beta in range(2):
        G = _streamline_integral(smap, np.asarray(rhs[beta]) / u0)
        out.append(smap.pull_back(np.asarray(u0_beta[beta])[None] + G))
    return np.stack(out)


# ---------------------------------------------------------------------------
# div-curl on the torus


@dataclass(frozen=True)
class TangentialBoundaryField:
    """Tangential velocity (2, N, N) on the front and the compatibility defects."""

    u: np.ndarray
    div_mean: float
    curl_mean: float


def line_mean(f, direction):
    """Mean of ``f`` along ``y1`` at ``y2 = pi`` (direction 1) or along ``y2`` at ``y1 = pi``."""
    f = np.asarray(f, dtype=float)
    N = f.shape[-1]
    return float(np.mean(f[:, N // 2])) if direction == 1 else float(np.mean(f[N // 2, :]))


def solve_divcurl(curl_rhs, div_rhs, mu0, g0_lines=(0.0, 0.0)):
    """Spectral Hodge solve for ``v = (v1, v2)`` on the torus.

    Solves ``d2 v1 - d1 v2 = curl_rhs`` and ``d1 v1 + d2 v2 = div_rhs``
    with ``v = grad phi + (d2 chi, -d1 chi) + h``.  The constant ``h`` is
    fixed by ``mu0 * 2 pi * line_mean(v_beta) + g0_lines[beta] = 0``, the
    two line-integral constraints at ``y2 = pi`` and ``y1 = pi``.

    Non-zero means of the right-hand sides are projected out and reported.
    """
    if mu0 == 0.0:
        raise ValueError("line constraints are singular for mu0 = 0")
    curl = np.asarray(curl_rhs, dtype=float)
    div = np.asarray(div_rhs, dtype=float)
    N = curl.shape[-1]
    curl_mean, div_mean = float(np.mean(curl)), float(np.mean(div))
    k = wavenumbers(N)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    lap = -(k1**2 + k2**2)
    null = lap == 0  # the mean and the (dropped) Nyquist modes
    lap[null] = 1.0

    def inv_lap(f):
        fh = np.fft.fft2(f - np.mean(f)) / lap
        fh[null] = 0.0
        return np.real(np.fft.ifft2(fh))

    phi = inv_lap(div)
    chi = inv_lap(curl)
    v1 = torus_derivative(phi, 0) + torus_derivative(chi, 1)
    v2 = torus_derivative(phi, 1) - torus_derivative(chi, 0)
    targets = [-g0_lines[0] / (2 * np.pi * mu0), -g0_lines[1] / (2 * np.pi * mu0)]
    v1 = v1 + (targets[0] - line_mean(v1, 1))
    v2 = v2 + (targets[1] - line_mean(v2, 2))
    return TangentialBoundaryField(u=np.stack([v1, v2]), div_mean=div_mean, curl_mean=curl_mean)


def divcurl_of(v):
    """``(d2 v1 - d1 v2, d1 v1 + d2 v2)`` of a torus vector field, spectrally."""
    v = np.asarray(v, dtype=float)
    curl = torus_derivative(v[0], 1) - torus_derivative(v[1], 0)
    div = torus_derivative(v[0], 0) + torus_derivative(v[1], 1)
    return curl, div


def default_delta(bg: BackgroundSolution):
    """Half the smallest background axial velocity on ``[r_b - h_b, L]``."""
    x = np.linspace(bg.r_b - bg.h_b, bg.L, 201)
    return 0.5 * float(np.min(bg.plus(x)["u"]))
