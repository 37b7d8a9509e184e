"""Normalized shock problem: coordinate map, higher-order terms and the fixed-point map.

The subsonic region ``psi(x') < x0 < L`` is mapped onto the fixed cylinder
``[r_b, L] x T^2`` by

    y0 = (x0 - L)(L - r_b)/(L - psi(x')) + L,    y' = x'.

Unknowns on the cylinder are deviations from the subsonic background taken at
the physical position, ``p_hat(y) = p(x) - p_b^+(x0)`` with ``x = Psi^-1(y)``,
and likewise for the entropy function, the Bernoulli quantity and the
tangential velocity.

Every higher-order term is evaluated as the exact nonlinear relation minus
its linear part, so a fixed point of :func:`iterate_T` solves the exact
Euler system and the exact Rankine-Hugoniot conditions up to discretization.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .background import CoefficientTable
from .gas import (
    CharacteristicState,
    DomainError,
    PrimitiveState,
    bernoulli,
    euler_residual,
    pressure_equation_residual,
    recover_primitive,
    rh_residual,
)
from .hyperbolic import (
    StreamlineMap,
    SupersonicField,
    default_delta,
    line_mean,
    march_supersonic,
    solve_divcurl,
    trace_streamlines,
    transport_bernoulli,
    transport_entropy,
    transport_tangential,
)
from .numerics import fd_derivative, torus_derivative, torus_laplacian, trig_series
from .venttsel import analyze, cumulative_integral, default_grid, solve_venttsel, synthesize

ITERATION_TOL = 1e-10
MAX_ITER = 30
DIVERGENCE_STREAK = 3
STEP_NAMES = {
    1: "pressure",
    2: "shock front",
    3: "entropy",
    4: "Bernoulli",
    5: "tangential velocity on the front",
    6: "tangential velocity",
}


class DegenerateMapError(DomainError):
    """The front reaches the exit, so the normalizing map is not a bijection."""


class ShockDegeneratedError(DomainError):
    """The pressure jump across the front is not positive somewhere."""


class NonConvergenceError(RuntimeError):
    """The fixed-point iteration diverged; ``report`` holds the history."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StepError(RuntimeError):
    """A sub-solver failed inside one step of the iteration map."""

    def __init__(self, step, cause):
        super().__init__(f"step {step} ({STEP_NAMES[step]}) failed: {cause}")
        self.step = step
        self.cause = cause


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ShockFront:
    """Front ``psi = position + profile`` with a mean-free ``profile`` (N, N)."""

    profile: np.ndarray
    position: float

    @property
    def psi(self):
        return self.position + self.profile

    @property
    def N(self):
        return self.profile.shape[-1]

    @classmethod
    def flat(cls, r_b, N):
        return cls(profile=np.zeros((N, N)), position=float(r_b))


@dataclass(frozen=True)
class SubsonicState:
    """Deviations ``p, A, E`` (n, N, N) and tangential velocity ``u`` (2, n, N, N) on the cylinder."""

    p: np.ndarray
    A: np.ndarray
    E: np.ndarray
    u: np.ndarray

    @classmethod
    def zero(cls, n, N):
        z = np.zeros((n, N, N))
        return cls(p=z, A=z.copy(), E=z.copy(), u=np.zeros((2, n, N, N)))

    def blend(self, other, weight):
        """``self + weight (other - self)``."""
        mix = lambda a, b: a + weight * (b - a)
        return SubsonicState(p=mix(self.p, other.p), A=mix(self.A, other.A),
                             E=mix(self.E, other.E), u=mix(self.u, other.u))

    def sup(self):
        return float(max(np.max(np.abs(f)) for f in (self.p, self.A, self.E, self.u)))


@dataclass(frozen=True)
class HigherOrderTerms:
    """Higher-order terms of the normalized problem at one iterate.

    Cylinder fields: ``H`` (Bernoulli source), ``F = F5 + F7 + F8 + F9``,
    ``W`` (2, n, N, N).  Torus fields: ``g0`` (2, N, N), ``g1 .. g6``,
    ``g8``, ``g9`` and ``G1 .. G4``.  The remaining attributes are the
    evaluation context reused by :func:`iterate_T`.
    """

    H: np.ndarray
    F: np.ndarray
    F5: np.ndarray
    F7: np.ndarray
    F8: np.ndarray
    F9: np.ndarray
    W: np.ndarray
    g0: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    g4: np.ndarray
    g5: np.ndarray
    g6: np.ndarray
    g8: np.ndarray
    g9: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    G3: np.ndarray
    G4: np.ndarray
    E_front: np.ndarray
    jump_p: np.ndarray
    geometry: "MappedGeometry" = field(repr=False, compare=False)
    state: PrimitiveState = field(repr=False, compare=False)
    streamlines: StreamlineMap = field(repr=False, compare=False)
    u_mapped: np.ndarray = field(repr=False, compare=False)

    TERMS = ("H", "F", "F5", "F7", "F8", "F9", "W", "g0", "g1", "g2", "g3", "g4", "g5", "g6",
             "g8", "g9", "G1", "G2", "G3", "G4")

    def sup_norms(self):
        return {k: float(np.max(np.abs(getattr(self, k)))) for k in self.TERMS}


@dataclass
class SolveReport:
    """History and diagnostics of :func:`solve_transonic`."""

    iterations: int = 0
    converged: bool = False
    norms: list = field(default_factory=list)
    quotients: list = field(default_factory=list)
    mean_defects: list = field(default_factory=list)
    psi_deviation: float = math.nan
    position: float = math.nan
    state_norm: float = math.nan
    residuals: dict | None = None
    wall_clock: float = 0.0

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "norms": [float(v) for v in self.norms],
            "quotients": [float(v) for v in self.quotients],
            "mean_defects": [float(v) for v in self.mean_defects],
            "psi_deviation": float(self.psi_deviation),
            "position": float(self.position),
            "state_norm": float(self.state_norm),
            "residuals": self.residuals,
            "wall_clock": float(self.wall_clock),
        }


# ---------------------------------------------------------------------------
# coordinate map


def transform_point(x0, psi, L, r_b):
    """Normalized axial coordinate ``y0`` of physical ``x0`` above the front ``psi``."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi >= L):
        raise DegenerateMapError("shock front reaches the exit")
    return (np.asarray(x0, dtype=float) - L) * (L - r_b) / (L - psi) + L


def inverse_point(y0, psi, L, r_b):
    """Physical ``x0`` of the normalized coordinate ``y0``."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi >= L):
        raise DegenerateMapError("shock front reaches the exit")
    return L + (np.asarray(y0, dtype=float) - L) * (L - psi) / (L - r_b)


@dataclass(frozen=True)
class MappedGeometry:
    """Nodes of the normalized cylinder and the metric of the map.

    ``x0`` (n, N, N) are the physical axial positions of the nodes,
    ``jacobian`` = dy0/dx0 (N, N) and ``shear[beta]`` = dy0/dx^beta (n, N, N).
    """

    grid: np.ndarray
    psi: np.ndarray
    L: float
    r_b: float
    x0: np.ndarray
    jacobian: np.ndarray
    shear: np.ndarray

    @property
    def step(self):
        return float(self.grid[1] - self.grid[0])

    def deriv(self, f, j):
        """Physical derivative along ``x^j`` of a nodal field (n, N, N)."""
        d0 = fd_derivative(f, self.step, axis=0)
        if j == 0:
            return self.jacobian * d0
        return torus_derivative(f, axis=j) + self.shear[j - 1] * d0

    def to_mapped_velocity(self, u):
        """Velocity (3, n, N, N) with the axial component replaced by ``D_u y0``."""
        u = np.asarray(u, dtype=float)
        u0 = self.jacobian * u[0] + self.shear[0] * u[1] + self.shear[1] * u[2]
        return np.concatenate([u0[None], u[1:]])

    def to_physical_velocity(self, um):
        um = np.asarray(um, dtype=float)
        u0 = (um[0] - self.shear[0] * um[1] - self.shear[1] * um[2]) / self.jacobian
        return np.concatenate([u0[None], um[1:]])


def transform(front: ShockFront, grid, L, r_b) -> MappedGeometry:
    """Geometry of the map normalizing the region behind ``front``.

    Raises
    ------
    DegenerateMapError
        If ``psi >= L`` anywhere.
    """
    grid = np.asarray(grid, dtype=float)
    psi = front.psi
    if np.any(psi >= L):
        raise DegenerateMapError("shock front reaches the exit")
    jac = (L - r_b) / (L - psi)
    dpsi = np.stack([torus_derivative(psi, 0), torus_derivative(psi, 1)])
    ratio = (grid[:, None, None] - L) / (L - psi)[None]
    return MappedGeometry(grid=grid, psi=psi, L=float(L), r_b=float(r_b),
                          x0=inverse_point(grid[:, None, None], psi[None], L, r_b),
                          jacobian=jac, shear=ratio[None] * dpsi[:, None])


def transform_field(f, geom: MappedGeometry):
    """Sample ``f(x0, y1, y2)``, defined behind the front, on the normalized nodes."""
    n, N = len(geom.grid), geom.psi.shape[-1]
    y = 2.0 * np.pi * np.arange(N) / N
    y1, y2 = np.meshgrid(y, y, indexing="ij")
    return f(geom.x0, np.broadcast_to(y1, (n, N, N)), np.broadcast_to(y2, (n, N, N)))


def inverse_transform_field(values, geom: MappedGeometry, x0, width=8):
    """Evaluate normalized nodal data at physical ``x0`` (m, N, N) on the node columns.

    Local Lagrange interpolation of degree ``width - 1`` in ``y0``.
    """
    values = np.asarray(values, dtype=float)
    y0 = transform_point(x0, geom.psi, geom.L, geom.r_b)
    grid = geom.grid
    h = grid[1] - grid[0]
    n = len(grid)
    pos = (y0 - grid[0]) / h
    if np.any(pos < -1e-9) or np.any(pos > n - 1 + 1e-9):
        raise ValueError("point outside the region behind the front")
    start = np.clip(np.floor(pos).astype(int) - width // 2 + 1, 0, n - width)
    out = np.zeros(y0.shape)
    N = y0.shape[-1]
    ii, jj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    for k in range(width):
        nodes = start + k
        w = np.ones(y0.shape)
        for m in range(width):
            if m != k:
                w *= (pos - (start + m)) / (k - m)
        out += w * values[nodes, ii, jj]
    return out


# ---------------------------------------------------------------------------
# problem data


@dataclass
class ShockProblem:
    """Background, grids and boundary data of one transonic shock problem.

    ``p1`` is the exit pressure (N, N); ``supersonic`` the marched upstream
    field, or ``None`` for the unperturbed upstream branch.
    """

    table: CoefficientTable
    grid: np.ndarray
    p1: np.ndarray
    supersonic: SupersonicField | None = None
    Q_max: float | None = None
    threads: int = 1
    delta: float | None = None
    profiles: dict = field(init=False, repr=False)
    base_table: CoefficientTable = field(init=False, repr=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        if self.delta is None:
            self.delta = default_delta(self.bg)
        self.profiles = self.table.profiles(self.grid)
        d1, d2, d3, d4 = self.table.d(self.profiles["t"])
        self.profiles.update(d3=d3, d4=d4)
        self.base_table = self.table
        self.table = _effective_table(self.base_table)

    @property
    def bg(self):
        return self.table.bg

    @property
    def gas(self):
        return self.table.bg.gas

    @property
    def L(self):
        return self.table.bg.L

    @property
    def r_b(self):
        return self.table.bg.r_b

    @property
    def N(self):
        return self.p1.shape[-1]

    def check_front(self, psi):
        """The front must stay inside the band covered by both background extensions."""
        bg = self.bg
        if np.any(np.abs(psi - bg.r_b) > bg.h_b):
            raise DomainError(f"shock front left the band |psi - r_b| <= {bg.h_b:.3g}")

    def upstream(self, psi):
        """Supersonic state (N, N) at ``x0 = psi(x')``."""
        self.check_front(psi)
        if self.supersonic is not None:
            return self.supersonic.sample(psi)
        s = self.bg.minus(psi)
        z = np.zeros_like(psi)
        return PrimitiveState(p=s["p"], rho=s["rho"], u=np.stack([s["u"], z, z]))


def _effective_table(table: CoefficientTable):
    """Coefficients whose front relation includes the Bernoulli jump of a displaced front.

    Friction makes the background Bernoulli quantity differ across the front,
    so the Bernoulli trace behind a front at ``psi`` is ``kappa_E (psi - r_b)``
    to first order, just as the entropy trace is ``mu4 (psi - r_b)``.  The
    tabulated ``gamma1`` keeps only the entropy part; adding ``q_E kappa_E``
    leaves every higher-order term quadratic at a solution.  ``mu6``, ``mu7``
    and ``mu9`` follow from ``gamma1``.
    """
    if table.bg.gas.mu == 0.0:
        return table
    m0, m2, m5 = table.mu0, table.mu2, table.mu5
    gamma1 = table.gamma1 - table.q_E * table.kappa_E / m2
    mu6 = -gamma1 * m2 / table.gamma2
    return replace(table, gamma1=float(gamma1), mu6=float(mu6), mu7=float(-m0 * mu6),
                   mu9=float(-m2 * m5 / (4 * np.pi**2 * mu6)))


def _column(v):
    return np.asarray(v)[:, None, None]


def build_problem(table: CoefficientTable, N=16, n0=200, back_pressure=(), inflow=None,
                  epsilon=0.0, Q_max=None, threads=1):
    """Assemble a :class:`ShockProblem` from Fourier perturbation specs.

    Parameters
    ----------
    back_pressure : sequence of dict
        Terms for :func:`numerics.trig_series`; the exit pressure is
        ``p_b^+(L) + epsilon * series``.
    inflow : dict, optional
        Maps ``"p"``, ``"rho"``, ``"u0"``, ``"u1"``, ``"u2"`` to term lists;
        the inlet state is the background inlet plus ``epsilon * series``.
        A non-trivial inflow is marched to ``r_b + h_b``.
    """
    bg = table.bg
    grid = default_grid(table, n0)
    p1 = float(bg.plus(bg.L)["p"]) + epsilon * trig_series(list(back_pressure), N)
    supersonic = None
    if inflow and epsilon != 0.0 and any(inflow.get(k) for k in ("p", "rho", "u0", "u1", "u2")):
        inlet = bg.inlet
        base = {"p": float(inlet.p), "rho": float(inlet.rho), "u0": float(inlet.u[0]),
                "u1": float(inlet.u[1]), "u2": float(inlet.u[2])}
        f = {k: base[k] + epsilon * trig_series(list(inflow.get(k, ())), N) for k in base}
        state = PrimitiveState(p=f["p"], rho=f["rho"], u=np.stack([f["u0"], f["u1"], f["u2"]]))
        supersonic = march_supersonic(state, bg.r_b + bg.h_b, bg.gas)
    return ShockProblem(table=table, grid=grid, p1=p1, supersonic=supersonic, Q_max=Q_max,
                        threads=threads)


def physical_state(U: SubsonicState, geom: MappedGeometry, problem: ShockProblem) -> PrimitiveState:
    """Primitive state on the normalized nodes from the deviations ``U``."""
    b = problem.bg.plus(geom.x0)
    cs = CharacteristicState(p=b["p"] + U.p, A=problem.bg.entropy_plus + U.A, E=b["E"] + U.E,
                             uT=U.u)
    return recover_primitive(cs, problem.gas.gamma)


def _background_state(geom: MappedGeometry, problem: ShockProblem) -> PrimitiveState:
    b = problem.bg.plus(geom.x0)
    z = np.zeros_like(geom.x0)
    return PrimitiveState(p=b["p"], rho=b["rho"], u=np.stack([b["u"], z, z]))


def _identity_streamlines(grid, N):
    y = 2.0 * np.pi * np.arange(N) / N
    seeds = np.stack(np.meshgrid(y, y, indexing="ij"))
    tile = np.broadcast_to(seeds, (len(grid), 2, N, N)).copy()
    return StreamlineMap(grid=np.asarray(grid), forward=tile, inverse=tile.copy())


def band_limit(f):
    """Projection onto the torus modes retained by the Venttsel solver."""
    f = np.asarray(f, dtype=float)
    return synthesize(analyze(f), f.shape[-1])


# ---------------------------------------------------------------------------
# higher-order terms


def _enthalpy(p, A, gamma):
    return gamma / (gamma - 1.0) * p ** (1.0 - 1.0 / gamma) * A ** (1.0 / gamma)


def _rh_terms(Up: PrimitiveState, Um: PrimitiveState, psi, dpsi, U: SubsonicState, problem):
    # g0 from the tangential momentum jump, g1..g4 from the exact normal R-H defect
    t = problem.table
    g = problem.gas.gamma
    jump_p = Up.p - Um.p
    if np.any(jump_p <= 0):
        raise ShockDegeneratedError(f"shock degenerated: min [p] = {float(np.min(jump_p)):.3e}")
    mp = Up.rho * (Up.u[0] - Up.u[1] * dpsi[0] - Up.u[2] * dpsi[1])
    mm = Um.rho * (Um.u[0] - Um.u[1] * dpsi[0] - Um.u[2] * dpsi[1])
    g0 = np.stack([(mp * Up.u[b] - mm * Um.u[b]) / jump_p - t.mu0 * Up.u[b] for b in (1, 2)])
    defect = np.stack([
        mp * Up.u[0] + Up.p - (mm * Um.u[0] + Um.p),
        mp - mm,
        bernoulli(Up.p, Up.rho, Up.u, g) - bernoulli(Um.p, Um.rho, Um.u, g),
    ])
    N = psi.shape[-1]
    w = np.linalg.solve(t.jacobian, defect.reshape(3, -1)).reshape(3, N, N)
    b = problem.bg.plus(psi)
    s = psi - problem.r_b
    V_hat = (Up.u[0] - b["u"], Up.p - b["p"], Up.rho - b["rho"])
    g1, g2, g3 = (V_hat[i] - m * s - w[i] for i, m in enumerate((t.mu1, t.mu2, t.mu3)))
    r = problem.bg.right
    dA = np.array([0.0, float(r.rho) ** (-g), -g * float(r.p) * float(r.rho) ** (-g - 1)])
    g4 = U.A[0] - t.mu4 * s - np.tensordot(dA, w, axes=1)
    return g0, (g1, g2, g3, g4), jump_p


def _boundary_relation(U: SubsonicState, geom: MappedGeometry, p, A, E, problem):
    # mass balance on the front with the transport laws substituted:
    # B = d0 p - mu g p u0^2/(u0^2 - c^2) - G1 - G2, exact for every iterate
    g, mu = problem.gas.gamma, problem.gas.mu
    uT = U.u[:, 0]
    rho = (p / A) ** (1.0 / g)
    u0_sq = 2.0 * (E - _enthalpy(p, A, g)) - np.sum(uT * uT, axis=0)
    if np.any(u0_sq <= 0):
        raise DomainError("no real axial velocity on the shock front")
    c2 = g * p / rho
    K = rho * c2 * np.sqrt(u0_sq) / (u0_sq - c2)
    dp = [geom.deriv(U.p, j)[0] for j in range(3)]
    du = [[geom.deriv(U.u[b], j)[0] for j in (1, 2)] for b in range(2)]
    dE = [geom.deriv(U.E, j)[0] for j in (1, 2)]
    dA = [geom.deriv(U.A, j)[0] for j in (1, 2)]
    adv = sum(uT[b] * (uT[0] * du[b][0] + uT[1] * du[b][1] - dE[b] + rho ** (g - 1) * dA[b] / (g - 1))
              for b in range(2))
    G1 = -K * (du[0][0] + du[1][1])
    G2 = -K * ((uT[0] * dp[1] + uT[1] * dp[2]) * (1.0 / (g * p) + 1.0 / (rho * u0_sq)) + adv / u0_sq)
    bb = problem.bg.plus(geom.psi)
    # background pressure slope from the Fanno system
    dpb = mu * g * bb["p"] * bb["t"] / (bb["t"] - 1.0)
    B = dpb + dp[0] - mu * g * p * u0_sq / (u0_sq - c2) - G1 - G2
    return B, G1, G2, dp[0]


def eval_hot(U: SubsonicState, front: ShockFront, problem: ShockProblem) -> HigherOrderTerms:
    """Evaluate every higher-order term at the iterate ``(front, U)``.

    Each term is the exact nonlinear relation minus its linear part:

    * ``F5`` is the linear pressure operator applied to ``(p, E, A)`` minus
      ``rho_b`` times the exact pressure equation (background-balanced);
    * ``g1 .. g4`` solve the background R-H Jacobian against the exact
      normal R-H defect; ``g0`` follows from the tangential momentum jump;
    * ``G4`` is the exact front relation minus ``d0 p + gamma1 p + gamma2 div u'``;
    * ``H`` is the exact Bernoulli source along streamlines minus its linear part;
    * ``F7 .. F9`` are the streamline integrals closing the nonlocal operator.

    Raises
    ------
    ShockDegeneratedError
        If ``[p] <= 0`` anywhere on the front.
    """
    t = problem.table
    g, mu = problem.gas.gamma, problem.gas.mu
    grid = problem.grid
    pr = problem.profiles
    N = front.N
    psi = front.psi
    geom = transform(front, grid, problem.L, problem.r_b)
    state = physical_state(U, geom, problem)
    base = _background_state(geom, problem)
    rho_b = _column(pr["rho"])
    d3, d4 = _column(pr["d3"]), _column(pr["d4"])
    h = geom.step

    # interior pressure equation
    R = (pressure_equation_residual(state, problem.gas, deriv=geom.deriv)
         - pressure_equation_residual(base, problem.gas, deriv=geom.deriv))
    lin = (_column(pr["e1"]) * fd_derivative(U.p, h, order=2) - torus_laplacian(U.p)
           + _column(pr["e2"]) * fd_derivative(U.p, h) + _column(pr["e3"]) * U.p
           + mu**2 * rho_b * d3 * U.E + mu**2 * rho_b**g * d4 * U.A)
    F5 = lin - rho_b * R

    # Rankine-Hugoniot conditions on the front
    dpsi = np.stack([torus_derivative(psi, 0), torus_derivative(psi, 1)])
    Up = PrimitiveState(p=state.p[0], rho=state.rho[0], u=state.u[:, 0])
    Um = problem.upstream(psi)
    g0, (g1, g2, g3, g4), jump_p = _rh_terms(Up, Um, psi, dpsi, U, problem)
    E_minus = bernoulli(Um.p, Um.rho, Um.u, g)
    E_front = E_minus - problem.bg.plus(psi)["E"]
    A_front = problem.bg.entropy_plus + t.mu4 * (psi - problem.r_b) + g4

    # front relation, evaluated with the R-H traces of A and E
    B, G1, G2, d0p_x = _boundary_relation(U, geom, Up.p, A_front, E_minus, problem)
    d0p = fd_derivative(U.p, h)[0]
    div_front = torus_derivative(U.u[0, 0], 0) + torus_derivative(U.u[1, 0], 1)
    G3 = d0p_x + t.gamma0 * U.p[0] - G1 - G2 - B
    G4 = B - (d0p + t.gamma1 * U.p[0] + t.gamma2 * div_front)
    g5 = -G4 / t.gamma2 - t.gamma1 / t.gamma2 * g2
    g6 = t.mu0 * g5 + torus_derivative(g0[0], 0) + torus_derivative(g0[1], 1)
    g8 = torus_laplacian(g2) + t.mu7 * g2 + t.mu2 * g6
    g9 = (t.mu2 / t.mu6 * float(np.mean(g5)) if t.mu6 != 0 else 0.0) - g2

    # Bernoulli source along streamlines: exact minus linear
    u_m = geom.to_mapped_velocity(state.u)
    hh = _enthalpy(state.p, problem.bg.entropy_plus + U.A, g)
    hb = _enthalpy(base.p, problem.bg.entropy_plus, g)
    kin = 2.0 * U.E - 2.0 * (hh - hb) - np.sum(U.u * U.u, axis=0)  # u0^2 - u_b^2
    u0 = state.u[0]
    S_exact = 2 * mu * U.E - mu * u0 / u_m[0] * kin
    S_lin = 2 * mu / (g - 1) * rho_b ** (g - 1) * U.A + 2 * mu / rho_b * U.p
    H = u0 * (S_exact - S_lin)

    # tangential momentum: the shear part of the pressure gradient
    W = np.stack([-(1.0 / state.rho) * geom.shear[b] * fd_derivative(U.p, h) for b in range(2)])

    # streamline integrals closing the nonlocal pressure operator
    if np.any(U.u != 0):
        smap = trace_streamlines(u_m, grid, delta=problem.delta)
    else:
        smap = _identity_streamlines(grid, N)
    damp = _column(np.exp(2 * mu * (grid - grid[0])))
    along = cumulative_integral(smap.along(damp * (2 * mu / rho_b * U.p + H / u0)), grid)
    I13 = smap.pull_back(along) / damp
    I2 = cumulative_integral(damp * 2 * mu / rho_b * U.p, grid) / damp
    F7 = -(mu**2) * rho_b * d3 * (I13 - I2)
    ratio = t.mu4 / t.mu2 if mu > 0 else 0.0
    X = (g4 - ratio * g2)[None] + smap.pull_back(U.A[0]) - U.A[0][None]
    F8 = -(mu**2) * rho_b * d3 * _column(pr["damped_integral"]) * X
    F9 = -(mu**2) * rho_b**g * d4 * X
    F = F5 + F7 + F8 + F9
    return HigherOrderTerms(
        H=H, F=F, F5=F5, F7=F7, F8=F8, F9=F9, W=W, g0=g0, g1=g1, g2=g2, g3=g3, g4=g4, g5=g5,
        g6=g6, g8=g8, g9=g9, G1=G1, G2=G2, G3=G3, G4=G4, E_front=E_front, jump_p=jump_p,
        geometry=geom, state=state, streamlines=smap, u_mapped=u_m,
    )


# ---------------------------------------------------------------------------
# iteration


@dataclass(frozen=True)
class StepInfo:
    """Diagnostics of one application of the iteration map."""

    mean_defect: float
    max_cond: float
    divcurl_means: tuple
    hot_sup: dict


def _run(step, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ShockDegeneratedError, DegenerateMapError):
        raise
    except Exception as exc:  # sub-solver failures carry the step identity
        raise StepError(step, exc) from exc


def iterate_T(front: ShockFront, U: SubsonicState, problem: ShockProblem):
    """One application of the six-step iteration map.

    1. pressure from the nonlocal Venttsel problem with right side
       ``e6 E^- + F``, front data ``g8`` and exit data ``p1 - p_b^+(L)``;
    2. front position from the torus integral and profile from the trace;
    3. entropy function transported from ``mu4 (psi - r_b) + g4``;
    4. Bernoulli quantity transported from ``E^- - E_b^+``;
    5. tangential velocity on the front from the div-curl system;
    6. tangential velocity transported from the front.

    Returns
    -------
    (ShockFront, SubsonicState, StepInfo)
    """
    t = problem.table
    hot = eval_hot(U, front, problem)
    smap = hot.streamlines

    # 1. pressure
    e6 = _column(problem.profiles["e6"])
    f = band_limit(e6 * smap.pull_back(hot.E_front) + hot.F)
    h1 = problem.p1 - float(problem.bg.plus(problem.L)["p"])
    sol = _run(1, solve_venttsel, f, band_limit(hot.g8), h1, t, problem.grid,
               Q_max=problem.Q_max, threads=problem.threads)
    p_new = sol.p
    trace, d0 = sol.trace, sol.d0_trace

    # 2. shock front
    position = problem.r_b - float(np.mean(t.mu5 * d0 + hot.g5)) / t.mu6
    profile = (trace - 4 * np.pi**2 * t.mu9 * float(np.mean(d0)) + hot.g9) / t.mu2
    mean_defect = float(np.mean(profile))
    profile = profile - mean_defect
    new_front = ShockFront(profile=profile, position=position)
    _run(2, problem.check_front, new_front.psi)

    # 3. entropy
    A0 = t.mu4 * (new_front.psi - problem.r_b) + hot.g4
    A_new = _run(3, transport_entropy, A0, smap)

    # 4. Bernoulli
    E_new = _run(4, transport_bernoulli, hot.E_front, A_new, p_new, hot.H, hot.state.u[0],
                 problem.profiles["rho"], problem.gas, smap)

    # 5. tangential velocity on the front
    g0 = hot.g0
    curl = -(torus_derivative(g0[0], 1) - torus_derivative(g0[1], 0)) / t.mu0
    div = t.mu5 * d0 + t.mu6 * profile + t.mu6 * (position - problem.r_b) + hot.g5
    lines = (2 * np.pi * line_mean(g0[0], 1), 2 * np.pi * line_mean(g0[1], 2))
    tb = _run(5, solve_divcurl, curl, div, t.mu0, lines)

    # 6. tangential velocity
    geom = hot.geometry
    rhs = np.stack([-geom.deriv(p_new, b) / hot.state.rho for b in (1, 2)])
    u_new = _run(6, transport_tangential, tb.u, rhs, hot.u_mapped[0], smap)

    info = StepInfo(mean_defect=mean_defect, max_cond=sol.max_cond,
                    divcurl_means=(tb.div_mean, tb.curl_mean), hot_sup=hot.sup_norms())
    return new_front, SubsonicState(p=p_new, A=A_new, E=E_new, u=u_new), info


def iteration_norm(front_a: ShockFront, U_a: SubsonicState, front_b: ShockFront, U_b: SubsonicState):
    """Sup norm of the step difference over ``psi``, ``p``, ``A``, ``E`` and ``u'``."""
    parts = [front_a.psi - front_b.psi, U_a.p - U_b.p, U_a.A - U_b.A, U_a.E - U_b.E, U_a.u - U_b.u]
    return float(max(np.max(np.abs(d)) for d in parts))


def solve_transonic(problem: ShockProblem, tol=ITERATION_TOL, max_iter=MAX_ITER, relaxation=1.0,
                    verify=True):
    """Fixed-point iteration from the background until the step difference drops below ``tol``.

    Parameters
    ----------
    relaxation : float
        Under-relaxation factor in (0, 1]; 1 applies the map unchanged.

    Returns
    -------
    (ShockFront, SubsonicState, SolveReport)

    Raises
    ------
    NonConvergenceError
        If the contraction quotient is at least 1 for three consecutive steps.
    """
    if not 0.0 < relaxation <= 1.0:
        raise ValueError("relaxation must lie in (0, 1]")
    start = time.perf_counter()
    front = ShockFront.flat(problem.r_b, problem.N)
    U = SubsonicState.zero(len(problem.grid), problem.N)
    report = SolveReport()
    streak = 0
    for k in range(1, max_iter + 1):
        new_front, new_U, info = iterate_T(front, U, problem)
        if relaxation < 1.0:
            new_front = ShockFront(profile=front.profile + relaxation * (new_front.profile - front.profile),
                                   position=front.position + relaxation * (new_front.position - front.position))
            new_U = U.blend(new_U, relaxation)
        q = iteration_norm(new_front, new_U, front, U)
        report.iterations = k
        report.mean_defects.append(info.mean_defect)
        if report.norms:
            quotient = q / report.norms[-1] if report.norms[-1] > 0 else 0.0
            report.quotients.append(quotient)
            streak = streak + 1 if quotient >= 1.0 else 0
        report.norms.append(q)
        front, U = new_front, new_U
        if q < tol:
            report.converged = True
            break
        if streak >= DIVERGENCE_STREAK:
            report.wall_clock = time.perf_counter() - start
            raise NonConvergenceError(
                f"iteration diverges: quotients {report.quotients[-DIVERGENCE_STREAK:]} >= 1", report)
    report.psi_deviation = float(np.max(np.abs(front.psi - problem.r_b)))
    report.position = front.position
    report.state_norm = U.sup()
    if verify:
        report.residuals = verify_solution(problem, front, U)
    report.wall_clock = time.perf_counter() - start
    return front, U, report


# ---------------------------------------------------------------------------
# verification


def _norms(r):
    r = np.asarray(r)
    return float(np.max(np.abs(r))), float(np.sqrt(np.mean(r * r)))


def verify_solution(problem: ShockProblem, front: ShockFront, U: SubsonicState):
    """Residuals of the exact Euler system on both sides and of the R-H conditions.

    The subsonic state is mapped back behind the front and differentiated in
    physical coordinates; the front normal is ``(1, -d1 psi, -d2 psi)``.
    Report-only: nothing is raised.
    """
    gas = problem.gas
    psi = front.psi
    geom = transform(front, problem.grid, problem.L, problem.r_b)
    state = physical_state(U, geom, problem)
    out = {}
    res = euler_residual(state, gas, deriv=geom.deriv)
    parts = np.concatenate([res["momentum"].ravel(), res["mass"].ravel(), res["energy"].ravel()])
    sup, l2 = _norms(parts)
    out["euler_subsonic"] = {"momentum_sup": res["momentum_sup"], "mass_sup": res["mass_sup"],
                             "energy_sup": res["energy_sup"], "sup": sup, "l2": l2}

    if problem.supersonic is not None:
        sf = problem.supersonic
        res = euler_residual(sf.state, gas, x0=sf.x)
    else:
        top = float(np.max(psi))
        x = np.linspace(0.0, top, max(201, int(math.ceil(top / 2.5e-4)) + 1))
        s = problem.bg.minus(x)
        res = euler_residual(PrimitiveState(p=s["p"], rho=s["rho"], u=np.stack([s["u"], 0 * x, 0 * x])),
                             gas, x0=x)
    parts = np.concatenate([res["momentum"].ravel(), res["mass"].ravel(), res["energy"].ravel()])
    sup, l2 = _norms(parts)
    out["euler_supersonic"] = {"momentum_sup": res["momentum_sup"], "mass_sup": res["mass_sup"],
                               "energy_sup": res["energy_sup"], "sup": sup, "l2": l2}

    dpsi = np.stack([torus_derivative(psi, 0), torus_derivative(psi, 1)])
    normal = np.concatenate([np.ones((1,) + psi.shape), -dpsi])
    Um = problem.upstream(psi)
    Up = PrimitiveState(p=state.p[0], rho=state.rho[0], u=state.u[:, 0])
    rh = rh_residual(Um, Up, normal, gas)
    parts = np.concatenate([rh["momentum"].ravel(), rh["mass"].ravel(), rh["energy"].ravel()])
    sup, l2 = _norms(parts)
    out["rankine_hugoniot"] = {"momentum_sup": float(np.max(np.abs(rh["momentum"]))),
                               "mass_sup": float(np.max(np.abs(rh["mass"]))),
                               "energy_sup": float(np.max(np.abs(rh["energy"]))),
                               "sup": sup, "l2": l2}
    out["jump_p_min"] = float(np.min(rh["jump_p"]))
    out["entropy_condition"] = bool(np.all(rh["jump_p"] > 0))
    out["profile_mean"] = float(abs(np.mean(front.profile)))
    out["psi_deviation"] = float(np.max(np.abs(psi - problem.r_b)))
    return out


__all__ = [
    "DegenerateMapError",
    "HigherOrderTerms",
    "MappedGeometry",
    "NonConvergenceError",
    "ShockDegeneratedError",
    "ShockFront",
    "ShockProblem",
    "SolveReport",
    "StepError",
    "SubsonicState",
    "band_limit",
    "build_problem",
    "eval_hot",
    "inverse_point",
    "inverse_transform_field",
    "iterate_T",
    "iteration_norm",
    "physical_state",
    "solve_transonic",
    "transform",
    "transform_field",
    "transform_point",
    "verify_solution",
]
