"""Polytropic gas thermodynamics, state conversions and pointwise residuals.

All functions accept scalars or numpy arrays and broadcast elementwise.
Velocity vectors carry their three components on the leading axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import fd_derivative, torus_derivative


class DomainError(ValueError):
    """Raised when a thermodynamic input lies outside its admissible domain."""


class NotRealizableError(DomainError):
    """Raised when a characteristic state admits no real axial velocity."""


@dataclass(frozen=True)
class GasParams:
    """Adiabatic exponent ``gamma`` (> 1) and friction coefficient ``mu`` (>= 0)."""

    gamma: float
    mu: float = 0.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise DomainError(f"gamma must exceed 1, got {self.gamma}")
        if not self.mu >= 0.0:
            raise DomainError(f"mu must be non-negative, got {self.mu}")


@dataclass(frozen=True)
class PrimitiveState:
    """Pressure, density and velocity ``u = (u0, u1, u2)``."""

    p: np.ndarray
    rho: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        if self.u.shape[0] != 3:
            raise ValueError("velocity must have 3 components on the leading axis")
        if np.any(self.p <= 0) or np.any(self.rho <= 0):
            raise DomainError("pressure and density must be positive")


@dataclass(frozen=True)
class CharacteristicState:
    """Pressure, entropy function ``A = p rho**-gamma``, Bernoulli ``E`` and ``uT = (u1, u2)``."""

    p: np.ndarray
    A: np.ndarray
    E: np.ndarray
    uT: np.ndarray

    def __post_init__(self):
        for name in ("p", "A", "E", "uT"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.uT.shape[0] != 2:
            raise ValueError("tangential velocity must have 2 components")


def _check_positive(**kw):
    for name, v in kw.items():
        if np.any(np.asarray(v) <= 0):
            raise DomainError(f"{name} must be positive")


def sound_speed(p, rho, gamma):
    """Sound speed ``sqrt(gamma p / rho)``."""
    _check_positive(p=p, rho=rho)
    return np.sqrt(gamma * np.asarray(p, dtype=float) / np.asarray(rho, dtype=float))


def enthalpy(p, rho, gamma):
    """Specific enthalpy ``gamma/(gamma-1) p/rho``."""
    return gamma / (gamma - 1.0) * np.asarray(p, dtype=float) / np.asarray(rho, dtype=float)


def bernoulli(p, rho, u, gamma):
    """Bernoulli quantity ``|u|^2/2 + gamma/(gamma-1) p/rho``."""
    _check_positive(rho=rho)
    u = np.asarray(u, dtype=float)
    return 0.5 * np.sum(u * u, axis=0) + enthalpy(p, rho, gamma)


def entropy_function(p, rho, gamma):
    """Entropy function ``A(s) = p rho**-gamma``."""
    return np.asarray(p, dtype=float) * np.asarray(rho, dtype=float) ** (-gamma)


def density_from(p, A, gamma):
    """Density from pressure and entropy function."""
    return (np.asarray(p, dtype=float) / np.asarray(A, dtype=float)) ** (1.0 / gamma)


def to_characteristic(state: PrimitiveState, gamma) -> CharacteristicState:
    """Forward map ``(p, rho, u) -> (p, A, E, uT)``."""
    return CharacteristicState(
        p=state.p,
        A=entropy_function(state.p, state.rho, gamma),
        E=bernoulli(state.p, state.rho, state.u, gamma),
        uT=state.u[1:],
    )


def recover_primitive(cs: CharacteristicState, gamma) -> PrimitiveState:
    """Invert :func:`to_characteristic`, returning the branch with ``u0 >= 0``.

    Raises
    ------
    DomainError
        If ``A`` or ``p`` is not positive.
    NotRealizableError
        If ``2E - 2 h - |uT|^2 < 0``, i.e. no real axial velocity exists.
    """
    _check_positive(A=cs.A, p=cs.p)
    rho = density_from(cs.p, cs.A, gamma)
    rad = 2.0 * cs.E - 2.0 * enthalpy(cs.p, rho, gamma) - np.sum(cs.uT * cs.uT, axis=0)
    scale = np.maximum(np.abs(2.0 * cs.E), 1.0)
    if np.any(rad < -1e-14 * scale):
        raise NotRealizableError("state not realizable: negative kinetic radicand")
    u0 = np.sqrt(np.maximum(rad, 0.0))
    return PrimitiveState(p=cs.p, rho=rho, u=np.concatenate([u0[None], cs.uT], axis=0))


def friction_force(u0, mu):
    """Axial friction force per unit mass, ``-mu (u0)^2``."""
    return -mu * np.asarray(u0) ** 2


def default_derivative(x0_spacing, ndim):
    """Derivative operator for a uniform axial grid times a periodic torus.

    Axis 0 uses fourth-order finite differences; axes 1 and 2 (if present)
    are treated spectrally with period ``2*pi``.
    """

    def deriv(f, j):
        if j == 0:
            return fd_derivative(f, x0_spacing, axis=0)
        if ndim == 1:
            return np.zeros_like(f)
        return torus_derivative(f, axis=j)

    return deriv


def euler_residual(state: PrimitiveState, gas: GasParams, x0=None, deriv=None):
    """Residuals of the steady Euler system with friction.

    Evaluates ``div(rho u (x) u) + grad p - rho b``, ``div(rho u)`` and
    ``div(rho E u) - rho b.u`` with ``b = (-mu u0^2, 0, 0)``.

    Parameters
    ----------
    state : PrimitiveState
        Fields of shape ``(n0,)`` (one-dimensional) or ``(n0, N1, N2)``.
    gas : GasParams
    x0 : ndarray, optional
        Uniform axial nodes; required unless ``deriv`` is supplied.
    deriv : callable, optional
        ``deriv(f, j)`` returning the physical derivative along ``x^j``.
        Lets callers evaluate residuals on mapped grids.

    Returns
    -------
    dict
        ``momentum`` (3, ...), ``mass`` and ``energy`` arrays plus their sup norms.
    """
    p, rho, u = state.p, state.rho, state.u
    if deriv is None:
        if x0 is None:
            raise ValueError("either x0 or deriv must be given")
        x0 = np.asarray(x0, dtype=float)
        h = np.diff(x0)
        if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
            raise ValueError("axial grid must be uniform")
        deriv = default_derivative(h[0], p.ndim)
    E = bernoulli(p, rho, u, gas.gamma)
    fb = friction_force(u[0], gas.mu)
    mass = sum(deriv(rho * u[j], j) for j in range(3))
    momentum = []
    for i in range(3):
        r = sum(deriv(rho * u[j] * u[i], j) for j in range(3)) + deriv(p, i)
        if i == 0:
            r = r - rho * fb
        momentum.append(r)
    momentum = np.array(momentum)
    energy = sum(deriv(rho * E * u[j], j) for j in range(3)) - rho * fb * u[0]
    return {
        "momentum": momentum,
        "mass": mass,
        "energy": energy,
        "momentum_sup": float(np.max(np.abs(momentum))),
        "mass_sup": float(np.max(np.abs(mass))),
        "energy_sup": float(np.max(np.abs(energy))),
    }


def rh_residual(left: PrimitiveState, right: PrimitiveState, normal, gas: GasParams):
    """Rankine-Hugoniot jumps ``[f] = f(right) - f(left)`` across a surface.

    Parameters
    ----------
    left, right : PrimitiveState
        Upstream and downstream states at the surface.
    normal : array_like
        Normal vector (not necessarily unit), three components on axis 0.

    Returns
    -------
    dict
        ``momentum`` = [rho (u.n) u + p n], ``mass`` = [rho u.n],
        ``energy`` = [rho (u.n) E] and ``jump_p`` = [p].
    """
    n = np.asarray(normal, dtype=float)
    if np.any(np.sum(n * n, axis=0) == 0):
        raise ValueError("normal must be nonzero")

    def fluxes(s):
        un = np.sum(s.u * n, axis=0)
        m = s.rho * un
        E = bernoulli(s.p, s.rho, s.u, gas.gamma)
        return m * s.u + s.p * n, m, m * E

    mr, qr, er = fluxes(right)
    ml, ql, el = fluxes(left)
    return {
        "momentum": mr - ml,
        "mass": qr - ql,
        "energy": er - el,
        "jump_p": right.p - left.p,
    }


def pressure_equation_residual(state: PrimitiveState, gas: GasParams, x0=None, deriv=None):
    """Second-order pressure equation obtained by taking the divergence of momentum.

    For smooth isentropic-along-streamline flow ``div u = -D_u p/(gamma p)``,
    which turns the divergence of the momentum equation into

        D_u(D_u p/(gamma p)) - tr((Du)^2) - div(grad p / rho) + div b = 0,

    with ``D_u = u.grad`` and ``b = (-mu u0^2, 0, 0)``.  Multiplied by the
    density its linearization about a subsonic Fanno branch is the elliptic
    pressure operator.  Arguments are as in :func:`euler_residual`.
    """
    p, rho, u = state.p, state.rho, state.u
    if deriv is None:
        if x0 is None:
            raise ValueError("either x0 or deriv must be given")
        deriv = default_derivative(float(np.diff(np.asarray(x0, dtype=float))[0]), p.ndim)

    def material(f):
        return sum(u[j] * deriv(f, j) for j in range(3))

    grad_u = [[deriv(u[j], i) for j in range(3)] for i in range(3)]
    trace_sq = sum(grad_u[i][j] * grad_u[j][i] for i in range(3) for j in range(3))
    div_grad = sum(deriv(deriv(p, i) / rho, i) for i in range(3))
    div_friction = -2.0 * gas.mu * u[0] * grad_u[0][0]
    return material(material(p) / (gas.gamma * p)) - trace_sq - div_grad + div_friction
