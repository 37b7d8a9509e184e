"""One-dimensional frictional transonic background and its coefficient table.

The background consists of two Fanno branches joined by a normal shock at
``r_b``.  Along each branch

    du/dx = mu t u / (1 - t),  dp/dx = mu gamma t p / (t - 1),
    drho/dx = mu t rho / (t - 1),  dt/dx = mu (1 + gamma) t^2 / (1 - t),

with ``t = u^2 / c^2`` the squared Mach number.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .gas import DomainError, GasParams, PrimitiveState, rh_residual

TOL_SONIC = 1e-6
TABLE_STEP = 5e-4


class ChokingError(RuntimeError):
    """A Fanno branch reached the sonic point."""

    def __init__(self, message, x=None, branch=None):
        super().__init__(message)
        self.x = x
        self.branch = branch


# Signs reported but not enforced. The closed form of mu4 is negative for every
# admissible normal shock, so asserting mu4 > 0 would reject all backgrounds.
ADVISORY_SIGNS = ("mu4",)


class InadmissibleBackgroundError(ValueError):
    """A coefficient sign invariant failed."""


# ---------------------------------------------------------------------------
# Fanno branches


def _mach2(u, p, rho, gamma):
    return u * u * rho / (gamma * p)


def fanno_rhs(y, gamma, mu):
    """Right-hand side for ``y = (u, p, rho)``."""
    u, p, rho = y
    t = _mach2(u, p, rho, gamma)
    s = mu * t / (1.0 - t)
    return np.array([s * u, -gamma * s * p, -s * rho])


@dataclass(frozen=True)
class BranchTable:
    """Tabulated Fanno branch with cubic Hermite interpolation.

    Rows hold ``(x0, u0, p, rho, t)``; derivatives come from the ODE.
    """

    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    rho: np.ndarray
    gas: GasParams
    _splines: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        g, mu = self.gas.gamma, self.gas.mu
        t = self.t
        s = mu * t / (1.0 - t)
        der = {"u": s * self.u, "p": -g * s * self.p, "rho": -s * self.rho}
        sp = {k: CubicHermiteSpline(self.x, getattr(self, k), der[k]) for k in der}
        object.__setattr__(self, "_splines", sp)

    @property
    def t(self):
        return _mach2(self.u, self.p, self.rho, self.gas.gamma)

    @property
    def span(self):
        return float(self.x[0]), float(self.x[-1])

    def state(self, x):
        """Interpolated ``(u, p, rho)`` at ``x``."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.span
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise ValueError(f"x outside tabulated span [{lo}, {hi}]")
        return tuple(self._splines[k](x) for k in ("u", "p", "rho"))

    def derivative(self, x):
        """Derivatives of the interpolants ``(u', p', rho')`` at ``x``."""
        x = np.asarray(x, dtype=float)
        return tuple(self._splines[k](x, 1) for k in ("u", "p", "rho"))

    def __call__(self, x):
        """Dictionary of ``u, p, rho, t, E, c2`` at ``x``."""
        u, p, rho = self.state(x)
        g = self.gas.gamma
        c2 = g * p / rho
        return {"u": u, "p": p, "rho": rho, "t": u * u / c2, "c2": c2,
                "E": 0.5 * u * u + c2 / (g - 1.0)}

    def rows(self):
        return np.column_stack([self.x, self.u, self.p, self.rho, self.t])


def integrate_fanno(initial: PrimitiveState, span, gas: GasParams, max_step=TABLE_STEP,
                    tol_sonic=TOL_SONIC) -> BranchTable:
    """RK4 integration of the Fanno system from ``span[0]`` to ``span[1]``.

    The span may run backwards.  A step that lands within ``tol_sonic`` of
    ``t = 1`` or crosses it is retried with halved steps; if the sonic point
    is genuinely reached a :class:`ChokingError` reports the last ``x``.
    """
    a, b = float(span[0]), float(span[1])
    g, mu = gas.gamma, gas.mu
    y = np.array([float(initial.u[0]), float(initial.p), float(initial.rho)])
    t0 = _mach2(*y, g)
    if abs(t0 - 1.0) < tol_sonic:
        raise ChokingError("initial state is sonic", x=a)
    side = np.sign(t0 - 1.0)
    if a == b:
        xs = np.array([a])
        ys = y[None]
    else:
        n = max(int(math.ceil(abs(b - a) / max_step)), 1)
        xs = np.linspace(a, b, n + 1)
        ys = np.empty((n + 1, 3))
        ys[0] = y

        def step(y, h):
            k1 = fanno_rhs(y, g, mu)
            k2 = fanno_rhs(y + 0.5 * h * k1, g, mu)
            k3 = fanno_rhs(y + 0.5 * h * k2, g, mu)
            k4 = fanno_rhs(y + h * k3, g, mu)
            return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

        def ok(y):
            t = _mach2(*y, g)
            return np.all(y > 0) and np.sign(t - 1.0) == side and abs(t - 1.0) >= tol_sonic

        for i in range(n):
            h = xs[i + 1] - xs[i]
            with np.errstate(all="ignore"):
                y1 = step(y, h)
            if not ok(y1):
                # adaptive fallback: substeps
                yy, x, sub = y, xs[i], 16
                hh = h / sub
                for _ in range(sub):
                    with np.errstate(all="ignore"):
                        y2 = step(yy, hh)
                    if not ok(y2):
                        raise ChokingError(f"sonic point reached near x0={x:.12g}", x=float(x))
                    yy, x = y2, x + hh
                y1 = yy
            y = y1
            ys[i + 1] = y
    if xs[0] > xs[-1]:
        xs, ys = xs[::-1], ys[::-1]
    if len(xs) == 1:
        # degenerate span: duplicate point so interpolation is defined
        xs = np.array([a, a + 1e-300])
        ys = np.vstack([ys, ys])
    return BranchTable(x=xs, u=ys[:, 0], p=ys[:, 1], rho=ys[:, 2], gas=gas)


def choking_length(state: PrimitiveState, gas: GasParams, tol_sonic=TOL_SONIC):
    """Distance along ``+x0`` until ``|t - 1| = tol_sonic``; ``inf`` if ``mu = 0``.

    Bisection on the integration horizon; each probe integrates the Mach
    equation ``dt/dx = mu (1+gamma) t^2/(1-t)`` with an adaptive method.
    """
    g, mu = gas.gamma, gas.mu
    t0 = float(_mach2(state.u[0], state.p, state.rho, g))
    if mu == 0.0:
        return math.inf
    target = 1.0 - tol_sonic if t0 < 1.0 else 1.0 + tol_sonic
    if (t0 - target) * (t0 - 1.0) <= 0:
        return 0.0

    rhs = lambda x, t: [mu * (1 + g) * t[0] ** 2 / (1 - t[0])]
    ev = lambda x, t: t[0] - target
    ev.terminal = True
    horizon = 1.0 / mu
    while True:
        sol = solve_ivp(rhs, (0.0, horizon), [t0], method="DOP853", rtol=1e-12, atol=1e-14,
                        events=ev, dense_output=True)
        if sol.status == 1:
            break
        horizon *= 2.0
    # bisection on the horizon using the dense solution
    lo, hi = 0.0, float(sol.t[-1])
    side = np.sign(t0 - target)
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if np.sign(sol.sol(mid)[0] - target) == side:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def max_subsonic_length(state: PrimitiveState, gas: GasParams, tol_sonic=TOL_SONIC):
    """Choking length of a subsonic state (``inf`` when ``mu = 0``)."""
    t0 = _mach2(state.u[0], state.p, state.rho, gas.gamma)
    if not t0 < 1.0:
        raise DomainError("state is not subsonic")
    return choking_length(state, gas, tol_sonic)


def normal_shock(left: PrimitiveState, gas: GasParams) -> PrimitiveState:
    """Subsonic state behind a normal shock facing ``+x0``."""
    g = gas.gamma
    u, p, rho = float(left.u[0]), float(left.p), float(left.rho)
    if np.any(np.asarray(left.u[1:]) != 0):
        raise DomainError("normal shock expects zero tangential velocity")
    t = _mach2(u, p, rho, g)
    if not t > 1.0:
        raise DomainError("upstream state is not supersonic")
    p2 = p * (1.0 + 2.0 * g / (g + 1.0) * (t - 1.0))
    rho2 = rho * (g + 1.0) * t / ((g - 1.0) * t + 2.0)
    u2 = rho * u / rho2
    return PrimitiveState(p=p2, rho=rho2, u=np.array([u2, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# Background assembly


@dataclass(frozen=True)
class BackgroundSolution:
    """Frictional transonic background.

    ``supersonic`` covers ``[0, r_b + h_b]`` and ``subsonic`` covers
    ``[r_b - h_b, L + h_b]``; the parts beyond ``[0, r_b]`` and ``[r_b, L]``
    are the analytic extensions used by displaced shock fronts.
    """

    gas: GasParams
    L: float
    r_b: float
    h_b: float
    supersonic: BranchTable
    subsonic: BranchTable
    inlet: PrimitiveState

    def minus(self, x):
        return self.supersonic(x)

    def plus(self, x):
        return self.subsonic(x)

    @property
    def left(self):
        s = self.supersonic(self.r_b)
        return PrimitiveState(p=s["p"], rho=s["rho"], u=np.array([s["u"], 0.0, 0.0]))

    @property
    def right(self):
        s = self.subsonic(self.r_b)
        return PrimitiveState(p=s["p"], rho=s["rho"], u=np.array([s["u"], 0.0, 0.0]))

    @property
    def entropy_plus(self):
        """Entropy function ``p rho^-gamma``, constant on the subsonic branch."""
        r = self.right
        return float(r.p * r.rho ** (-self.gas.gamma))

    def profile_rows(self):
        """Table rows ``(x0, u0, p, rho, t)`` over ``[0, r_b]`` then ``[r_b, L]``."""
        sup = self.supersonic.rows()
        sub = self.subsonic.rows()
        sup = sup[sup[:, 0] <= self.r_b + 1e-14]
        sub = sub[(sub[:, 0] >= self.r_b - 1e-14) & (sub[:, 0] <= self.L + 1e-14)]
        return sup, sub


def _state_at(table: BranchTable, x):
    s = table(x)
    return PrimitiveState(p=float(s["p"]), rho=float(s["rho"]),
                          u=np.array([float(s["u"]), 0.0, 0.0]))


def build_background(gas: GasParams, L, r_b, inlet: PrimitiveState,
                     table_step=TABLE_STEP) -> BackgroundSolution:
    """Assemble the transonic background with its analytic extensions.

    ``h_b = min(0.05 (L - r_b), d/2)`` where ``d`` is the smaller of the
    distances to choking of the two branches measured from their ends.
    """
    L, r_b = float(L), float(r_b)
    if not 0.0 < r_b < L:
        raise DomainError("need 0 < r_b < L")
    if not _mach2(inlet.u[0], inlet.p, inlet.rho, gas.gamma) > 1.0:
        raise DomainError("inlet must be supersonic")
    try:
        sup = integrate_fanno(inlet, (0.0, r_b), gas, table_step)
    except ChokingError as exc:
        raise ChokingError(f"supersonic branch chokes before r_b: {exc}", x=exc.x,
                           branch="supersonic") from exc
    left = _state_at(sup, r_b)
    right = normal_shock(left, gas)
    d_sub = choking_length(right, gas) - (L - r_b)
    if d_sub <= 0:
        raise ChokingError("subsonic branch chokes before the exit", x=r_b + d_sub + (L - r_b),
                           branch="subsonic")
    d_sup = choking_length(left, gas)
    h_b = min(0.05 * (L - r_b), 0.5 * min(d_sub, d_sup))
    step = min(table_step, h_b / 8.0)
    ext = integrate_fanno(left, (r_b, r_b + h_b), gas, step)
    sup = BranchTable(
        x=np.concatenate([sup.x, ext.x[1:]]), u=np.concatenate([sup.u, ext.u[1:]]),
        p=np.concatenate([sup.p, ext.p[1:]]), rho=np.concatenate([sup.rho, ext.rho[1:]]),
        gas=gas)
    back = integrate_fanno(right, (r_b, r_b - h_b), gas, step)
    fwd = integrate_fanno(right, (r_b, L), gas, step)
    tail = integrate_fanno(_state_at(fwd, L), (L, L + h_b), gas, step)
    parts = [back, fwd, tail]
    sub = BranchTable(
        x=np.concatenate([parts[0].x, parts[1].x[1:], parts[2].x[1:]]),
        u=np.concatenate([parts[0].u, parts[1].u[1:], parts[2].u[1:]]),
        p=np.concatenate([parts[0].p, parts[1].p[1:], parts[2].p[1:]]),
        rho=np.concatenate([parts[0].rho, parts[1].rho[1:], parts[2].rho[1:]]),
        gas=gas)
    return BackgroundSolution(gas=gas, L=L, r_b=r_b, h_b=h_b, supersonic=sup, subsonic=sub,
                              inlet=inlet)


def write_profile_csv(bg: BackgroundSolution, path):
    """CSV with header ``x0,u0,p,rho,t``, 17 significant digits, LF endings."""
    sup, sub = bg.profile_rows()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x0", "u0", "p", "rho", "t"])
        for row in np.vstack([sup, sub]):
            w.writerow([format(float(v), ".17g") for v in row])


# ---------------------------------------------------------------------------
# Coefficients


def d_printed(t, gamma):
    """Pressure-operator coefficients ``d1..d4`` exactly as printed."""
    g = gamma
    d1 = -((1 + 2 * g) * t**2 + t - 2) / (t - 1)
    d2 = (g * (1 + g) * t**4 - 2 * g * (1 + g) * t**3 - (g - 3) * t**2
          - 2 * (4 + g) * t + 8) / (t - 1) ** 3
    d3 = (g * t**2 + 3 * t - 4) / (t - 1) ** 3
    d4 = -(g * (g - 1) * t**3 + (5 * g - 3) * t**2 - 2 * (g - 4) * t - 8) / ((g - 1) * (t - 1) ** 3)
    return d1, d2, d3, d4


def d_linearized(t, gamma):
    """Coefficients ``d1..d4`` from linearizing the exact pressure equation.

    They differ from :func:`d_printed`; the finite-difference linearization
    test in the suite reproduces these.
    """
    g = gamma
    d1 = -((1 + 2 * g) * t**2 - t + 2) / (t - 1)
    d2 = (g * (g + 1) * t**4 - 2 * g * (g + 1) * t**3 - (g - 3) * t**2 - 8 * t + 4) / (t - 1) ** 3
    d3 = 2 * (g * t**2 + 3 * t - 2) / (t - 1) ** 3
    d4 = -((g - 1) * t + 2) * (g * t**2 + 3 * t - 2) / ((g - 1) * (t - 1) ** 3)
    return d1, d2, d3, d4


D_VARIANTS = {"printed": d_printed, "linearized": d_linearized}


def rh_system(V, Vm, gamma):
    """Normal R-H functions ``([rho u^2 + p], [rho u], [E])`` for ``V = (u, p, rho)``."""
    u, p, rho = V
    um, pm, rhom = Vm
    E = 0.5 * u * u + gamma / (gamma - 1) * p / rho
    Em = 0.5 * um * um + gamma / (gamma - 1) * pm / rhom
    return np.array([rho * u * u + p - (rhom * um * um + pm), rho * u - rhom * um, E - Em])


def rh_jacobian(V, gamma):
    """Jacobian of :func:`rh_system` with respect to the downstream ``V``."""
    u, p, rho = V
    c2 = gamma * p / rho
    return np.array([
        [2 * rho * u, 1.0, u * u],
        [rho, 0.0, u],
        [u, gamma / ((gamma - 1) * rho), -c2 / ((gamma - 1) * rho)],
    ])


@dataclass(frozen=True)
class CoefficientTable:
    """Background-determined scalars and ``y0`` profiles.

    Scalars are attributes (``mu0`` ... ``mu9``, ``gamma0`` ... ``gamma2``,
    ``det3``); profiles are evaluated by :meth:`profiles`.
    """

    bg: BackgroundSolution
    variant: str
    mu0: float
    mu1: float
    mu2: float
    mu3: float
    mu4: float
    mu5: float
    mu6: float
    mu7: float
    mu8: float
    mu9: float
    gamma0: float
    gamma1: float
    gamma2: float
    det3: float
    jacobian: np.ndarray
    q_E: float
    q_A: float
    kappa_E: float
    signs: dict
    _integral: CubicHermiteSpline = field(repr=False, compare=False)

    def d(self, t):
        return D_VARIANTS[self.variant](t, self.bg.gas.gamma)

    def profiles(self, y, dy=None):
        """Dictionary of ``e1..e6, b, db, d2b`` and background values at ``y``.

        With ``dy`` a small real step (e.g. ``1e-30``) the evaluation is
        pushed along ``y`` by the imaginary perturbation ``i*dy``, so that
        ``imag(value)/dy`` is the exact derivative of every profile.
        """
        g, mu = self.bg.gas.gamma, self.bg.gas.mu
        y = np.asarray(y, dtype=float)
        s = self.bg.plus(y)
        t, rho = s["t"], s["rho"]
        integral = self._integral(y)
        if dy is not None:
            # derivatives of the inputs from the Fanno system and the integral's integrand
            dt = mu * (1 + g) * t**2 / (1 - t)
            drho = mu * t * rho / (t - 1)
            dint = np.exp(2 * mu * y) * rho ** (g - 1)
            t = t + 1j * dy * dt
            rho = rho + 1j * dy * drho
            integral = integral + 1j * dy * dint
            y = y + 1j * dy
        out = _profile_formulas(y, t, rho, integral, g, mu, self.bg.r_b,
                                self.mu4 / self.mu2 if mu > 0 else 0.0, self.d)
        out.update(u=s["u"], p=s["p"], E=s["E"], c2=s["c2"])
        return out


def _profile_formulas(y, t, rho, integral, g, mu, r_b, mu4_over_mu2, dfun):
    # explicit in (y, t, rho, integral) so complex steps propagate exactly
    d1, d2, d3, d4 = dfun(t)
    b = np.exp(2 * mu * y) / rho
    lr = 2 * mu - mu * t / (t - 1)  # b'/b
    dt = mu * (1 + g) * t**2 / (1 - t)
    db = b * lr
    d2b = db * lr + b * mu * dt / (t - 1) ** 2
    damped = np.exp(-2 * mu * y) * integral * 2 * mu / (g - 1)
    zero = 0.0 * y
    return {
        "e1": t - 1.0,
        "e2": mu * d1,
        "e3": mu**2 * d2,
        "e4": 2 * mu**3 * np.exp(-2 * mu * y) * rho * d3,
        "e5": mu**2 * mu4_over_mu2 * (rho**g * d4 + rho * d3 * damped) if mu > 0 else zero,
        "e6": -(mu**2) * np.exp(2 * mu * (r_b - y)) * rho * d3,
        "b": b,
        "db": db,
        "d2b": d2b,
        "t": t,
        "rho": rho,
        "damped_integral": damped,
    }


def coefficients(bg: BackgroundSolution, variant="linearized", check_signs=True) -> CoefficientTable:
    """Evaluate every background coefficient and assert the sign invariants.

    Parameters
    ----------
    variant : {"linearized", "printed"}
        Which ``d1..d4`` formulas feed the ``e`` profiles.
    check_signs : bool
        Raise :class:`InadmissibleBackgroundError` on a violated sign (only
        meaningful for ``mu > 0``; with ``mu = 0`` the friction couplings vanish).
    """
    if variant not in D_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    g, mu = bg.gas.gamma, bg.gas.mu
    r_b = bg.r_b
    sp, sm = bg.plus(r_b), bg.minus(r_b)
    Vp = np.array([sp["u"], sp["p"], sp["rho"]], dtype=float)
    Vm = np.array([sm["u"], sm["p"], sm["rho"]], dtype=float)
    J = rh_jacobian(Vp, g)
    det3 = float(np.linalg.det(J))
    up, rhop, tp, c2p = float(sp["u"]), float(sp["rho"]), float(sp["t"]), float(sp["c2"])
    jump_p = float(sp["p"] - sm["p"])
    # linear R-H response to a shock displacement: J V = c (psi - r_b)
    c = np.array([-mu * jump_p, 0.0, mu * float(sp["u"] ** 2 - sm["u"] ** 2)])
    m1, m2, m3 = np.linalg.solve(J, c)
    dA = np.array([0.0, rhop ** (-g), -g * float(sp["p"]) * rhop ** (-g - 1)])
    m4 = float(dA @ np.array([m1, m2, m3]))
    mu0 = rhop * up / jump_p
    gamma0 = -mu * (g * tp**2 - tp + 2) / (1 - tp) ** 2
    q_A = mu * rhop**g * ((g - 1) * tp + 2) / ((g - 1) * (tp - 1) ** 2)
    q_E = -2 * mu * rhop / (tp - 1) ** 2
    gamma2 = rhop * up / (tp - 1)
    gamma1 = gamma0 - (q_A * m4 / m2 if mu > 0 else 0.0)
    mu5 = -1.0 / gamma2
    mu6 = -gamma1 * m2 / gamma2
    mu7 = -mu0 * mu6
    mu8 = -mu0 * m2 * mu5
    mu9 = -m2 * mu5 / (4 * np.pi**2 * mu6) if mu > 0 else math.nan
    kappa_E = -mu * float(sm["u"] ** 2 - sp["u"] ** 2)

    # cumulative integral of exp(2 mu tau) rho^(gamma-1) from r_b
    tab = bg.subsonic
    x = tab.x
    rho = tab.rho
    t = tab.t
    f = np.exp(2 * mu * x) * rho ** (g - 1)
    df = f * (2 * mu + (g - 1) * mu * t / (t - 1))
    h = np.diff(x)
    inc = 0.5 * h * (f[:-1] + f[1:]) + h**2 / 12.0 * (df[:-1] - df[1:])
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    cum -= np.interp(r_b, x, cum) if r_b not in x else cum[np.searchsorted(x, r_b)]
    integral = CubicHermiteSpline(x, cum, f)

    signs = {
        "gamma0": gamma0 < 0, "gamma1": gamma1 < 0, "gamma2": gamma2 < 0,
        "mu0": mu0 > 0, "mu1": m1 > 0, "mu2": m2 < 0, "mu3": m3 < 0, "mu4": m4 > 0,
        "mu5": mu5 > 0, "mu6": mu6 > 0, "mu7": mu7 < 0, "mu8": mu8 > 0, "mu9": mu9 > 0,
        "det3": det3 > 0,
    }
    if mu == 0.0:
        signs = {k: v for k, v in signs.items() if k in ("gamma2", "mu0", "mu5", "det3")}
    table = CoefficientTable(
        bg=bg, variant=variant, mu0=float(mu0), mu1=float(m1), mu2=float(m2), mu3=float(m3),
        mu4=m4, mu5=float(mu5), mu6=float(mu6), mu7=float(mu7), mu8=float(mu8), mu9=float(mu9),
        gamma0=float(gamma0), gamma1=float(gamma1), gamma2=float(gamma2), det3=det3,
        jacobian=J, q_E=float(q_E), q_A=float(q_A), kappa_E=kappa_E, signs=signs,
        _integral=integral,
    )
    if check_signs:
        bad = [k for k, ok in signs.items() if not ok and k not in ADVISORY_SIGNS]
        if bad:
            raise InadmissibleBackgroundError(f"coefficient sign violated: {', '.join(bad)}")
        e1 = table.profiles(np.linspace(r_b, bg.L, 64))["e1"]
        if np.any(e1 >= 0):
            raise InadmissibleBackgroundError("coefficient sign violated: e1")
    return table


def printed_mu(bg: BackgroundSolution):
    """``mu1..mu4`` from their closed forms, for cross-checking the linear solve."""
    g, mu = bg.gas.gamma, bg.gas.mu
    sp, sm = bg.plus(bg.r_b), bg.minus(bg.r_b)
    up, rhop, c2p = float(sp["u"]), float(sp["rho"]), float(sp["c2"])
    c2m = float(sm["c2"])
    gap = c2p - up**2
    m1 = 2 * mu * up * (g / (g + 1) + (c2m - c2p) / gap)
    m2 = -2 * mu * rhop * (((g - 1) * up**2 + c2p) / (g + 1) + up**2 / gap * (c2m - c2p))
    m3 = -2 * mu * rhop * (g / (g + 1) + (c2m - c2p) / gap)
    m4 = 2 * mu * rhop ** (1 - g) * ((g - 1) / (g + 1) * gap + (c2m - c2p))
    return m1, m2, m3, m4


def sign_report(table: CoefficientTable):
    """Plain dictionary of scalar coefficients and their sign checks."""
    names = ["mu0", "mu1", "mu2", "mu3", "mu4", "mu5", "mu6", "mu7", "mu8", "mu9",
             "gamma0", "gamma1", "gamma2", "det3"]
    return {n: {"value": float(getattr(table, n)), "ok": bool(table.signs.get(n, True))}
            for n in names}


def _spline_residual(tab: BranchTable, x, gas: GasParams):
    # conservative 1D residuals from the interpolant derivatives (product rule)
    s = tab(x)
    du, dp, drho = tab.derivative(x)
    u, p, rho, E = s["u"], s["p"], s["rho"], s["E"]
    dE = u * du + gas.gamma / (gas.gamma - 1) * (dp / rho - p * drho / rho**2)
    mass = drho * u + rho * du
    momentum = mass * u + rho * u * du + dp + rho * gas.mu * u**2
    energy = mass * E + rho * u * dE + rho * gas.mu * u**3
    return float(max(np.max(np.abs(mass)), np.max(np.abs(momentum)), np.max(np.abs(energy))))


def verify_1d(bg: BackgroundSolution, spacing=2.5e-4):
    """Sup-norm 1D Euler residuals of both branches on uniform grids.

    The grid spacing balances finite-difference truncation against roundoff.
    Branches shorter than ``1e-3`` cannot be differenced accurately and are
    checked through the derivatives of their interpolants instead.
    """
    from .gas import euler_residual

    out = {}
    for name, tab, (a, b) in (("supersonic", bg.supersonic, (0.0, bg.r_b)),
                              ("subsonic", bg.subsonic, (bg.r_b, bg.L))):
        x = np.linspace(a, b, max(201, int(math.ceil((b - a) / spacing)) + 1))
        if b - a < 1e-3:
            out[name] = _spline_residual(tab, x, bg.gas)
            continue
        s = tab(x)
        st = PrimitiveState(p=s["p"], rho=s["rho"], u=np.array([s["u"], 0 * x, 0 * x]))
        r = euler_residual(st, bg.gas, x0=x)
        out[name] = max(r["momentum_sup"], r["mass_sup"], r["energy_sup"])
    return out


def shock_residual(bg: BackgroundSolution):
    """R-H residuals of the background jump at ``r_b`` with ``n = (1, 0, 0)``."""
    r = rh_residual(bg.left, bg.right, np.array([1.0, 0.0, 0.0]), bg.gas)
    return {"momentum": float(np.max(np.abs(r["momentum"]))), "mass": float(abs(r["mass"])),
            "energy": float(abs(r["energy"])), "jump_p": float(r["jump_p"]),
            "max": float(max(np.max(np.abs(r["momentum"])), abs(r["mass"]), abs(r["energy"])))}

