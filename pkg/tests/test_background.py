import csv
import math

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from conftest import supersonic_inlet
from fanno_shock import background as bgm
from fanno_shock.background import (
    ChokingError,
    InadmissibleBackgroundError,
    build_background,
    choking_length,
    coefficients,
    d_linearized,
    d_printed,
    integrate_fanno,
    max_subsonic_length,
    normal_shock,
    printed_mu,
    rh_jacobian,
    rh_system,
    verify_1d,
    write_profile_csv,
)
from fanno_shock.gas import (
    CharacteristicState,
    GasParams,
    PrimitiveState,
    pressure_equation_residual,
    recover_primitive,
    rh_residual,
)


def subsonic_state(mach=0.5, gamma=1.4):
    return PrimitiveState(p=1 / gamma, rho=1.0, u=np.array([mach, 0.0, 0.0]))


# -- Fanno branches ---------------------------------------------------------


def test_frictionless_branch_is_constant():
    s0 = subsonic_state()
    tab = integrate_fanno(s0, (0.0, 2.0), GasParams(1.4, 0.0))
    assert np.all(tab.u == 0.5)
    assert np.all(tab.p == s0.p)
    assert np.all(tab.rho == 1.0)


def test_subsonic_branch_monotone():
    tab = integrate_fanno(subsonic_state(), (0.0, 1.0), GasParams(1.4, 0.3))
    assert np.all(np.diff(tab.u) > 0)
    assert np.all(np.diff(tab.p) < 0)
    assert np.all(np.diff(tab.t) > 0)


def test_rk4_observed_order():
    gas = GasParams(1.4, 0.5)
    s0 = subsonic_state()
    ref = integrate_fanno(s0, (0.0, 1.0), gas, max_step=2.5e-4).u[-1]
    errs = [abs(integrate_fanno(s0, (0.0, 1.0), gas, max_step=h).u[-1] - ref)
            for h in (0.02, 0.01, 0.005)]
    order = math.log2(errs[1] / errs[2])
    assert abs(order - 4.0) <= 0.1


def test_branch_matches_adaptive_reference():
    gas = GasParams(1.2, 0.2)
    s0 = supersonic_inlet(1.2, 2.0)
    tab = integrate_fanno(s0, (0.0, 0.8), gas)
    sol = solve_ivp(lambda x, y: bgm.fanno_rhs(y, 1.2, 0.2), (0.0, 0.8),
                    [2.0, 1 / 1.2, 1.0], rtol=1e-13, atol=1e-14, method="DOP853")
    np.testing.assert_allclose([tab.u[-1], tab.p[-1], tab.rho[-1]], sol.y[:, -1], rtol=1e-10)


def test_choking_raises_with_position():
    gas = GasParams(1.4, 0.5)
    s0 = subsonic_state(0.8)
    L = max_subsonic_length(s0, gas)
    with pytest.raises(ChokingError) as info:
        integrate_fanno(s0, (0.0, 2 * L), gas)
    assert info.value.x == pytest.approx(L, abs=5e-3)


def test_choking_length_closed_form():
    # dt/dx = mu (1+g) t^2/(1-t)  =>  mu (1+g) x = [-1/t - ln t]
    g, mu = 1.4, 0.1
    s0 = subsonic_state(0.5)
    F = lambda t: -1 / t - math.log(t)
    expect = (F(1 - bgm.TOL_SONIC) - F(0.25)) / (mu * (1 + g))
    assert max_subsonic_length(s0, GasParams(g, mu)) == pytest.approx(expect, rel=1e-10)


def test_choking_length_scaling_and_monotonicity():
    s0 = subsonic_state(0.5)
    assert max_subsonic_length(s0, GasParams(1.4, 0.0)) == math.inf
    l1 = max_subsonic_length(s0, GasParams(1.4, 0.1))
    l2 = max_subsonic_length(s0, GasParams(1.4, 0.2))
    assert l2 == pytest.approx(l1 / 2, rel=1e-9)
    l3 = max_subsonic_length(subsonic_state(0.7), GasParams(1.4, 0.1))
    assert l3 < l1


# -- normal shock -------------------------------------------------------------


def test_normal_shock_textbook():
    g = 1.4
    left = PrimitiveState(p=1.0, rho=1.0, u=np.array([2 * math.sqrt(g), 0.0, 0.0]))
    right = normal_shock(left, GasParams(g))
    assert abs(right.p - 4.5) <= 1e-12
    mach2 = right.u[0] / math.sqrt(g * right.p / right.rho)
    assert mach2 == pytest.approx(math.sqrt(1 / 3), abs=1e-12)
    res = rh_residual(left, right, np.array([1.0, 0.0, 0.0]), GasParams(g))
    assert max(np.max(np.abs(res["momentum"])), abs(res["mass"]), abs(res["energy"])) < 1e-12
    assert res["jump_p"] > 0


def test_normal_shock_sonic_limit_is_identity():
    g = 1.4
    left = PrimitiveState(p=1.0, rho=1.0, u=np.array([(1 + 1e-10) * math.sqrt(g), 0, 0]))
    right = normal_shock(left, GasParams(g))
    assert right.p == pytest.approx(1.0, abs=1e-9)
    assert right.rho == pytest.approx(1.0, abs=1e-9)


def test_normal_shock_rejects_subsonic():
    with pytest.raises(Exception):
        normal_shock(subsonic_state(), GasParams(1.4))


# -- assembled background -------------------------------------------------------


def test_background_residuals(default_background):
    res = verify_1d(default_background)
    assert res["supersonic"] < 1e-10
    assert res["subsonic"] < 1e-10
    shock = bgm.shock_residual(default_background)
    assert shock["max"] < 1e-12
    assert shock["jump_p"] > 0


def test_background_entropy_and_bernoulli(default_background):
    bg = default_background
    x = np.linspace(bg.r_b, bg.L, 401)
    s = bg.plus(x)
    A = s["p"] * s["rho"] ** (-1.4)
    assert np.max(np.abs(A / A[0] - 1)) < 1e-10
    # dE/dx = -mu u^2 along each branch
    E = bg.plus(x)["E"]
    sol = solve_ivp(lambda y, e: [-0.1 * float(bg.plus(y)["u"]) ** 2], (x[0], x[-1]), [E[0]],
                    rtol=1e-12, atol=1e-13, t_eval=x)
    assert np.max(np.abs(sol.y[0] - E)) < 1e-9


def test_background_step_size_rule(default_background):
    bg = default_background
    d_sub = max_subsonic_length(bg.right, bg.gas) - (bg.L - bg.r_b)
    d_sup = choking_length(bg.left, bg.gas)
    assert bg.h_b == pytest.approx(min(0.05 * (bg.L - bg.r_b), 0.5 * min(d_sub, d_sup)))
    assert bg.subsonic.span[0] <= bg.r_b - bg.h_b + 1e-14


def test_frictionless_background_is_piecewise_constant():
    gas = GasParams(1.4, 0.0)
    inlet = supersonic_inlet(1.4, 2.0)
    bg = build_background(gas, 1.0, 0.4, inlet)
    assert np.all(bg.supersonic.u == 2.0)
    shocked = normal_shock(inlet, gas)
    assert np.all(bg.subsonic.p == shocked.p)
    assert np.all(bg.subsonic.rho == shocked.rho)


def test_shock_near_exit():
    bg = build_background(GasParams(1.4, 0.1), 1.0, 1.0 - 1e-6, supersonic_inlet(1.4, 1.6))
    assert bg.h_b == pytest.approx(5e-8)
    res = verify_1d(bg)
    assert res["supersonic"] < 1e-10
    # knots 6e-9 apart near x0 = 1 resolve derivatives only to ~1e-16/6e-9
    assert res["subsonic"] < 1e-6


def test_choking_errors_name_branch():
    with pytest.raises(ChokingError) as info:
        build_background(GasParams(1.4, 0.5), 2.0, 1.5, supersonic_inlet(1.4, 1.3))
    assert info.value.branch == "supersonic"
    with pytest.raises(ChokingError) as info:
        build_background(GasParams(1.4, 0.5), 3.0, 0.05, supersonic_inlet(1.4, 1.3))
    assert info.value.branch == "subsonic"


def test_profile_csv_format(default_background, tmp_path):
    path = tmp_path / "bg.csv"
    write_profile_csv(default_background, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["x0", "u0", "p", "rho", "t"]
    assert float(rows[1][0]) == 0.0
    assert float(rows[-1][0]) == pytest.approx(1.0)


# -- coefficients -------------------------------------------------------------


def test_printed_d1_value():
    assert d_printed(0.5, 1.4)[0] == pytest.approx(-1.1, abs=1e-14)


def test_det3_closed_form_and_fd(default_background, default_table):
    bg, tab = default_background, default_table
    s = bg.plus(bg.r_b)
    closed = (s["c2"] - s["u"] ** 2) / (1.4 - 1)
    assert tab.det3 == pytest.approx(float(closed), rel=1e-12)
    Vp = np.array([s["u"], s["p"], s["rho"]], dtype=float)
    m = bg.minus(bg.r_b)
    Vm = np.array([m["u"], m["p"], m["rho"]], dtype=float)
    h = 1e-6
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h * max(1.0, abs(Vp[k]))
        f = lambda v: rh_system(v, Vm, 1.4)
        J[:, k] = (-f(Vp + 2 * e) + 8 * f(Vp + e) - 8 * f(Vp - e) + f(Vp - 2 * e)) / (12 * e[k])
    assert abs(np.linalg.det(J) - tab.det3) < 1e-8
    np.testing.assert_allclose(rh_jacobian(Vp, 1.4), J, atol=1e-8)


def test_mu_solve_matches_closed_forms(default_background, default_table):
    expect = printed_mu(default_background)
    got = (default_table.mu1, default_table.mu2, default_table.mu3, default_table.mu4)
    np.testing.assert_allclose(got, expect, rtol=1e-10)


def test_mu_relations(default_table):
    t = default_table
    assert t.mu7 == pytest.approx(-t.mu0 * t.mu6, rel=1e-14)
    assert t.mu8 == pytest.approx(-t.mu0 * t.mu2 * t.mu5, rel=1e-14)
    assert t.mu9 == pytest.approx(-t.mu2 * t.mu5 / (4 * np.pi**2 * t.mu6), rel=1e-14)
    assert t.mu5 == pytest.approx(-1 / t.gamma2, rel=1e-14)


def test_shock_displacement_response_fd(default_background, default_table):
    # moving the shock to r_b + h: downstream state from R-H minus the subsonic branch
    bg, tab = default_background, default_table
    h = 1e-4

    def dev(r):
        left = PrimitiveState(p=float(bg.minus(r)["p"]), rho=float(bg.minus(r)["rho"]),
                              u=np.array([float(bg.minus(r)["u"]), 0, 0]))
        right = normal_shock(left, bg.gas)
        s = bg.plus(r)
        A = lambda p, rho: p * rho ** (-1.4)
        return np.array([right.u[0] - s["u"], right.p - s["p"], right.rho - s["rho"],
                         A(right.p, right.rho) - A(s["p"], s["rho"])], dtype=float)

    fd = (dev(bg.r_b + h) - dev(bg.r_b - h)) / (2 * h)
    np.testing.assert_allclose(fd, [tab.mu1, tab.mu2, tab.mu3, tab.mu4], rtol=1e-6, atol=1e-9)


def test_mu4_negative_for_physical_shocks():
    # the bracket (g-1)/(g+1)(c^2-u^2)^+ + (c^2)^- - (c^2)^+ is negative for every M > 1
    for g in (1.2, 1.4, 5 / 3):
        for mach in (1.05, 1.5, 2.0, 3.0):
            bg = build_background(GasParams(g, 0.01), 0.02, 0.01, supersonic_inlet(g, mach))
            assert printed_mu(bg)[3] < 0


def test_mu1_sign_threshold():
    # mu1 > 0 exactly when the pre-shock Mach number satisfies M^2 < 2/(g (g-1))
    g = 1.4
    mcrit = math.sqrt(2 / (g * (g - 1)))
    weak = build_background(GasParams(g, 1e-3), 0.2, 0.1, supersonic_inlet(g, mcrit - 0.01))
    strong = build_background(GasParams(g, 1e-3), 0.2, 0.1, supersonic_inlet(g, mcrit + 0.02))
    assert coefficients(weak).mu1 > 0
    with pytest.raises(InadmissibleBackgroundError, match="mu1"):
        coefficients(strong)


def test_frictionless_coefficients_vanish():
    bg = build_background(GasParams(1.4, 0.0), 1.0, 0.5, supersonic_inlet(1.4, 1.6))
    tab = coefficients(bg)
    assert (tab.mu1, tab.mu2, tab.mu3, tab.mu4) == (0.0, 0.0, 0.0, 0.0)
    prof = tab.profiles(np.linspace(0.5, 1.0, 11))
    for k in ("e2", "e3", "e4", "e5", "e6"):
        assert np.all(prof[k] == 0.0)
    assert np.all(prof["e1"] < 0)


def test_damped_integral(default_background, default_table):
    bg = default_background
    y = 0.8
    f = lambda tau: 2 * 0.1 / 0.4 * math.exp(0.2 * (tau - y)) * float(bg.plus(tau)["rho"]) ** 0.4
    expect = quad(f, bg.r_b, y, epsabs=1e-14, epsrel=1e-13)[0]
    assert float(default_table.profiles(y)["damped_integral"]) == pytest.approx(expect, rel=1e-10)


def test_linearized_coefficients_match_pressure_equation():
    """Central differences of the exact pressure equation about the subsonic branch.

    Perturbations keep the transport laws exact: constant entropy function and
    dE/dx = -mu u^2, so that E and A enter without derivatives.
    """
    g, mu = 1.4, 0.1
    gas = GasParams(g, mu)
    bg = build_background(gas, 1.0, 0.5, supersonic_inlet(g, 1.6))
    x = np.linspace(0.55, 0.95, 801)
    s = bg.plus(x)
    A_b = float(bg.entropy_plus)
    phat = lambda y: np.sin(7 * y)

    def perturbed(eps, a_hat, e_hat):
        A = A_b + eps * a_hat
        pf = lambda y: bg.plus(y)["p"] + eps * phat(y)

        def rhs(y, E):
            p = pf(y)
            rho = (p / A) ** (1 / g)
            return [-mu * 2 * (E[0] - g / (g - 1) * p / rho)]

        E0 = float(bg.plus(x[0])["E"]) + eps * e_hat
        E = solve_ivp(rhs, (x[0], x[-1]), [E0], t_eval=x, rtol=1e-13, atol=1e-14,
                      method="DOP853").y[0]
        cs = CharacteristicState(p=pf(x), A=A + 0 * x, E=E, uT=np.zeros((2,) + x.shape))
        return E, pressure_equation_residual(recover_primitive(cs, g), gas, x0=x)

    h = 1e-5
    t, rho = s["t"], s["rho"]
    inner = slice(20, -20)
    for a_hat, e_hat in ((0.0, 0.0), (0.0, 1.0), (1.0, 0.0)):
        Ep, Rp = perturbed(h, a_hat, e_hat)
        Em, Rm = perturbed(-h, a_hat, e_hat)
        lin = rho * (Rp - Rm) / (2 * h)
        E_hat = (Ep - Em) / (2 * h)
        errs = {}
        for name, dfun in (("linearized", d_linearized), ("printed", d_printed)):
            d1, d2, d3, d4 = dfun(t, g)
            op = ((t - 1) * -49 * np.sin(7 * x) + mu * d1 * 7 * np.cos(7 * x) + mu**2 * d2 * phat(x)
                  + mu**2 * rho * d3 * E_hat + mu**2 * rho**g * d4 * a_hat)
            errs[name] = np.max(np.abs(lin - op)[inner])
        assert errs["linearized"] < 1e-3
        assert errs["printed"] > 1e-1
