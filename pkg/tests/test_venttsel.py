import warnings

import numpy as np
import pytest
from conftest import Manufactured, supersonic_inlet

from fanno_shock import venttsel as V
from fanno_shock.background import build_background, coefficients
from fanno_shock.gas import GasParams


def _torus(N):
    y = V.torus_nodes(N)
    return np.meshgrid(y, y, indexing="ij")


@pytest.fixture(scope="module")
def frictionless_table():
    bg = build_background(GasParams(1.4, 0.0), 1.0, 0.5, supersonic_inlet(1.4, 1.6))
    return coefficients(bg)


# ---------------------------------------------------------------------------
# analysis and synthesis


def test_single_mode_lands_in_cos_sin_block():
    y1, y2 = _torus(16)
    a = V.analyze(np.cos(3 * y1) * np.sin(y2))
    assert a[2, 3, 1] == pytest.approx(1.0, abs=1e-14)
    a[2, 3, 1] = 0.0
    assert np.max(np.abs(a)) < 1e-14


def test_constant_uses_quarter_weight():
    a = V.analyze(np.ones((16, 16)))
    lam = V.lambda_weights(8)
    assert a[0, 0, 0] == pytest.approx(4.0, abs=1e-14)
    assert lam[0, 0] * a[0, 0, 0] == pytest.approx(1.0, abs=1e-14)
    assert lam[0, 3] == 0.5 and lam[2, 0] == 0.5 and lam[1, 1] == 1.0
    assert np.max(np.abs(V.synthesize(a, 16) - 1.0)) < 1e-14


def test_random_band_limited_roundtrip_and_parseval():
    rng = np.random.default_rng(7)
    coeffs = rng.standard_normal((4, 8, 8))
    coeffs[1, 0, :] = coeffs[3, 0, :] = 0.0  # sin(0 y1) carries nothing
    coeffs[2, :, 0] = coeffs[3, :, 0] = 0.0
    f = V.synthesize(coeffs, 16)
    assert np.max(np.abs(V.synthesize(V.analyze(f), 16) - f)) < 1e-12
    assert np.max(np.abs(V.analyze(f) - coeffs)) < 1e-12
    # mean of f^2 = (1/4) sum lambda a^2
    assert np.mean(f**2) == pytest.approx(0.25 * np.sum(V.lambda_weights(8) * coeffs**2), rel=1e-12)


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError, match="power of two"):
        V.analyze(np.zeros((12, 12)))


def test_tail_fraction_sees_nyquist_content():
    y1, _ = _torus(16)
    assert V.tail_fraction(np.cos(2 * y1)) < 1e-28
    assert V.tail_fraction(np.cos(8 * y1)) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# single modes


def test_homogeneous_mode_is_zero(default_table):
    grid = V.default_grid(default_table)
    sol = V.solve_mode_bvp(5, np.zeros(len(grid)), 0.0, default_table, grid)
    assert np.all(sol.p == 0.0) and np.all(sol.c == 0.0)


@pytest.mark.parametrize("q", [0, 1, 8, 50])
def test_manufactured_mode_recovered(default_table, q):
    t = default_table
    grid = V.default_grid(t)
    r_b = grid[0]
    P = lambda y: np.cos(2 * (y - r_b)) + (y - r_b) ** 2
    dP = lambda y: -2 * np.sin(2 * (y - r_b)) + 2 * (y - r_b)
    d2P = lambda y: -4 * np.cos(2 * (y - r_b)) + 2
    xg, wg = np.polynomial.legendre.leggauss(30)
    integral = np.array([0.5 * (y - r_b) * np.sum(wg * t.profiles(r_b + (xg + 1) * 0.5 * (y - r_b))["b"]
                                                      * P(r_b + (xg + 1) * 0.5 * (y - r_b))) for y in grid])
    pr = t.profiles(grid)
    f = pr["e1"] * d2P(grid) + pr["e2"] * dP(grid) + (pr["e3"] + q) * P(grid) + pr["e4"] * integral + pr["e5"] * P(r_b)
    h0 = t.mu8 * dP(r_b) + (t.mu7 - q) * P(r_b)
    sol = V.solve_mode_bvp(q, f, h0, t, grid, h1_m=P(grid[-1]))
    assert np.max(np.abs(sol.p - P(grid))) < 1e-8
    assert np.max(np.abs(sol.dp - dP(grid))) < 1e-8
    assert sol.bc_residual < 1e-12
    assert np.max(np.abs(V.mode_ode_residual(sol, f, t))) < 1e-5


@pytest.mark.parametrize("q", [0, 2, 13, 98])
def test_superposition_matches_chebyshev_collocation(default_table, q):
    grid = V.default_grid(default_table)
    f = lambda y: np.exp(y) * np.sin(3 * y) - 0.5
    sol = V.solve_mode_bvp(q, f(grid), 0.7, default_table, grid, h1_m=-0.3)
    colloc = V.collocation_mode_bvp(default_table, q, f, 0.7, -0.3, n=40)
    assert np.max(np.abs(colloc(grid) - sol.p)) < 1e-8


def test_degenerate_mode_raises(frictionless_table):
    # without friction mu7 = mu8 = 0, so the q = 0 Venttsel row is empty
    grid = V.default_grid(frictionless_table, 64)
    with pytest.raises(V.SConditionViolation, match="S-Condition violated at q=0"):
        V.solve_mode_bvp(0, np.zeros(len(grid)), 0.0, frictionless_table, grid)
    sol = V.solve_mode_bvp(4, np.ones(len(grid)), 1.0, frictionless_table, grid)
    assert sol.p[0] == pytest.approx(-0.25, abs=1e-14)  # (mu7 - q) p = h0


# ---------------------------------------------------------------------------
# full problem


def test_homogeneous_problem_exactly_zero(default_table):
    grid = V.default_grid(default_table)
    z = np.zeros((16, 16))
    sol = V.solve_venttsel(np.zeros((len(grid), 16, 16)), z, z, default_table, grid)
    assert np.all(sol.p == 0.0) and np.all(sol.d0p == 0.0)


def test_manufactured_solution_and_convergence(default_table):
    m = Manufactured(default_table, rho=0.1)
    errors = []
    for N, n0 in ((16, 200), (32, 400)):
        grid, exact, f, h0, h1 = m.data(N, n0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", V.TruncationWarning)
            sol = V.solve_venttsel(f, h0, h1, default_table, grid)
        errors.append(np.max(np.abs(sol.p - exact)) / np.max(np.abs(exact)))
    assert errors[0] < 1e-6
    assert errors[0] / errors[1] >= 100.0


def test_band_limited_closure(default_table):
    m = Manufactured(default_table, rho=0.0)
    grid, exact, f, h0, h1 = m.data(16, 200)
    sol = V.solve_venttsel(f, h0, h1, default_table, grid)
    assert np.max(np.abs(sol.p - exact)) < 1e-10
    assert np.max(np.abs(V.venttsel_residual(sol.trace, sol.d0_trace, h0, default_table))) < 1e-8
    interior = (V.apply_L(sol.p, default_table, grid) - f)[3:-3]
    assert np.max(np.abs(interior)) < 1e-6


def test_truncation_warning(default_table):
    grid = V.default_grid(default_table, 64)
    y1, _ = _torus(16)
    f = np.broadcast_to(np.cos(8 * y1) + 1.0, (len(grid), 16, 16))
    with pytest.warns(V.TruncationWarning):
        V.solve_venttsel(f, np.zeros((16, 16)), np.zeros((16, 16)), default_table, grid)


def _random_data(seed, grid, N=16):
    rng = np.random.default_rng(seed)
    K = N // 2
    f = V.synthesize(rng.standard_normal((len(grid), 4, K, K)) * np.exp(-np.arange(K))[None, None, :, None], N)
    h0 = V.synthesize(rng.standard_normal((4, K, K)), N)
    h1 = V.synthesize(rng.standard_normal((4, K, K)), N)
    return f, h0, h1


def test_linearity(default_table):
    grid = V.default_grid(default_table, 100)
    f1, a1, b1 = _random_data(1, grid)
    f2, a2, b2 = _random_data(2, grid)
    s1 = V.solve_venttsel(f1, a1, b1, default_table, grid).p
    s2 = V.solve_venttsel(f2, a2, b2, default_table, grid).p
    s = V.solve_venttsel(2 * f1 - 3 * f2, 2 * a1 - 3 * a2, 2 * b1 - 3 * b2, default_table, grid).p
    assert np.max(np.abs(s - (2 * s1 - 3 * s2))) < 1e-10 * np.max(np.abs(s))


def test_mode_decoupling(default_table):
    grid = V.default_grid(default_table, 100)
    y1, y2 = _torus(16)
    shape = np.sin(2 * y1) * np.cos(y2)
    f = (grid**2)[:, None, None] * shape
    sol = V.solve_venttsel(f, 0.3 * shape, -shape, default_table, grid)
    a = V.analyze(sol.p)
    main = a[:, 1, 2, 1].copy()
    a[:, 1, 2, 1] = 0.0
    assert np.max(np.abs(main)) > 0.1
    assert np.max(np.abs(a)) <= 1e-12 * np.max(np.abs(main))


def test_lift_choice_does_not_change_solution(default_table):
    grid = V.default_grid(default_table, 120)
    f, h0, h1 = _random_data(3, grid)
    p25 = V.solve_venttsel(f, h0, h1, default_table, grid, lift_fraction=0.25).p
    p60 = V.solve_venttsel(f, h0, h1, default_table, grid, lift_fraction=0.6).p
    assert np.max(np.abs(p25 - p60)) < 1e-10 * np.max(np.abs(p25))


def test_lift_matches_direct_exit_data(default_table):
    grid = V.default_grid(default_table, 120)
    z = np.zeros((16, 16))
    y1, y2 = _torus(16)
    sol = V.solve_venttsel(np.zeros((len(grid), 16, 16)), z, np.cos(y1) * np.cos(3 * y2), default_table, grid)
    direct = V.solve_mode_bvp(10, np.zeros(len(grid)), 0.0, default_table, grid, h1_m=1.0)
    assert np.max(np.abs(V.analyze(sol.p)[:, 0, 1, 3] - direct.p)) < 1e-12


def test_thread_count_does_not_change_result(default_table):
    grid = V.default_grid(default_table, 80)
    f, h0, h1 = _random_data(4, grid)
    one = V.solve_venttsel(f, h0, h1, default_table, grid, threads=1).p
    many = V.solve_venttsel(f, h0, h1, default_table, grid, threads=3).p
    assert np.array_equal(one, many)


def test_scan_coverage_flag(default_table):
    grid = V.default_grid(default_table, 64)
    z = np.zeros((16, 16))
    f = np.zeros((len(grid), 16, 16))
    assert V.solve_venttsel(f, z, z, default_table, grid, Q_max=400).covered
    sol = V.solve_venttsel(f, z, z, default_table, grid, Q_max=50)
    assert not sol.covered and sol.max_q == 98.0


# ---------------------------------------------------------------------------
# operators


def test_apply_L_matches_exact_operator_at_fourth_order(default_table):
    t = default_table
    g, lap = Manufactured(t, rho=0.0).torus(16)
    r_b = t.bg.r_b
    xg, wg = np.polynomial.legendre.leggauss(30)
    errs = []
    for n0 in (101, 201):
        grid = V.default_grid(t, n0)
        s = grid - r_b
        P, dP, d2P = np.cos(3 * s), -3 * np.sin(3 * s), -9 * np.cos(3 * s)
        integral = np.array([0.5 * (y - r_b) * np.sum(
            wg * t.profiles(r_b + (xg + 1) * 0.5 * (y - r_b))["b"] * np.cos(3 * (xg + 1) * 0.5 * (y - r_b)))
            for y in grid])
        pr = t.profiles(grid)
        radial = pr["e1"] * d2P + pr["e2"] * dP + pr["e3"] * P + pr["e4"] * integral + pr["e5"]
        exact = radial[:, None, None] * g - P[:, None, None] * lap
        errs.append(np.max(np.abs(V.apply_L(P[:, None, None] * g, t, grid) - exact)))
    assert errs[1] < 1e-6
    assert np.log2(errs[0] / errs[1]) > 3.5


def test_simpson_quadrature_order():
    errs = []
    for n in (41, 81, 161):
        x = np.linspace(0.0, 2.0, n)
        errs.append(np.max(np.abs(V.cumulative_integral(np.cos(3 * x), x) - np.sin(3 * x) / 3)))
    assert np.log2(errs[0] / errs[1]) >= 3.8 and np.log2(errs[1] / errs[2]) >= 3.8


def test_apply_L_frictionless_axial_only(frictionless_table):
    t = frictionless_table
    grid = V.default_grid(t, 50)
    p = np.broadcast_to((grid**3)[:, None, None], (len(grid), 8, 8))
    expected = t.profiles(grid)["e1"] * 6 * grid
    out = V.apply_L(p, t, grid)
    assert np.max(np.abs(out - expected[:, None, None])) < 1e-10


def test_venttsel_residual_examples(default_table):
    t = default_table
    z = np.zeros((16, 16))
    assert np.all(V.venttsel_residual(z, z, z, t) == 0.0)
    h0 = np.full((16, 16), 0.25)
    res = V.venttsel_residual(np.ones((16, 16)), z, h0, t)
    assert np.max(np.abs(res - (t.mu7 - 0.25))) < 1e-14
