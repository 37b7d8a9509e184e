import numpy as np
import pytest

from fanno_shock.gas import (
    CharacteristicState,
    DomainError,
    GasParams,
    NotRealizableError,
    PrimitiveState,
    bernoulli,
    euler_residual,
    recover_primitive,
    rh_residual,
    sound_speed,
    to_characteristic,
)


def test_gas_params_validation():
    with pytest.raises(DomainError):
        GasParams(1.0)
    with pytest.raises(DomainError):
        GasParams(1.4, -0.1)


def test_sound_speed_and_domain():
    assert sound_speed(1.0, 1.4, 1.4) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError):
        sound_speed(-1.0, 1.0, 1.4)


def test_bernoulli_value():
    # |u|^2/2 + gamma/(gamma-1) p/rho = 2 + 3.5
    assert bernoulli(1.0, 1.0, np.array([2.0, 0.0, 0.0]), 1.4) == pytest.approx(5.5, rel=1e-15)


def test_characteristic_round_trip():
    rng = np.random.default_rng(3)
    shape = (5, 4)
    state = PrimitiveState(
        p=rng.uniform(0.5, 2.0, shape),
        rho=rng.uniform(0.5, 2.0, shape),
        u=np.stack([rng.uniform(0.2, 2.0, shape), rng.normal(0, 0.1, shape),
                    rng.normal(0, 0.1, shape)]),
    )
    back = recover_primitive(to_characteristic(state, 1.4), 1.4)
    for a, b in ((state.p, back.p), (state.rho, back.rho), (state.u, back.u)):
        np.testing.assert_allclose(b, a, rtol=1e-13, atol=1e-14)


def test_recover_rejects_unrealizable():
    cs = CharacteristicState(p=1.0, A=1.0, E=1.0, uT=np.zeros(2))
    with pytest.raises(NotRealizableError):
        recover_primitive(cs, 1.4)


def test_uniform_state_has_zero_residuals():
    x = np.linspace(0.0, 1.0, 33)
    state = PrimitiveState(p=np.ones(33), rho=np.ones(33), u=np.stack([np.full(33, 2.0),
                                                                      np.zeros(33), np.zeros(33)]))
    res = euler_residual(state, GasParams(1.4, 0.0), x0=x)
    assert res["momentum_sup"] < 1e-13
    assert res["mass_sup"] < 1e-13
    assert res["energy_sup"] < 1e-13


def test_textbook_normal_shock_residuals():
    gamma, mach = 1.4, 2.0
    left = PrimitiveState(p=1.0, rho=1.0, u=np.array([mach * np.sqrt(gamma), 0.0, 0.0]))
    p2 = 4.5
    rho2 = (gamma + 1) * mach**2 / ((gamma - 1) * mach**2 + 2)
    right = PrimitiveState(p=p2, rho=rho2, u=np.array([left.u[0] / rho2, 0.0, 0.0]))
    res = rh_residual(left, right, np.array([1.0, 0.0, 0.0]), GasParams(gamma))
    assert np.max(np.abs(res["momentum"])) < 1e-12
    assert abs(res["mass"]) < 1e-12
    assert abs(res["energy"]) < 1e-12
    assert res["jump_p"] > 0
    mach2 = right.u[0] / sound_speed(right.p, right.rho, gamma)
    assert mach2 == pytest.approx(np.sqrt(1.0 / 3.0), abs=1e-12)


def test_rh_residual_rejects_zero_normal():
    s = PrimitiveState(p=1.0, rho=1.0, u=np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        rh_residual(s, s, np.zeros(3), GasParams(1.4))
