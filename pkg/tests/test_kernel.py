import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonlocal_lab import (DiffusionTensor, KernelDomainError, KernelSpec, OrderField,
                          eval_alpha, eval_gamma, validate_spec)


def spec1(beta=0.5, eps=1.0, **kw):
    return KernelSpec(OrderField.constant(beta), DiffusionTensor.identity(1), eps, **kw)


def test_alpha_hand_value_1d():
    # exponent n/2 + beta + 1 = 2: 0.5 / 0.5^2
    assert eval_alpha(0.0, 0.5, spec1())[0, 0] == pytest.approx(2.0, rel=1e-14)


def test_alpha_outside_horizon_is_zero():
    assert eval_alpha(0.0, 2.0, spec1())[0, 0] == 0.0


def test_alpha_hand_value_2d():
    s = KernelSpec(OrderField.constant(0.5), DiffusionTensor.identity(2), 1.0, dim=2)
    # |y - x| = 0.5, exponent n/2 + beta + 1 = 2.5
    np.testing.assert_allclose(eval_alpha([0, 0], [0.3, 0.4], s)[0],
                               np.array([0.3, 0.4]) / 0.5**2.5, rtol=1e-13)


def test_coincident_points_raise():
    with pytest.raises(KernelDomainError):
        eval_alpha(0.3, 0.3, spec1())
    with pytest.raises(KernelDomainError):
        eval_gamma(0.0, 0.3, 0.3, spec1())


def test_gamma_hand_value():
    assert eval_gamma(0.0, 0.0, 0.5, spec1())[0] == pytest.approx(4.0, rel=1e-14)
    assert eval_gamma(0.0, 0.0, 1.5, spec1())[0] == 0.0


def test_gamma_symmetrized_is_symmetric_exactly():
    s = KernelSpec(OrderField.sine(0.5, 0.3), DiffusionTensor.identity(1), 1.0)
    x, y = np.array([[0.1], [0.4]]), np.array([[0.7], [0.35]])
    assert np.array_equal(eval_gamma(0.0, x, y, s), eval_gamma(0.0, y, x, s))


@given(st.floats(-1, 2), st.floats(-1, 2))
def test_alpha_antisymmetric_for_constant_order(x, y):
    if abs(x - y) < 1e-6:
        return
    s = spec1(0.37, 5.0)
    np.testing.assert_allclose(eval_alpha(x, y, s), -eval_alpha(y, x, s), rtol=1e-13)


@given(st.floats(-1, 2), st.floats(-1, 2), st.floats(0, 3))
def test_gamma_two_sided_bounds_literal(x, y, t):
    if abs(x - y) < 1e-4:
        return
    order = OrderField.sine(0.5, 0.4)
    tens = DiffusionTensor.time_periodic(0.5, 2.0)
    s = KernelSpec(order, tens, 10.0, symmetrize=False)
    g = eval_gamma(t, x, y, s)[0]
    base = abs(y - x) ** -(1 + 2 * order(np.array([[x]]))[0])
    assert g >= 0
    assert tens.a_lo * base * (1 - 1e-12) <= g <= tens.a_hi * base * (1 + 1e-12)


def test_validate_identity_passes():
    assert validate_spec(spec1(), 200).passed


def test_validate_sine_order_passes():
    order = OrderField(lambda x: 0.5 + 0.4 * np.sin(np.pi * x[:, 0]), 0.1, 0.9, 0.4 * np.pi)
    s = KernelSpec(order, DiffusionTensor.identity(1), 0.5)
    assert validate_spec(s, 500, bounds=([-1.0], [2.0])).passed


def test_validate_reports_ellipticity_gap():
    bad = DiffusionTensor(lambda t, x, y: 0.5 * np.ones((x.shape[0], 1, 1)), None, 0.8, 1.0)
    rep = validate_spec(KernelSpec(OrderField.constant(0.4), bad, 0.5), 50)
    assert not rep.passed
    assert rep.violations["ellipticity_lower"] == pytest.approx(0.3, abs=1e-12)
    assert "ellipticity_lower" in rep.failures


def test_order_bounds_enforced():
    with pytest.raises(ValueError, match="beta"):
        OrderField.sine(0.8, 0.4)
    with pytest.raises(ValueError):
        KernelSpec(OrderField.constant(0.4), DiffusionTensor.identity(1), 0.0)


def test_time_periodic_tensor_bounds():
    t = DiffusionTensor.time_periodic(0.5, 2.0, dim=2)
    assert t.a_lo == 0.5 and t.a_hi == 1.5
    with pytest.raises(ValueError):
        DiffusionTensor.time_periodic(1.0, 1.0)
