import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from softclik.cc_model import SERIES_THRESHOLD, CcModel, CcParams, cc_jacobian, cc_shape
from softclik.core import arc_length


def fd(L, q, s, h=1e-6):
    return (cc_shape(CcParams(L, q + h), s) - cc_shape(CcParams(L, q - h), s)) / (2 * h)


def test_straight_limit():
    np.testing.assert_allclose(cc_shape(CcParams(1.0, 0.0), 1.0), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(cc_shape(CcParams(1.0, 1e-12), 1.0), [1.0, 0.0], atol=1e-12)


def test_half_circle():
    np.testing.assert_allclose(cc_shape(CcParams(1.0, np.pi), 1.0), [0.0, 2 / np.pi], atol=1e-15)


def test_quarter_circle_against_ode():
    # integrate alpha' = kappa, x' = cos(alpha), y' = sin(alpha)
    k = np.pi / 2
    sol = solve_ivp(lambda s, y: [k, np.cos(y[0]), np.sin(y[0])], (0, 1), [0, 0, 0],
                    rtol=1e-12, atol=1e-14)
    closed = cc_shape(CcParams(1.0, k), 1.0)
    np.testing.assert_allclose(closed, [2 / np.pi, 2 / np.pi], atol=1e-15)
    np.testing.assert_allclose(closed, sol.y[1:, -1], atol=1e-10)


def test_base_is_clamped():
    for q in (-5.0, -1e-5, 0.0, 2e-5, 3.0):
        assert np.array_equal(cc_shape(CcParams(2.0, q), 0.0), [0.0, 0.0])
        np.testing.assert_array_equal(cc_jacobian(CcParams(2.0, q), 0.0), [0.0, 0.0])


def test_jacobian_zero_limit():
    np.testing.assert_allclose(cc_jacobian(CcParams(1.0, 0.0), 1.0), [0.0, 0.5], atol=1e-15)
    np.testing.assert_allclose(fd(1.0, 1e-6, 1.0, h=1e-6), [0.0, 0.5], atol=1e-6)


def test_jacobian_half_circle():
    J, F = cc_jacobian(CcParams(1.0, np.pi), 1.0), fd(1.0, np.pi, 1.0)
    assert np.linalg.norm(J - F) / np.linalg.norm(J) < 1e-6


def test_jacobian_random_pairs():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        q, s = rng.uniform(-2 * np.pi, 2 * np.pi), rng.uniform(0.05, 1.0)
        J, F = cc_jacobian(CcParams(1.0, q), s), fd(1.0, q, s)
        worst = max(worst, np.linalg.norm(J - F) / np.linalg.norm(J))
    assert worst < 1e-6


@settings(max_examples=50, deadline=None)
@given(q=st.floats(-2 * np.pi, 2 * np.pi), L=st.floats(0.1, 5.0))
def test_inextensible(q, L):
    s = np.linspace(0.0, 1.0, 4001)
    assert abs(arc_length(cc_shape(CcParams(L, q), s)) - L) < 1e-6 * max(L, 1.0)


def test_series_and_closed_form_agree_at_switch():
    s = np.linspace(0, 1, 11)
    for q in (SERIES_THRESHOLD, -SERIES_THRESHOLD):
        series = cc_shape(CcParams(1.0, q * (1 - 1e-12)), s)
        closed = cc_shape(CcParams(1.0, q), s)
        assert np.abs(series - closed).max() < 1e-10
        js = cc_jacobian(CcParams(1.0, q * (1 - 1e-12)), s)
        jc = cc_jacobian(CcParams(1.0, q), s)
        assert np.abs(js - jc).max() < 1e-10


def test_params_validation():
    import pytest

    with pytest.raises(ValueError):
        CcParams(0.0, 1.0)
    with pytest.raises(ValueError):
        CcParams(1.0, np.nan)
    with pytest.raises(ValueError):
        cc_shape(CcParams(), 1.5)


def test_model_interface():
    m = CcModel(1.0)
    assert (m.m, m.d) == (1, 2)
    s = np.linspace(0, 1, 5)
    assert m.shape([0.7], s).shape == (5, 2)
    P = m.partials([0.7], s)
    assert P.shape == (5, 2, 1)
    np.testing.assert_allclose(P[..., 0], cc_jacobian(CcParams(1.0, 0.7), s))
    assert m.partials([0.7], 0.5).shape == (2, 1)
