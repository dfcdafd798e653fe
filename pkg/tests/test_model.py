import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ililc import autodiff as ad
from ililc.model import (
    CartPendulumModel,
    CartPendulumParams,
    LtiModel,
    ModelError,
    PendulumGeometryError,
    RelativeDegreeError,
    appendix_lti,
    cart_pendulum_accels,
    cart_pendulum_step,
    lti_step,
    make_reference,
    relative_degree_check,
)

P = CartPendulumParams()
FLAT = make_reference(amplitude=0.0)


def test_accels_at_rest_are_zero():
    assert cart_pendulum_accels(0.0, 0.0, 0.0, 0.0, P) == (0.0, 0.0)


def test_accels_unit_force_hand_values():
    # psi = 0: psidd = -3 c / (H (4 (Mc + Mp) - 3 Mp)), zdd = 4 c / (4 (Mc + Mp) - 3 Mp)
    psidd, zdd = cart_pendulum_accels(0.0, 0.0, 0.0, 1.0, P)
    assert psidd == pytest.approx(-160.0 / 27.0, rel=1e-14)
    assert zdd == pytest.approx(16.0 / 9.0, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(psi=st.floats(-1.2, 1.2), psidot=st.floats(-3, 3), zdot=st.floats(-2, 2))
def test_accels_affine_in_force(psi, psidot, zdot):
    a0 = np.array(cart_pendulum_accels(psi, psidot, zdot, 0.0, P))
    a1 = np.array(cart_pendulum_accels(psi, psidot, zdot, 1.0, P))
    a2 = np.array(cart_pendulum_accels(psi, psidot, zdot, 2.0, P))
    np.testing.assert_allclose(a2 - a0, 2 * (a1 - a0), rtol=1e-10, atol=1e-10)


def test_accels_reject_nonfinite():
    with pytest.raises(ModelError):
        cart_pendulum_accels(np.nan, 0.0, 0.0, 0.0, P)


def test_step_at_rest():
    assert cart_pendulum_step([0.0] * 4, 0.0, 0, FLAT, P) == [0.0] * 4


def test_step_small_input_hand_values():
    # c = 630 * 0.01 = 6.3 N; zdd = 11.2, psidd = -37.33.., ydd = 11.2 - 0.45 * 37.33.. = -5.6
    nxt = cart_pendulum_step([0.0] * 4, 0.01, 0, FLAT, P)
    np.testing.assert_allclose(nxt, [0.0, -5.6 * 0.016**2, 0.0, 11.2 * 0.016**2], rtol=1e-12, atol=1e-18)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.05, 0.05), min_size=4, max_size=4), st.floats(-0.05, 0.05))
def test_step_shift_structure(x, u):
    nxt = cart_pendulum_step(x, u, 3, FLAT, P)
    assert nxt[0] == x[1] and nxt[2] == x[3]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.05, 0.05), min_size=4, max_size=4))
def test_step_affine_in_input(x):
    ys = [cart_pendulum_step(x, u, 0, FLAT, P)[1] for u in (0.0, 0.01, 0.02)]
    second = ys[2] - 2 * ys[1] + ys[0]
    assert abs(second) <= 1e-12 * max(1.0, abs(ys[1]))


def test_step_geometry_violation_names_step():
    with pytest.raises(PendulumGeometryError) as info:
        cart_pendulum_step([1.0, 1.0, 0.0, 0.0], 0.0, 17, FLAT, P)
    assert info.value.k == 17


def test_duals_and_floats_agree(rng):
    for _ in range(5):
        x = rng.uniform(-0.05, 0.05, size=4).tolist()
        u = float(rng.normal(scale=0.01))
        plain = cart_pendulum_step(x, u, 5, make_reference(), P)
        duals = cart_pendulum_step([ad.DualScalar(v, np.zeros(2)) for v in x], ad.DualScalar(u, np.ones(2)),
                                   5, make_reference(), P)
        np.testing.assert_allclose([ad.value_of(d) for d in duals], plain, rtol=1e-15, atol=1e-18)


def test_closed_loop_rest_is_invariant():
    m = CartPendulumModel(P.noiseless(), FLAT)
    x = m.x0()
    for k in range(m.N):
        x = m.f(x, 0.0, k)
        assert x == [0.0] * 4


def test_lti_step():
    lti = appendix_lti()
    assert np.all(lti_step(lti, np.zeros(3), 0.0) == 0)
    np.testing.assert_array_equal(lti_step(lti, np.zeros(3), 1.0), [0.0, 0.0, 1.34])
    ident = LtiModel(np.eye(2), np.zeros(2), np.array([1.0, 0.0]), mu=1)
    np.testing.assert_array_equal(lti_step(ident, [0.3, -0.2], 0.0), [0.3, -0.2])


def test_reference_properties():
    r = make_reference()
    assert r.N == 250 and r.Ts == 0.016
    assert np.max(np.abs(r.r)) == pytest.approx(0.2, abs=1e-15)
    assert np.all(r.r[: r.lead] == 0) and np.all(r.r[r.N - r.tail + 1 :] == 0)
    assert np.all(make_reference(amplitude=0.0).r == 0)


@pytest.mark.parametrize("kw", [dict(N=50, lead=30, tail=30), dict(lead=-1), dict(hold_fraction=1.0),
                                dict(shape="square")])
def test_reference_rejects_bad_settings(kw):
    with pytest.raises(ModelError):
        make_reference(**kw)


def test_relative_degrees():
    assert relative_degree_check(CartPendulumModel()) == 2
    lti = appendix_lti()
    assert relative_degree_check(lti) == 1
    assert float(lti.C @ lti.B) == pytest.approx(-0.9916, abs=1e-15)
    with pytest.raises(RelativeDegreeError):
        LtiModel(np.eye(2), np.zeros(2), np.array([1.0, 0.0]))


def test_lti_normal_form_shift_structure():
    lti = LtiModel(np.array([[0.2, 1.0, 0.0], [0.0, 0.3, 1.0], [0.1, 0.0, 0.4]]), np.array([0.0, 0.0, 1.0]),
                   np.array([1.0, 0.0, 0.0]))
    assert lti.mu == 3
    assert relative_degree_check(lti.normal_form(make_reference())) == 3


def test_params_vector_round_trip():
    theta = P.as_vector()
    assert theta.shape == (10,)
    assert CartPendulumParams.from_vector(theta) == P
    with pytest.raises(ModelError):
        CartPendulumParams(M_c=-1.0)
