import math

import numpy as np
import pytest

from ililc import autodiff as ad
from ililc.lifting import (
    SimulationError,
    condition_number,
    jacobian_g,
    lifted_output,
    linearized_lifted_jacobian,
    simulate_lifted,
)
from ililc.model import CartPendulumModel, CartPendulumParams, LtiModel, appendix_lti, make_reference


def _markov_toeplitz(lti, n):
    """Brute force: entry (k, j) = C A^(k-j) B for k >= j (outputs start at y(mu))."""
    G = np.zeros((n, n))
    for k in range(n):
        for j in range(k + 1):
            G[k, j] = lti.C @ np.linalg.matrix_power(lti.A, k - j + lti.mu - 1) @ lti.B
    return G


def test_equilibrium_output_is_zero():
    m = CartPendulumModel(CartPendulumParams().noiseless(), make_reference(amplitude=0.0))
    y, states = simulate_lifted(m, np.zeros(m.n_lifted))
    assert np.all(y == 0) and states.shape == (m.N + 1, 4)


def test_lti_impulse_response():
    lti = appendix_lti()
    nf = lti.normal_form(make_reference(N=5, lead=1, tail=1, amplitude=0.0))
    u = np.zeros(nf.n_lifted)
    u[0] = 1.0
    y, _ = simulate_lifted(nf, u)
    expected = [lti.C @ np.linalg.matrix_power(lti.A, k - 1) @ lti.B for k in range(1, 6)]
    np.testing.assert_allclose(y, expected, atol=1e-15)


def test_lti_superposition(rng):
    nf = appendix_lti().normal_form(make_reference(N=40, lead=5, tail=5))
    u1, u2 = rng.normal(size=(2, nf.n_lifted))
    y1, _ = simulate_lifted(nf, u1)
    y2, _ = simulate_lifted(nf, u2)
    y12, _ = simulate_lifted(nf, u1 + u2)
    # the reference does not enter an open-loop LTI model
    np.testing.assert_allclose(y12, y1 + y2, atol=1e-12)


@pytest.mark.parametrize("mu_case", ["appendix", "mu3"])
def test_lti_jacobian_is_markov_toeplitz(mu_case):
    if mu_case == "appendix":
        lti = appendix_lti()
    else:
        lti = LtiModel(np.array([[0.2, 1.0, 0.0], [0.0, 0.3, 1.0], [0.1, 0.0, 0.4]]), np.array([0.0, 0.0, 1.0]),
                       np.array([1.0, 0.0, 0.0]))
    nf = lti.normal_form(make_reference(N=8 + lti.mu - 1, lead=1, tail=1))
    J = jacobian_g(nf, np.zeros(nf.n_lifted))
    np.testing.assert_allclose(J, _markov_toeplitz(lti, nf.n_lifted), atol=1e-13)


def test_jacobian_is_causal(cart_short, rng):
    J = jacobian_g(cart_short, 0.001 * rng.normal(size=cart_short.n_lifted))
    assert np.all(np.triu(J, 1) == 0.0)


def test_cart_jacobian_matches_finite_differences(cart_short):
    u = np.zeros(cart_short.n_lifted)
    J = jacobian_g(cart_short, u)
    Jf = ad.finite_difference_jacobian(lambda us: lifted_output(cart_short, us), u)
    assert np.max(np.abs(J - Jf)) <= 1e-6 * np.max(np.abs(Jf))


def test_jacobian_matches_linearized_lifted_model(cart_short, rng):
    u = 0.01 * rng.normal(size=cart_short.n_lifted)
    J = jacobian_g(cart_short, u)
    G = linearized_lifted_jacobian(cart_short, u)
    assert np.max(np.abs(J - G)) <= 1e-8 * np.max(np.abs(G))


def test_width_does_not_change_jacobian(cart_short):
    u = np.zeros(cart_short.n_lifted)
    np.testing.assert_allclose(jacobian_g(cart_short, u, width=7), jacobian_g(cart_short, u), rtol=0, atol=1e-13)


def test_condition_numbers():
    assert condition_number(np.eye(4)) == pytest.approx(1.0)
    assert condition_number(np.diag([10.0, 0.1])) == pytest.approx(100.0)
    assert condition_number(np.diag([1.0, 0.0])) == math.inf
    with pytest.raises(ValueError):
        condition_number(np.ones((2, 3)))


def test_default_cart_jacobian_is_ill_conditioned(cart_default):
    J = jacobian_g(cart_default, np.zeros(cart_default.n_lifted))
    assert condition_number(J) >= 1e12


def test_simulation_failure_carries_step():
    m = CartPendulumModel(CartPendulumParams().noiseless(), make_reference(N=60, lead=5, tail=5))
    u = np.zeros(m.n_lifted)
    u[10] = 50.0
    with pytest.raises(SimulationError) as info:
        simulate_lifted(m, u)
    assert info.value.k > 10


def test_noisy_simulation_is_deterministic(cart_short):
    w = np.random.default_rng(3).normal(scale=0.03, size=cart_short.N)
    a, _ = simulate_lifted(cart_short, np.zeros(cart_short.n_lifted), w)
    b, _ = simulate_lifted(cart_short, np.zeros(cart_short.n_lifted), w.copy())
    assert np.array_equal(a, b)


def test_wrong_input_length(cart_short):
    with pytest.raises(ValueError):
        simulate_lifted(cart_short, np.zeros(3))
