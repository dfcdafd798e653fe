import numpy as np
import pytest

from ililc.model import CartPendulumModel, CartPendulumParams, appendix_lti, make_reference
from ililc.stable_inversion import synthesize


@pytest.fixture(scope="session")
def short_reference():
    return make_reference(N=50, lead=10, tail=10, amplitude=0.05)


@pytest.fixture(scope="session")
def cart_short(short_reference):
    """Noise-free cart-pendulum on a 50-sample horizon."""
    return CartPendulumModel(CartPendulumParams().noiseless(), short_reference)


@pytest.fixture(scope="session")
def cart_default():
    return CartPendulumModel(CartPendulumParams().noiseless())


@pytest.fixture(scope="session")
def cart_default_synthesis(cart_default):
    return synthesize(cart_default)


@pytest.fixture(scope="session")
def appendix():
    return appendix_lti()


@pytest.fixture(scope="session")
def appendix_nf(appendix):
    return appendix.normal_form(make_reference())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Callable ``report(number, passed, detail)`` collecting one summary line per criterion."""

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
