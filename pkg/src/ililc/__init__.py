"""Iterative learning control for non-minimum-phase nonlinear systems via stable inversion."""
from .ilc import ILILC, NILC, GradientILC, PType, run_simulation, run_trial
from .model import (
    CartPendulumModel,
    CartPendulumParams,
    LtiModel,
    ReferenceProfile,
    appendix_lti,
    make_reference,
)
from .stable_inversion import diagnostic_report, synthesize

__version__ = "0.1.0"
