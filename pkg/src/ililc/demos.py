"""Canned scenarios with a known qualitative outcome.

Each function returns a :class:`DemoOutcome` whose ``passed`` flag says
whether the expected behaviour occurred.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bench import detect_convergence
from .ilc import ILILC, NILC, PType, run_simulation
from .lifting import condition_number, jacobian_g
from .model import CartPendulumModel, CartPendulumParams, appendix_lti, make_reference
from .stable_inversion import diagnostic_report, lti_inverse_state_matrix, synthesize

__all__ = ["DemoOutcome", "nilc_failure", "appendix_counterexample", "zero_error_ililc", "DEMOS"]

COND_THRESHOLD = 1e12
BLOWUP_INPUT = 1e6
TOLERANCE = 5e-4


@dataclass
class DemoOutcome:
    name: str
    passed: bool
    trajectories: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def _cart_models(N: int, reference=None):
    ref = reference if reference is not None else make_reference(N=N)
    control = CartPendulumModel(CartPendulumParams().noiseless(), ref)
    truth = CartPendulumModel(CartPendulumParams(), ref)
    return control, truth


def nilc_failure(seed: int = 0, N: int = 250, n_trials: int = 2) -> DemoOutcome:
    """Newton ILC on the nominal cart-pendulum: ill-conditioned Jacobian, then blow-up."""
    control, truth = _cart_models(N)
    J = jacobian_g(control, np.zeros(control.n_lifted))
    cond = condition_number(J)
    res = run_simulation(NILC(control), truth, n_trials, seed)
    max_u = [r.max_abs_u for r in res.records]
    blown = res.divergent or any(not math.isfinite(h) for h in res.nrmse) or max(max_u) > BLOWUP_INPUT
    return DemoOutcome(
        "nilc-failure",
        passed=bool(cond >= COND_THRESHOLD and blown),
        trajectories={"nilc": res.nrmse.tolist()},
        diagnostics={
            "cond_dg_du_at_zero": cond,
            "divergent": bool(res.divergent),
            "max_abs_u": max_u,
            "messages": [r.message for r in res.records if r.message],
        },
    )


def appendix_counterexample(n_ptype: int = 10, n_ililc: int = 50, gain: float = 0.5) -> DemoOutcome:
    """Non-minimum-phase LTI system: P-type diverges monotonically, ILILC converges."""
    lti = appendix_lti()
    model = lti.normal_form(make_reference())
    _, radius = lti_inverse_state_matrix(lti)
    ptype = run_simulation(PType.for_lti(lti, gain), model, n_ptype)
    h_p = ptype.nrmse
    increasing = bool(len(h_p) == n_ptype and np.all(np.diff(h_p) > 0))
    syn = synthesize(model)
    ililc = run_simulation(ILILC(syn.ginv), model, n_ililc)
    h_i = ililc.nrmse
    reached = bool(np.any(h_i < 1e-3))
    return DemoOutcome(
        "appendix-counterexample",
        passed=bool(increasing and radius > 1 and reached),
        trajectories={"ptype": h_p.tolist(), "ililc": h_i.tolist()},
        diagnostics={
            "CB": float(lti.C @ lti.B),
            "inverse_spectral_radius": radius,
            "ptype_strictly_increasing": increasing,
            "ililc_min_nrmse": float(np.min(h_i)),
            "synthesis": diagnostic_report(syn),
        },
    )


def zero_error_ililc(seed: int = 0, N: int = 250, n_trials: int = 50, tolerance: float = TOLERANCE) -> DemoOutcome:
    """ILILC on the nominal cart-pendulum with process and measurement noise."""
    control, truth = _cart_models(N)
    syn = synthesize(control)
    res = run_simulation(ILILC(syn.ginv), truth, n_trials, seed)
    h = res.nrmse
    below = np.flatnonzero(h < tolerance)
    first = int(below[0]) if below.size else None
    return DemoOutcome(
        "zero-error-ililc",
        passed=first is not None and not res.divergent,
        trajectories={"ililc": h.tolist()},
        diagnostics={
            "first_trial_below_tolerance": first,
            "l_star": detect_convergence(h, tolerance) if not res.divergent else None,
            "final_nrmse": float(h[-1]),
            "tolerance": tolerance,
            "synthesis": diagnostic_report(syn),
        },
    )


DEMOS = {
    "nilc-failure": nilc_failure,
    "appendix-counterexample": appendix_counterexample,
    "zero-error-ililc": zero_error_ililc,
}
