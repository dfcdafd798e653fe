"""Learning laws and the trial loop.

Every law has the classical form ``u_{l+1} = u_l + L_l e_l`` and differs only
in how ``L_l`` is produced:

* NILC: ``L = (dg/du)^{-1}`` (applied through a linear solve)
* ILILC: ``L = d g^{-1} / d y`` evaluated at the measured output
* gradient: ``L = gamma (dg/du)^T``
* P-type: pointwise ``L (gamma1 e(k+1) + gamma0 e(k))``
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .lifting import SimulationError, condition_number, jacobian_g, simulate_lifted
from .model import NormalFormModel
from .stable_inversion import LiftedInverse, jacobian_ginv

__all__ = [
    "TrialRecord",
    "SimulationResult",
    "LearningLaw",
    "NILC",
    "ILILC",
    "GradientILC",
    "PType",
    "UpdateError",
    "run_trial",
    "run_simulation",
    "nrmse",
]

log = logging.getLogger(__name__)


class UpdateError(ArithmeticError):
    """A learning update could not be computed (e.g. an exactly singular Jacobian)."""


def nrmse(e: np.ndarray, r_peak: float) -> float:
    return float(np.sqrt(np.mean(np.square(e))) / r_peak)


@dataclass
class TrialRecord:
    trial: int
    u: np.ndarray
    y: np.ndarray | None
    e: np.ndarray | None
    nrmse: float
    max_abs_u: float
    cond: float | None = None
    divergent: bool = False
    bad_index: int | None = None
    message: str = ""

    @property
    def flag(self) -> str:
        return "divergent" if self.divergent else "ok"


@dataclass
class SimulationResult:
    law: str
    records: list = field(default_factory=list)
    divergent: bool = False

    @property
    def nrmse(self) -> np.ndarray:
        return np.array([r.nrmse for r in self.records])


def run_trial(
    truth: NormalFormModel,
    u: np.ndarray,
    trial: int = 0,
    seed=None,
    reference=None,
) -> TrialRecord:
    """Apply ``u`` to the truth model with fresh noise and measure the error.

    Process noise (std ``truth.sigma_process``) enters every step, measurement
    noise (std ``truth.sigma_meas``) perturbs the error only. Simulation
    failures are returned as divergent records, never raised.
    """
    u = np.asarray(u, dtype=float)
    ref = truth.reference if reference is None else reference
    r = ref.lifted(truth.mu)
    r_peak = float(np.max(np.abs(ref.r)))
    max_u = float(np.max(np.abs(u))) if u.size else 0.0
    if not np.all(np.isfinite(u)):
        bad = int(np.argmax(~np.isfinite(u)))
        return TrialRecord(trial, u, None, None, math.inf, max_u, divergent=True, bad_index=bad,
                           message="non-finite input")
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=truth.sigma_process, size=truth.N) if truth.sigma_process > 0 else None
    v = rng.normal(scale=truth.sigma_meas, size=r.size) if truth.sigma_meas > 0 else 0.0
    try:
        y, _ = _simulate(truth, u, w)
    except SimulationError as exc:
        return TrialRecord(trial, u, None, None, math.inf, max_u, divergent=True, bad_index=exc.k,
                           message=str(exc))
    e = r - y - v
    return TrialRecord(trial, u, y, e, nrmse(e, r_peak), max_u)


def _simulate(model, u, w):
    with np.errstate(over="ignore", invalid="ignore"):
        return simulate_lifted(model, u, w)


class LearningLaw:
    """Base class: ``update`` returns ``(u_next, diagnostics)``."""

    name = "law"

    def update(self, u: np.ndarray, y: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, dict]:
        raise NotImplementedError


class NILC(LearningLaw):
    """Newton ILC: solves ``dg/du(u) du = e`` with the control model's Jacobian.

    No safeguard against ill-conditioning; blow-up is the expected outcome
    for non-minimum-phase models.
    """

    name = "nilc"

    def __init__(self, model: NormalFormModel):
        self.model = model

    def update(self, u, y, e):
        J = jacobian_g(self.model, u)
        cond = condition_number(J)
        try:
            lu, piv = sla.lu_factor(J, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise UpdateError(f"Jacobian factorization failed: {exc}") from exc
        if np.any(np.diag(lu) == 0.0):
            raise UpdateError("Jacobian is exactly singular")
        du = sla.lu_solve((lu, piv), e)
        log.debug("NILC update: cond=%.3e max|du|=%.3e", cond, np.max(np.abs(du)))
        return u + du, {"cond": cond}


class ILILC(LearningLaw):
    """Invert-linearize ILC: ``L = d g^{-1}/dy`` at the measured output."""

    name = "ililc"

    def __init__(self, ginv: LiftedInverse):
        self.ginv = ginv

    def learning_matrix(self, y) -> np.ndarray:
        return jacobian_ginv(self.ginv, y)

    def update(self, u, y, e):
        L = self.learning_matrix(y)
        return u + L @ e, {}


class GradientILC(LearningLaw):
    """Gradient descent on ``e^T e / 2`` using the control model's Jacobian."""

    name = "gradient"

    def __init__(self, model: NormalFormModel, gamma: float = 1.1):
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        self.model = model
        self.gamma = float(gamma)

    def update(self, u, y, e):
        J = jacobian_g(self.model, u)
        return u + self.gamma * (J.T @ e), {}


class PType(LearningLaw):
    """``u(k) += L (gamma1 e(k+1) + gamma0 e(k))`` for relative-degree-one systems.

    ``e(0) = r(0) - y(0)`` with ``y(0) = 0`` from the zero initial state.
    """

    name = "ptype"

    def __init__(self, L: float, gamma1: float = 1.0, gamma0: float = 0.0, r0: float = 0.0):
        if gamma1 == 0:
            raise ValueError("gamma1 must be nonzero")
        self.L = float(L)
        self.gamma1 = float(gamma1)
        self.gamma0 = float(gamma0)
        self.r0 = float(r0)

    @classmethod
    def for_lti(cls, lti, gain: float = 0.5, gamma1: float = 1.0, gamma0: float = 0.0) -> "PType":
        """Default gain ``gain / CB``."""
        if lti.mu != 1:
            raise ValueError("P-type law needs relative degree 1")
        return cls(gain / float(lti.C @ lti.B), gamma1, gamma0)

    def update(self, u, y, e):
        u = np.asarray(u, dtype=float)
        e = np.asarray(e, dtype=float)
        if u.shape != e.shape:
            raise ValueError(f"input length {u.size} and error length {e.size} differ")
        e_now = np.concatenate([[self.r0], e[:-1]])
        return u + self.L * (self.gamma1 * e + self.gamma0 * e_now), {}


def _trial_seed(seed, trial: int):
    if seed is None:
        return None
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (trial,))
    return np.random.SeedSequence(seed, spawn_key=(trial,))


def run_simulation(law: LearningLaw, truth: NormalFormModel, n_trials: int, seed=None) -> SimulationResult:
    """Trials ``0..n_trials-1`` from ``u_0 = 0``; stops at the first divergent record.

    Trial ``l`` draws its noise from ``SeedSequence(seed, spawn_key=(..., l))``
    so two laws run with the same ``seed`` see identical noise.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    res = SimulationResult(law.name)
    u = np.zeros(truth.n_lifted)
    for trial in range(n_trials):
        rec = run_trial(truth, u, trial, _trial_seed(seed, trial))
        res.records.append(rec)
        if rec.divergent:
            res.divergent = True
            break
        if trial == n_trials - 1:
            break
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                u_next, diag = law.update(u, rec.y, rec.e)
        except (UpdateError, ArithmeticError, ValueError) as exc:
            rec.divergent = True
            rec.message = f"update failed: {exc}"
            res.divergent = True
            break
        rec.cond = diag.get("cond")
        if not np.all(np.isfinite(u_next)):
            rec.divergent = True
            rec.bad_index = int(np.argmax(~np.isfinite(u_next)))
            rec.message = "non-finite update"
            res.divergent = True
            break
        u = u_next
    return res
