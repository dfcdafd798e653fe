"""Stable inversion of discrete-time normal-form models.

The conventional inverse of a non-minimum-phase model is unstable forward in
time. Here the inverse state dynamics are split (through a similarity
transform of their linearization) into stable and unstable parts, and the
bounded inverse trajectory is found as the fixed point of a finite-horizon
Picard iteration in which stable modes are propagated forward and unstable
modes backward. The resulting lifted inverse ``u = g^{-1}(y)`` is
differentiable, so its Jacobian serves as the ILILC learning matrix.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from . import autodiff as ad
from .lifting import SimulationError, simulate_lifted
from .model import LtiModel, ModelError, NormalFormModel

__all__ = [
    "InversionError",
    "HyperbolicityError",
    "InverseSystem",
    "build_inverse",
    "equilibrium_preview",
    "DecoupledInverse",
    "decouple",
    "PhiKernel",
    "phi",
    "phi_norm",
    "picard_initial",
    "picard_iterate",
    "LiftedInverse",
    "lifted_inverse",
    "jacobian_ginv",
    "lti_inverse_state_matrix",
    "synthesize",
    "diagnostic_report",
]

NEWTON_TOL = 1e-11
NEWTON_MAXITER = 50
MIN_DERIVATIVE = 1e-12
HYPERBOLIC_MARGIN = 1e-8
MAX_COND_V = 1e12


class InversionError(ModelError):
    """Stable-inversion synthesis failed."""


class HyperbolicityError(InversionError):
    """The linearized inverse dynamics have an eigenvalue on the unit circle."""


def _matvec(M: np.ndarray, xs: Sequence) -> list:
    """``M @ xs`` for a constant matrix and a list of floats or duals."""
    if not any(isinstance(x, ad.DualScalar) for x in xs):
        return (M @ np.asarray(xs, dtype=float)).tolist() if len(xs) else [0.0] * M.shape[0]
    out = []
    for row in M:
        acc = 0.0
        for a, x in zip(row.tolist(), xs):
            if a != 0.0:
                acc = acc + a * x
        out.append(acc)
    return out


# ---------------------------------------------------------------------------
# conventional inverse
# ---------------------------------------------------------------------------
class InverseSystem:
    """Inverse of a normal-form model in terms of the preview ``[y(k), ..., y(k+mu)]``.

    The inverse state is ``eta = x[mu:]``; the first ``mu`` states are
    reconstructed from the preview.
    """

    def __init__(self, model: NormalFormModel):
        self.model = model
        self.mu = model.mu
        self.n_eta = model.n_x - model.mu
        self.last_newton_steps = 0

    def reconstruct(self, eta: Sequence, preview: Sequence) -> list:
        return list(preview[: self.mu]) + list(eta)

    def _channel(self, x, u, k):
        return self.model.f(x, u, k)[self.mu - 1]

    def f_mu_inv(self, eta: Sequence, preview: Sequence, k: int):
        """Solve ``f^mu(x, u, k) = y(k + mu)`` for ``u``.

        Newton's method runs on plain floats; if any argument is a dual
        number, one final step evaluated on the duals carries the tangents
        (implicit-function derivative).
        """
        x = self.reconstruct(eta, preview)
        target = preview[self.mu]
        xv = [ad.value_of(v) for v in x]
        tv = ad.value_of(target)
        u = 0.0
        deriv = None
        steps = 0
        for steps in range(NEWTON_MAXITER + 1):
            du = ad.DualScalar(u, np.ones(1))
            F = self._channel(xv, du, k)
            res = F.value - tv
            deriv = float(F.tangents[0])
            if not math.isfinite(res):
                raise InversionError(f"non-finite inverse residual at k={k}")
            if abs(res) <= NEWTON_TOL:
                # polish with the already-computed step so tiny residuals are not left in u
                if abs(deriv) >= MIN_DERIVATIVE:
                    u -= res / deriv
                break
            if abs(deriv) < MIN_DERIVATIVE:
                raise InversionError(f"singular input channel at k={k}: |df/du| = {abs(deriv):.3g}")
            if steps == NEWTON_MAXITER:
                raise InversionError(f"inverse Newton solve did not converge at k={k}")
            u -= res / deriv
        self.last_newton_steps = steps
        if ad.common_width(x) is None and not ad.is_dual(target):
            return u
        if abs(deriv) < MIN_DERIVATIVE:
            raise InversionError(f"singular input channel at k={k}")
        return u - (self._channel(x, u, k) - target) / deriv

    def f_eta(self, eta: Sequence, preview: Sequence, k: int) -> list:
        """Inverse state map ``eta(k+1)``."""
        x = self.reconstruct(eta, preview)
        u = self.f_mu_inv(eta, preview, k)
        return list(self.model.f(x, u, k)[self.mu :])


def build_inverse(model: NormalFormModel) -> InverseSystem:
    return InverseSystem(model)


def equilibrium_preview(inv: InverseSystem, tol: float = 1e-10, maxiter: int = 100) -> np.ndarray:
    """Preview ``y_dagger`` with ``f_eta(0, y_dagger, 0) = 0``.

    Returns zero when that already holds, else runs minimum-norm Gauss-Newton
    from zero.
    """
    p = np.zeros(inv.mu + 1)
    zeros = [0.0] * inv.n_eta
    if inv.n_eta == 0:
        return p

    def resid(pp):
        return inv.f_eta(zeros, list(pp), 0)

    r = np.asarray(resid(p), dtype=float)
    for _ in range(maxiter):
        if np.max(np.abs(r)) <= tol:
            return p
        J = ad.jacobian(resid, p, width=None)
        step = np.linalg.pinv(J) @ r
        if not np.any(step):
            break
        p = p - step
        r = np.asarray(resid(p), dtype=float)
    if np.max(np.abs(r)) <= tol:
        return p
    raise InversionError("no equilibrium preview found: f_eta(0, y, 0) = 0 has no solution near 0")


# ---------------------------------------------------------------------------
# decoupling
# ---------------------------------------------------------------------------
@dataclass
class DecoupledInverse:
    A: np.ndarray
    y_dagger: np.ndarray
    V: np.ndarray
    V_inv: np.ndarray
    v: int
    A_s: np.ndarray
    A_u: np.ndarray
    eigenvalues: np.ndarray
    cond_V: float

    @property
    def n_eta(self) -> int:
        return self.A.shape[0]

    @property
    def A_tilde(self) -> np.ndarray:
        return sla.block_diag(self.A_s, self.A_u) if self.n_eta else np.zeros((0, 0))


def decouple(inv: InverseSystem, y_dagger: np.ndarray | None = None) -> DecoupledInverse:
    """Similarity transform separating stable and unstable linear inverse modes.

    Real Schur form sorted with inside-unit-circle eigenvalues first, then a
    Sylvester solve removes the coupling block.
    """
    if y_dagger is None:
        y_dagger = equilibrium_preview(inv)
    n = inv.n_eta
    if n == 0:
        e = np.zeros((0, 0))
        return DecoupledInverse(e, y_dagger, e, e, 0, e, e, np.zeros(0), 1.0)
    yd = list(y_dagger)
    A = ad.jacobian(lambda eta: inv.f_eta(eta, yd, 0), np.zeros(n), width=None)
    eig = np.linalg.eigvals(A)
    gap = np.min(np.abs(np.abs(eig) - 1.0))
    if gap <= HYPERBOLIC_MARGIN:
        raise HyperbolicityError(
            f"inverse dynamics not hyperbolic: eigenvalue modulus within {gap:.2e} of the unit circle"
        )
    T, Z, v = sla.schur(A, output="real", sort="iuc")
    V = Z.copy()
    if 0 < v < n:
        X = sla.solve_sylvester(T[:v, :v], -T[v:, v:], -T[:v, v:])
        W = np.eye(n)
        W[:v, v:] = X
        V = Z @ W
    cond_V = float(np.linalg.cond(V))
    if cond_V > MAX_COND_V:
        raise InversionError(f"similarity transform ill-conditioned (cond {cond_V:.2e})")
    V_inv = np.linalg.inv(V)
    At = V_inv @ A @ V
    return DecoupledInverse(
        A=A,
        y_dagger=np.asarray(y_dagger, dtype=float),
        V=V,
        V_inv=V_inv,
        v=int(v),
        A_s=At[:v, :v].copy(),
        A_u=At[v:, v:].copy(),
        eigenvalues=eig,
        cond_V=cond_V,
    )


# ---------------------------------------------------------------------------
# phi kernel
# ---------------------------------------------------------------------------
class PhiKernel:
    """Two-sided kernel: ``A_s^k`` for ``k > 0``, ``I_v`` at 0, ``-A_u^k`` for ``k < 0``."""

    def __init__(self, A_s: np.ndarray, A_u: np.ndarray):
        self.A_s = np.atleast_2d(np.asarray(A_s, dtype=float)) if np.size(A_s) else np.zeros((0, 0))
        self.A_u = np.atleast_2d(np.asarray(A_u, dtype=float)) if np.size(A_u) else np.zeros((0, 0))
        self.v = self.A_s.shape[0]
        self.n = self.v + self.A_u.shape[0]
        self._pos = [np.eye(self.v)]
        self._neg = [np.eye(self.A_u.shape[0])]
        self._lu = sla.lu_factor(self.A_u) if self.A_u.size else None

    @classmethod
    def from_decoupled(cls, dec: DecoupledInverse) -> "PhiKernel":
        return cls(dec.A_s, dec.A_u)

    def stable_power(self, k: int) -> np.ndarray:
        while len(self._pos) <= k:
            self._pos.append(self.A_s @ self._pos[-1])
        return self._pos[k]

    def unstable_inverse_power(self, k: int) -> np.ndarray:
        """``A_u^(-k)`` for ``k >= 0`` by repeated LU solves."""
        while len(self._neg) <= k:
            self._neg.append(sla.lu_solve(self._lu, self._neg[-1]))
        return self._neg[k]

    def __call__(self, k: int) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        v = self.v
        if k > 0:
            out[:v, :v] = self.stable_power(k)
        elif k == 0:
            out[:v, :v] = np.eye(v)
        elif self.n > v:
            out[v:, v:] = -self.unstable_inverse_power(-k)
        return out


def phi(kernel: PhiKernel, k: int) -> np.ndarray:
    return kernel(k)


def phi_norm(kernel: PhiKernel, tol: float = 1e-12, max_terms: int = 1_000_000) -> float:
    """``sum_k ||phi(k)||_inf``, each tail truncated once a term drops below ``tol``."""
    total = 0.0
    for k in range(max_terms):
        term = np.abs(kernel(k)).sum(axis=1).max() if kernel.n else 0.0
        total += term
        if term < tol:
            break
    for k in range(1, max_terms):
        term = np.abs(kernel(-k)).sum(axis=1).max() if kernel.n else 0.0
        total += term
        if term < tol:
            break
    return float(total)


def convolution_matrix(kernel: PhiKernel, n_steps: int) -> np.ndarray:
    """Block matrix mapping ``d(0..n_steps-1)`` to ``eta(1..n_steps-1)``.

    Block ``(k, i)`` (``k = 1..n_steps-1``, ``i = 1..n_steps``) is ``phi(k - i)``.
    """
    n = kernel.n
    offsets = np.arange(1 - n_steps, n_steps - 1)
    blocks = np.stack([kernel(int(o)) for o in offsets]) if n else np.zeros((len(offsets), 0, 0))
    K = np.arange(1, n_steps)[:, None]
    I = np.arange(1, n_steps + 1)[None, :]
    gathered = blocks[(K - I) - offsets[0]]  # (n_steps-1, n_steps, n, n)
    return gathered.transpose(0, 2, 1, 3).reshape((n_steps - 1) * n, n_steps * n)


# ---------------------------------------------------------------------------
# Picard solver
# ---------------------------------------------------------------------------
def picard_initial(model: NormalFormModel, dec: DecoupledInverse) -> np.ndarray:
    """Initial iterate from the zero-feedforward (feedback-only) trajectory.

    Returns ``V^{-1} x[mu:](k)`` for ``k = 0..N-mu``, shape ``(N-mu+1, n_eta)``.
    """
    try:
        _, X = simulate_lifted(model, np.zeros(model.n_lifted))
    except SimulationError as exc:
        raise InversionError(f"feedback-only simulation failed: {exc}") from exc
    eta = X[: model.n_lifted, model.mu :]
    return eta @ dec.V_inv.T


def _previews(y_lifted: Sequence, mu: int) -> list:
    yf = [0.0] * mu + list(y_lifted)
    return [yf[k : k + mu + 1] for k in range(len(y_lifted))]


def picard_iterate(
    dec: DecoupledInverse,
    inv: InverseSystem,
    y_lifted: Sequence,
    eta_prev: Sequence,
    conv: np.ndarray | None = None,
    kernel: PhiKernel | None = None,
) -> list:
    """One finite-horizon Picard pass.

    ``eta_prev`` holds ``eta~(k)`` for ``k = 0..N-mu`` (rows of floats or
    duals). Returns the next iterate in the same layout with ``eta~(0) = 0``.
    """
    M = len(y_lifted)
    n = dec.n_eta
    if n == 0:
        return [[] for _ in range(M)]
    if conv is None:
        conv = convolution_matrix(kernel or PhiKernel.from_decoupled(dec), M)
    previews = _previews(y_lifted, inv.mu)
    At = dec.A_tilde
    d = []
    for i in range(M):
        et = list(eta_prev[i])
        fe = inv.f_eta(_matvec(dec.V, et), previews[i], i)
        ft = _matvec(dec.V_inv, fe)
        lin = _matvec(At, et)
        d.extend(a - b for a, b in zip(ft, lin))
    width = ad.common_width(d)
    if width is None:
        vals = np.asarray(d, dtype=float)
        tans = None
    else:
        vals, tans = ad.pack(d, width)
    nv = conv @ vals
    if not np.all(np.isfinite(nv)):
        bad = int(np.argmax(~np.isfinite(nv)))
        raise InversionError(f"non-finite Picard term at k={bad // n + 1}")
    flat = ad.unpack(nv, None if tans is None else conv @ tans)
    zero = [0.0] * n
    return [zero] + [flat[j * n : (j + 1) * n] for j in range(M - 1)]


class LiftedInverse:
    """Callable ``u = g^{-1}(y)`` built from a synthesized stable inverse."""

    def __init__(self, model: NormalFormModel, dec: DecoupledInverse, inv: InverseSystem, m_final: int = 1):
        if m_final < 1:
            raise ValueError("m_final must be >= 1")
        self.model = model
        self.dec = dec
        self.inv = inv
        self.m_final = int(m_final)
        self.kernel = PhiKernel.from_decoupled(dec)
        self.n = model.n_lifted
        self.eta0 = picard_initial(model, dec)
        self.conv = convolution_matrix(self.kernel, self.n) if dec.n_eta else None

    def eta_trajectory(self, y: Sequence, m_final: int | None = None) -> list:
        eta = self.eta0.tolist()
        for _ in range(self.m_final if m_final is None else m_final):
            eta = picard_iterate(self.dec, self.inv, y, eta, conv=self.conv)
        return eta

    def __call__(self, y: Sequence, m_final: int | None = None) -> list:
        if len(y) != self.n:
            raise ValueError(f"output series has length {len(y)}, expected {self.n}")
        y = list(y)
        eta = self.eta_trajectory(y, m_final)
        previews = _previews(y, self.inv.mu)
        return [
            self.inv.f_mu_inv(_matvec(self.dec.V, eta[k]), previews[k], k) for k in range(self.n)
        ]

    def evaluate(self, y, m_final: int | None = None) -> np.ndarray:
        """Float evaluation returning an array."""
        return np.asarray(self(np.asarray(y, dtype=float).tolist(), m_final), dtype=float)


def lifted_inverse(model, dec, inv, m_final: int = 1) -> LiftedInverse:
    return LiftedInverse(model, dec, inv, m_final)


def jacobian_ginv(ginv: LiftedInverse, y, width: int | None = None) -> np.ndarray:
    """ILILC learning matrix ``d g^{-1} / d y`` at the measured outputs."""
    return ad.jacobian(ginv, y, width=width)


# ---------------------------------------------------------------------------
# LTI helper and full synthesis
# ---------------------------------------------------------------------------
def lti_inverse_state_matrix(model: LtiModel) -> tuple[np.ndarray, float]:
    """``A - B (C A^(mu-1) B)^{-1} C A^mu`` and its spectral radius."""
    A, B, C, mu = model.A, model.B, model.C, model.mu
    Amu1 = np.linalg.matrix_power(A, mu - 1)
    lead = float(C @ Amu1 @ B)
    if abs(lead) < 1e-14:
        raise InversionError("leading Markov parameter C A^(mu-1) B is zero")
    Ainv = A - np.outer(B, C @ Amu1 @ A) / lead
    return Ainv, float(np.max(np.abs(np.linalg.eigvals(Ainv))))


@dataclass
class Synthesis:
    """Artifacts of the offline synthesis, with per-step wall times."""

    inverse: InverseSystem
    decoupled: DecoupledInverse
    ginv: LiftedInverse
    phi_norm: float
    timings: dict = field(default_factory=dict)


def synthesize(model: NormalFormModel, m_final: int = 1) -> Synthesis:
    """Build inverse, decouple, and set up the lifted stable inverse.

    ``timings`` holds wall seconds per step: inverse model, linearization and
    decoupling, kernel norm, Picard setup, one learning-matrix evaluation at
    the reference.
    """

    timings = {}
    t0 = time.perf_counter()
    inv = build_inverse(model)
    timings["inverse_model"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    dec = decouple(inv)
    timings["linearize_and_decouple"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    kernel = PhiKernel.from_decoupled(dec)
    norm = phi_norm(kernel)
    timings["kernel_norm"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    ginv = lifted_inverse(model, dec, inv, m_final)
    timings["picard_setup"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    jacobian_ginv(ginv, model.reference.lifted(model.mu))
    timings["learning_matrix_eval"] = time.perf_counter() - t0
    return Synthesis(inv, dec, ginv, norm, timings)


def diagnostic_report(syn: Synthesis) -> dict:
    dec = syn.decoupled
    return {
        "eigenvalues_real": np.real(dec.eigenvalues).tolist(),
        "eigenvalues_imag": np.imag(dec.eigenvalues).tolist(),
        "eigenvalue_moduli": np.abs(dec.eigenvalues).tolist(),
        "n_eta": dec.n_eta,
        "v": dec.v,
        "n_unstable": dec.n_eta - dec.v,
        "cond_V": dec.cond_V,
        "phi_norm_inf1": syn.phi_norm,
        "y_dagger": dec.y_dagger.tolist(),
        "picard_passes": syn.ginv.m_final,
        "timings_s": dict(syn.timings),
    }
