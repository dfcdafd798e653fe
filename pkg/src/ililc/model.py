"""Discrete-time normal-form models: closed-loop cart-pendulum, LTI systems, references.

State maps are written with the scalar functions of :mod:`ililc.autodiff`
so the same code runs on floats and on dual numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import null_space

from . import autodiff as ad

__all__ = [
    "ModelError",
    "PendulumGeometryError",
    "RelativeDegreeError",
    "ReferenceProfile",
    "make_reference",
    "CartPendulumParams",
    "cart_pendulum_accels",
    "cart_pendulum_step",
    "NormalFormModel",
    "CartPendulumModel",
    "LtiModel",
    "LtiNormalFormModel",
    "lti_step",
    "appendix_lti",
    "relative_degree_check",
]


class ModelError(ValueError):
    """Invalid model construction or evaluation."""


class PendulumGeometryError(ModelError):
    """The coordinate change ``arcsin((y - z) / 2H)`` left its domain."""

    def __init__(self, k: int, ratio: float):
        super().__init__(f"pendulum geometry violated at time step {k}: |(y-z)/2H| = {abs(ratio):.3g} > 1")
        self.k = k


class RelativeDegreeError(ModelError):
    pass


# ---------------------------------------------------------------------------
# reference
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ReferenceProfile:
    """Trial-invariant reference ``r(k)``, ``k = 0..N``, with flat zero ends."""

    r: np.ndarray
    lead: int
    tail: int
    Ts: float

    @property
    def N(self) -> int:
        return len(self.r) - 1

    def __call__(self, k: int) -> float:
        if 0 <= k < len(self.r):
            return float(self.r[k])
        return 0.0

    def lifted(self, mu: int) -> np.ndarray:
        """``r(mu..N)``, aligned with lifted output series."""
        return self.r[mu:].copy()


def _smoothstep7(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def make_reference(
    N: int = 250,
    Ts: float = 0.016,
    lead: int = 40,
    tail: int = 40,
    amplitude: float = 0.2,
    shape: str = "smoothstep",
    hold_fraction: float = 0.4,
) -> ReferenceProfile:
    """Smooth rise-hold-return pulse with ``lead``/``tail`` samples at exactly zero.

    The active window ``[lead, N - tail]`` is split into a rise, a plateau of
    relative length ``hold_fraction`` and a symmetric return, each ramp a
    7th-order smoothstep.
    """
    if shape != "smoothstep":
        raise ModelError(f"unknown reference shape {shape!r}")
    if N < 1 or lead < 0 or tail < 0 or lead + tail >= N:
        raise ModelError(f"invalid sample counts N={N}, lead={lead}, tail={tail}")
    if not math.isfinite(amplitude):
        raise ModelError("amplitude must be finite")
    if not 0.0 <= hold_fraction < 1.0:
        raise ModelError("hold_fraction must lie in [0, 1)")
    k = np.arange(N + 1, dtype=float)
    span = float(N - tail - lead)
    s = (k - lead) / span
    ramp = (1.0 - hold_fraction) / 2.0
    up = _smoothstep7(s / ramp)
    down = _smoothstep7((1.0 - s) / ramp)
    r = amplitude * np.minimum(up, down)
    r[(k < lead) | (k > N - tail)] = 0.0
    return ReferenceProfile(r=r, lead=lead, tail=tail, Ts=Ts)


# ---------------------------------------------------------------------------
# cart-pendulum
# ---------------------------------------------------------------------------
PARAM_NAMES = ("M_c", "M_p", "H", "d_c", "d_p", "kappa0", "kappa1", "kappa2", "kappa3", "kappa4")


@dataclass(frozen=True)
class CartPendulumParams:
    """Physical parameters, feedback gains and noise levels (SI units)."""

    M_c: float = 0.5
    M_p: float = 0.25
    H: float = 0.225
    d_c: float = 10.0
    d_p: float = 0.01
    kappa: tuple = (630.0, -5900.0, 5900.0, -3700.0, 4300.0)
    g_grav: float = 9.8
    sigma_c: float = 3.15e-2
    sigma_y: float = 5e-5

    def __post_init__(self):
        for name in ("M_c", "M_p", "H", "d_c", "d_p"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be strictly positive")
        if len(self.kappa) != 5:
            raise ModelError("kappa needs five gains")
        object.__setattr__(self, "kappa", tuple(float(k) for k in self.kappa))

    def as_vector(self) -> np.ndarray:
        """The ten perturbable parameters in the order of ``PARAM_NAMES``."""
        return np.array([self.M_c, self.M_p, self.H, self.d_c, self.d_p, *self.kappa])

    @classmethod
    def from_vector(cls, theta: Sequence[float], **kw) -> "CartPendulumParams":
        theta = [float(t) for t in theta]
        return cls(*theta[:5], kappa=tuple(theta[5:10]), **kw)

    def noiseless(self) -> "CartPendulumParams":
        return replace(self, sigma_c=0.0, sigma_y=0.0)


def cart_pendulum_accels(psi, psidot, zdot, c, params: CartPendulumParams):
    """Continuous-time angular and cart accelerations for applied force ``c``."""
    for v in (psi, psidot, zdot, c):
        if not math.isfinite(ad.value_of(v)):
            raise ModelError("non-finite input to cart_pendulum_accels")
    Mc, Mp, H, dc, dp, g = params.M_c, params.M_p, params.H, params.d_c, params.d_p, params.g_grav
    s = ad.sin(psi)
    co = ad.cos(psi)
    den = 4.0 * (Mc + Mp) - 3.0 * Mp * co * co
    psidd = (
        -3.0
        * (
            H * Mp * c * co
            + dp * (Mc + Mp) * psidot
            + H * H * Mp * Mp * s * co * psidot * psidot
            + g * H * (Mc * Mp + Mp * Mp) * s
            - dc * H * Mp * co * zdot
        )
        / (H * H * Mp * den)
    )
    zdd = (
        4.0 * H * c
        + 3.0 * dp * co * psidot
        + 4.0 * H * H * Mp * s * psidot * psidot
        + 3.0 * g * H * Mp * s * co
        - 4.0 * dc * H * zdot
    ) / (H * den)
    return psidd, zdd


def cart_pendulum_step(x, u, k: int, r: ReferenceProfile, params: CartPendulumParams, omega_c=0.0, Ts=None):
    """One forward-Euler step of the closed-loop cart-pendulum in normal form.

    ``x = [y(k), y(k+1), z(k), z(k+1)]`` with ``y`` the pendulum tip and ``z``
    the cart position. Returns ``[y(k+1), y(k+2), z(k+1), z(k+2)]``.
    """
    Ts = r.Ts if Ts is None else Ts
    y0, y1, z0, z1 = x
    k0, k1, k2, k3, k4 = params.kappa
    H = params.H
    c = k0 * (r(k) + u) - (k1 * y0 + k2 * y1 + k3 * z0 + k4 * z1) + omega_c
    for a, b in ((y0, z0), (y1, z1)):
        ratio = ad.value_of(a - b) / (2.0 * H)
        if not abs(ratio) <= 1.0:
            raise PendulumGeometryError(k, ratio)
    s = (y0 - z0) / (2.0 * H)
    psi = ad.arcsin(s)
    ydot = (y1 - y0) / Ts
    zdot = (z1 - z0) / Ts
    psidot = (ydot - zdot) / (2.0 * H * ad.sqrt(1.0 - s * s))
    psidd, zdd = cart_pendulum_accels(psi, psidot, zdot, c, params)
    ydd = zdd + 2.0 * H * (ad.cos(psi) * psidd - ad.sin(psi) * psidot * psidot)
    Ts2 = Ts * Ts
    return [y1, ydd * Ts2 + 2.0 * y1 - y0, z1, zdd * Ts2 + 2.0 * z1 - z0]


class NormalFormModel:
    """SISO discrete-time model in normal form with output ``h(x) = x[0]``.

    Subclasses implement :meth:`f`. ``w`` is a scalar process disturbance
    whose meaning is model specific; the models here add it to their input
    channel (force for the cart-pendulum, ``u`` for LTI models).
    """

    n_x: int
    mu: int
    reference: ReferenceProfile
    sigma_process: float = 0.0
    sigma_meas: float = 0.0

    @property
    def N(self) -> int:
        return self.reference.N

    @property
    def Ts(self) -> float:
        return self.reference.Ts

    @property
    def n_lifted(self) -> int:
        return self.N - self.mu + 1

    def f(self, x, u, k: int, w=0.0) -> list:
        raise NotImplementedError

    def h(self, x):
        return x[0]

    def x0(self) -> list:
        return [0.0] * self.n_x

    def random_state(self, rng: np.random.Generator) -> list:
        return rng.normal(scale=0.1, size=self.n_x).tolist()


class CartPendulumModel(NormalFormModel):
    """Closed-loop cart-pendulum; the ILC input shifts the feedback reference."""

    n_x = 4
    mu = 2

    def __init__(self, params: CartPendulumParams | None = None, reference: ReferenceProfile | None = None):
        self.params = params if params is not None else CartPendulumParams()
        self.reference = reference if reference is not None else make_reference()
        self.sigma_process = self.params.sigma_c
        self.sigma_meas = self.params.sigma_y

    def f(self, x, u, k, w=0.0):
        return cart_pendulum_step(x, u, k, self.reference, self.params, omega_c=w)

    def random_state(self, rng):
        # keep |y - z| well inside the pendulum length
        return rng.uniform(-0.05, 0.05, size=4).tolist()

    def with_params(self, params: CartPendulumParams) -> "CartPendulumModel":
        return CartPendulumModel(params, self.reference)


# ---------------------------------------------------------------------------
# LTI
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LtiModel:
    """``x(k+1) = A x + B u``, ``y = C x`` (SISO)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    mu: int = field(default=0)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(-1)
        C = np.asarray(self.C, dtype=float).reshape(-1)
        if A.shape != (B.size, B.size) or C.size != B.size:
            raise ModelError("inconsistent LTI dimensions")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        if self.mu == 0:
            object.__setattr__(self, "mu", _markov_relative_degree(A, B, C))

    @property
    def n_x(self) -> int:
        return self.B.size

    def markov(self, count: int) -> np.ndarray:
        """Markov parameters ``C A^j B`` for ``j = 0..count-1``."""
        out = np.empty(count)
        v = self.B.copy()
        for j in range(count):
            out[j] = self.C @ v
            v = self.A @ v
        return out

    def normal_form(self, reference: ReferenceProfile) -> "LtiNormalFormModel":
        return LtiNormalFormModel(self, reference)


def _markov_relative_degree(A, B, C) -> int:
    n = B.size
    v = B.copy()
    for j in range(n):
        m = C @ v
        if abs(m) > 1e-12 * max(1.0, np.abs(C).max() * np.abs(v).max()):
            return j + 1
        v = A @ v
    raise RelativeDegreeError("all Markov parameters vanish: input has no influence on the output")


def lti_step(model: LtiModel, x, u, k: int = 0):
    """``A x + B u``."""
    return model.A @ np.asarray(x, dtype=float) + model.B * u


def appendix_lti() -> LtiModel:
    """Stable, relative-degree-one LTI plant whose inverse is unstable."""
    A = np.array([[-0.3, -0.79, 0.53], [0.0, 0.5, 1.0], [0.0, -0.36, 0.5]])
    B = np.array([0.0, 0.0, 1.34])
    C = np.array([0.7, 1.1, -0.74])
    return LtiModel(A, B, C)


class LtiNormalFormModel(NormalFormModel):
    """An :class:`LtiModel` expressed in normal-form coordinates.

    The transform stacks ``C, CA, ..., CA^(mu-1)`` on top of an orthonormal
    basis of their orthogonal complement, so ``x_nf = T x``.
    """

    def __init__(self, lti: LtiModel, reference: ReferenceProfile, sigma_process=0.0, sigma_meas=0.0):
        self.lti = lti
        self.reference = reference
        self.n_x = lti.n_x
        self.mu = lti.mu
        rows = [lti.C]
        for _ in range(lti.mu - 1):
            rows.append(rows[-1] @ lti.A)
        top = np.vstack(rows)
        comp = null_space(top).T
        T = np.vstack([top, comp]) if comp.size else top
        self.T = T
        self.T_inv = np.linalg.inv(T)
        self.A = T @ lti.A @ self.T_inv
        self.B = T @ lti.B
        self.C = np.zeros(self.n_x)
        self.C[0] = 1.0
        self.sigma_process = sigma_process
        self.sigma_meas = sigma_meas
        self._A_rows = self.A.tolist()
        self._B = self.B.tolist()

    def f(self, x, u, k, w=0.0):
        uw = u + w if w else u
        out = []
        for row, b in zip(self._A_rows, self._B):
            acc = b * uw
            for a, xi in zip(row, x):
                if a != 0.0:
                    acc = acc + a * xi
            out.append(acc)
        return out


# ---------------------------------------------------------------------------
# structure checks
# ---------------------------------------------------------------------------
def relative_degree_check(model, n_samples: int = 8, seed: int = 0) -> int:
    """Confirm the declared relative degree; returns ``mu`` or raises.

    For an :class:`LtiModel` the Markov parameters are inspected. For a
    :class:`NormalFormModel` the shift structure ``f^i = x^(i+1)``, ``i < mu``,
    is checked on random states and ``f^mu`` must depend on ``u``.
    """
    if isinstance(model, LtiModel):
        mu = _markov_relative_degree(model.A, model.B, model.C)
        if mu != model.mu:
            raise RelativeDegreeError(f"declared mu={model.mu} but Markov parameters give {mu}")
        return mu
    rng = np.random.default_rng(seed)
    mu = model.mu
    for _ in range(n_samples):
        x = model.random_state(rng)
        u = float(rng.normal(scale=0.01))
        k = int(rng.integers(0, max(model.N, 1)))
        nxt = model.f(x, u, k)
        for i in range(mu - 1):
            if abs(ad.value_of(nxt[i]) - x[i + 1]) > 1e-12 * max(1.0, abs(x[i + 1])):
                raise RelativeDegreeError(f"component {i + 1} of f is not the shift x^{i + 2}")
        du = ad.DualScalar(u, np.ones(1))
        d = model.f(x, du, k)[mu - 1]
        if not isinstance(d, ad.DualScalar) or abs(d.tangents[0]) < 1e-12:
            raise RelativeDegreeError(f"component {mu} of f does not depend on the input")
    return mu
