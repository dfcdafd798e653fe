"""Lifted (whole-trial) representation ``y = g(u)`` of a normal-form model."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .model import ModelError, NormalFormModel

__all__ = [
    "SimulationError",
    "simulate_lifted",
    "lifted_output",
    "jacobian_g",
    "linearized_lifted_jacobian",
    "condition_number",
]


class SimulationError(ModelError):
    """A forward simulation failed; ``k`` is the offending time step."""

    def __init__(self, message: str, k: int):
        super().__init__(message)
        self.k = k


def _full_input(model: NormalFormModel, u: Sequence) -> list:
    n = model.n_lifted
    if len(u) != n:
        raise ValueError(f"input series has length {len(u)}, expected N - mu + 1 = {n}")
    # inputs after N - mu cannot reach the outputs y(mu..N)
    return list(u) + [0.0] * (model.mu - 1)


def simulate_lifted(model: NormalFormModel, u, noise=None):
    """Run one trial from ``x(0) = 0``.

    Parameters
    ----------
    model
        Normal-form model; its reference defines ``N``.
    u
        Input series ``u(0..N-mu)``.
    noise
        Optional per-sample process disturbance ``w(k)``, ``k = 0..N-1``.

    Returns
    -------
    y : ndarray
        Outputs ``y(mu..N)``.
    states : ndarray
        State trajectory, shape ``(N + 1, n_x)``.
    """
    N = model.N
    uf = _full_input(model, [float(v) for v in u])
    if noise is not None and len(noise) < N:
        raise ValueError("process noise must supply N samples")
    states = np.empty((N + 1, model.n_x))
    x = model.x0()
    states[0] = x
    for k in range(N):
        w = 0.0 if noise is None else float(noise[k])
        try:
            x = model.f(x, uf[k], k, w)
        except (ModelError, ValueError, OverflowError, ZeroDivisionError) as exc:
            if isinstance(exc, ModelError) and hasattr(exc, "k"):
                raise SimulationError(str(exc), exc.k) from exc
            raise SimulationError(f"model step failed at k={k}: {exc}", k) from exc
        if not all(math.isfinite(v) for v in x):
            raise SimulationError(f"non-finite state at k={k + 1}", k + 1)
        states[k + 1] = x
    return states[model.mu :, 0].copy(), states


def lifted_output(model: NormalFormModel, u: list) -> list:
    """``g(u)`` on arbitrary scalars (floats or duals); used for differentiation."""
    uf = _full_input(model, u)
    x = model.x0()
    ys = []
    for k in range(model.N):
        x = model.f(x, uf[k], k)
        if k + 1 >= model.mu:
            ys.append(model.h(x))
    return ys


def jacobian_g(model: NormalFormModel, u, width: int | None = None) -> np.ndarray:
    """``dg/du`` at ``u`` by forward-mode AD (single sweep by default)."""
    return ad.jacobian(lambda us: lifted_output(model, us), u, width=width)


def linearized_lifted_jacobian(model: NormalFormModel, u) -> np.ndarray:
    """Lifted matrix of the model linearized along the trajectory of ``u``.

    Builds ``A_k = df/dx``, ``B_k = df/du`` at every step and stacks the
    impulse responses of the resulting time-varying linear system. Used as an
    independent check of :func:`jacobian_g`.
    """
    N, mu, nx = model.N, model.mu, model.n_x
    uf = _full_input(model, [float(v) for v in u])
    x = model.x0()
    As, Bs = [], []
    for k in range(N):
        J = ad.jacobian(lambda z, k=k: model.f(z[:nx], z[nx], k), list(x) + [uf[k]], width=None)
        As.append(J[:, :nx])
        Bs.append(J[:, nx])
        x = model.f(x, uf[k], k)
    n = model.n_lifted
    G = np.zeros((n, n))
    for j in range(n):
        dx = Bs[j].copy()  # state perturbation at time j + 1
        for k in range(j + 1, N + 1):
            if k >= mu:
                G[k - mu, j] = dx[0]
            if k < N:
                dx = As[k] @ dx
    return G


def condition_number(J: np.ndarray) -> float:
    """``sigma_max / sigma_min``; ``inf`` when the smallest singular value underflows."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("condition number needs a square matrix")
    s = np.linalg.svd(J, compute_uv=False)
    if s[-1] <= np.finfo(float).tiny or not np.isfinite(s[0]):
        return math.inf
    return float(s[0] / s[-1])
