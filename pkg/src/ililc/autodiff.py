"""Forward-mode automatic differentiation with multi-seed dual numbers.

A :class:`DualScalar` carries a value and a row of ``w`` tangents, so one
forward sweep of a scalar program propagates ``w`` directional derivatives at
once. Model code is written against the module-level functions (:func:`sin`,
:func:`sqrt`, ...) which accept either plain floats or duals.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DualScalar",
    "NonFiniteError",
    "sin",
    "cos",
    "arcsin",
    "sqrt",
    "sec",
    "power",
    "value_of",
    "is_dual",
    "jacobian",
    "finite_difference_jacobian",
    "pack",
    "unpack",
]

ARCSIN_EPS = 1e-12
DEFAULT_WIDTH = 16


class NonFiniteError(ArithmeticError):
    """Raised when a differentiated map produces a non-finite value or tangent."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class DualScalar:
    """A real number together with ``w`` tangent components."""

    __slots__ = ("value", "tangents")

    def __init__(self, value: float, tangents: np.ndarray):
        self.value = float(value)
        self.tangents = tangents

    @property
    def width(self) -> int:
        return self.tangents.shape[0]

    def __repr__(self) -> str:
        return f"DualScalar({self.value!r}, {self.tangents!r})"

    def __float__(self) -> float:
        return self.value

    # arithmetic -------------------------------------------------------------
    def __neg__(self):
        return DualScalar(-self.value, -self.tangents)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value + other.value, self.tangents + other.tangents)
        return DualScalar(self.value + other, self.tangents)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value - other.value, self.tangents - other.tangents)
        return DualScalar(self.value - other, self.tangents)

    def __rsub__(self, other):
        return DualScalar(other - self.value, -self.tangents)

    def __mul__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(
                self.value * other.value,
                other.value * self.tangents + self.value * other.tangents,
            )
        return DualScalar(self.value * other, self.tangents * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualScalar):
            q = self.value / other.value
            return DualScalar(q, (self.tangents - q * other.tangents) / other.value)
        return DualScalar(self.value / other, self.tangents / other)

    def __rtruediv__(self, other):
        q = other / self.value
        return DualScalar(q, (-q / self.value) * self.tangents)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __rpow__(self, base):
        return power(base, self)

    # comparisons act on the value part only
    def __lt__(self, other):
        return self.value < value_of(other)

    def __le__(self, other):
        return self.value <= value_of(other)

    def __gt__(self, other):
        return self.value > value_of(other)

    def __ge__(self, other):
        return self.value >= value_of(other)

    def __abs__(self):
        return -self if self.value < 0 else self


def is_dual(x) -> bool:
    return isinstance(x, DualScalar)


def value_of(x) -> float:
    return x.value if isinstance(x, DualScalar) else float(x)


def sin(x):
    if isinstance(x, DualScalar):
        return DualScalar(math.sin(x.value), math.cos(x.value) * x.tangents)
    return math.sin(x)


def cos(x):
    if isinstance(x, DualScalar):
        return DualScalar(math.cos(x.value), -math.sin(x.value) * x.tangents)
    return math.cos(x)


def sec(x):
    if isinstance(x, DualScalar):
        c = math.cos(x.value)
        s = 1.0 / c
        return DualScalar(s, (s * math.tan(x.value)) * x.tangents)
    return 1.0 / math.cos(x)


def sqrt(x):
    if isinstance(x, DualScalar):
        r = math.sqrt(x.value)
        return DualScalar(r, x.tangents / (2.0 * r))
    return math.sqrt(x)


def arcsin(x):
    """Inverse sine with the argument clamped to ``[-1 + eps, 1 - eps]``.

    Arguments outside ``[-1, 1]`` raise ``ValueError``; the clamp only guards
    the derivative singularity at the boundary.
    """
    v = value_of(x)
    if not -1.0 <= v <= 1.0:
        raise ValueError(f"arcsin argument {v!r} outside [-1, 1]")
    vc = min(max(v, -1.0 + ARCSIN_EPS), 1.0 - ARCSIN_EPS)
    if isinstance(x, DualScalar):
        return DualScalar(math.asin(vc), x.tangents / math.sqrt(1.0 - vc * vc))
    return math.asin(vc)


def power(base, exponent):
    """``base ** exponent`` for dual or real base and/or exponent."""
    if isinstance(exponent, DualScalar):
        b = value_of(base)
        p = b ** exponent.value
        t = (p * math.log(b)) * exponent.tangents
        if isinstance(base, DualScalar):
            t = t + (exponent.value * b ** (exponent.value - 1.0)) * base.tangents
        return DualScalar(p, t)
    if isinstance(base, DualScalar):
        e = float(exponent)
        if e == 2.0:
            return DualScalar(base.value * base.value, (2.0 * base.value) * base.tangents)
        return DualScalar(base.value**e, (e * base.value ** (e - 1.0)) * base.tangents)
    return base**exponent


# packing helpers ------------------------------------------------------------
def pack(xs: Sequence, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a sequence of floats/duals into a value vector and an ``(n, w)`` tangent matrix."""
    n = len(xs)
    values = np.empty(n)
    tangents = np.zeros((n, width))
    for i, x in enumerate(xs):
        if isinstance(x, DualScalar):
            values[i] = x.value
            tangents[i] = x.tangents
        else:
            values[i] = x
    return values, tangents


def unpack(values: np.ndarray, tangents: np.ndarray | None) -> list:
    """Inverse of :func:`pack`; with ``tangents=None`` returns plain floats."""
    if tangents is None:
        return [float(v) for v in values]
    return [DualScalar(v, t) for v, t in zip(values.tolist(), tangents)]


def common_width(xs: Sequence) -> int | None:
    """Tangent width shared by the duals in ``xs``, or None if there are none."""
    width = None
    for x in xs:
        if isinstance(x, DualScalar):
            if width is None:
                width = x.tangents.shape[0]
            elif x.tangents.shape[0] != width:
                raise ValueError("mixed tangent widths in one sweep")
    return width


# Jacobians -----------------------------------------------------------------
def jacobian(
    fn: Callable[[list], Sequence],
    point: Sequence[float],
    width: int | None = DEFAULT_WIDTH,
) -> np.ndarray:
    """Dense Jacobian of ``fn`` at ``point`` by batched forward sweeps.

    ``fn`` takes a list of scalars and returns a sequence of scalars. Columns
    are seeded ``width`` at a time, so ``ceil(n / width)`` sweeps are run;
    ``width=None`` seeds every column in a single sweep.
    """
    point = np.asarray(point, dtype=float).ravel()
    n = point.size
    if n < 1:
        raise ValueError("jacobian needs at least one input")
    w = n if width is None else int(width)
    if w < 1:
        raise ValueError("seed width must be >= 1")
    J = None
    for start in range(0, n, w):
        stop = min(start + w, n)
        seeds = np.zeros((n, w))
        seeds[np.arange(start, stop), np.arange(stop - start)] = 1.0
        xs = [DualScalar(v, seeds[i]) for i, v in enumerate(point.tolist())]
        # non-finite results are detected below and reported with their index
        with np.errstate(over="ignore", invalid="ignore"):
            out = fn(xs)
        vals, tans = pack(out, w)
        if J is None:
            J = np.empty((len(out), n))
        bad = ~(np.isfinite(vals) & np.all(np.isfinite(tans), axis=1))
        if bad.any():
            idx = int(np.argmax(bad))
            raise NonFiniteError(f"non-finite result at output index {idx}", index=idx)
        J[:, start:stop] = tans[:, : stop - start]
    return J


def finite_difference_jacobian(
    fn: Callable[[list], Sequence], point: Sequence[float], step: float = 1e-6
) -> np.ndarray:
    """Central-difference Jacobian; a test oracle for :func:`jacobian`."""
    if not step > 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=float).ravel()
    f0 = np.asarray(fn(point.tolist()), dtype=float)
    J = np.empty((f0.size, point.size))
    for j in range(point.size):
        xp = point.copy()
        xm = point.copy()
        xp[j] += step
        xm[j] -= step
        fp = np.asarray(fn(xp.tolist()), dtype=float)
        fm = np.asarray(fn(xm.tolist()), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteError(f"non-finite evaluation perturbing input {j}", index=j)
        J[:, j] = (fp - fm) / (2.0 * step)
    return J
