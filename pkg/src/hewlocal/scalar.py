"""Scalar envelope kernels.

Every global rate in the package is obtained from a handful of scalar
recursions: the contraction ``T_a(u) = u / (1 + a u)``, its telescoped
branch form, the quadratic-linear and linear recursions with a fixed-point
floor, a cumulative Gronwall bound, and three closed-form generator flows
(quadratic, power-law, exponential) together with their slope moduli,
conjugacy coordinates and the noisy master envelope.

All routines accept numpy arrays and broadcast; scalar inputs return Python
floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import DomainError, PreconditionError

# Feasibility inequalities evaluated at a floating-point root are allowed this
# much relative slack; anything larger is reported as a violation.
FEASIBILITY_RTOL = 1e-12


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _check_nonneg(**arrays) -> None:
    for name, value in arrays.items():
        arr = np.asarray(value, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr < 0):
            raise DomainError(f"{name} must be nonnegative, got {value!r}")


def t_a_apply(a, u):
    """Return ``T_a(u) = u / (1 + a u)``."""
    _check_nonneg(a=a, u=u)
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    return _out(u / (1.0 + a * u))


def telescope_envelope(z0: float, steps: Sequence[tuple[float, float]]) -> float:
    """Upper bound ``T_{sum a}(z0) + sum b`` for ``z_{l+1} <= T_{a_l}(z_l) + b_l``."""
    _check_nonneg(z0=z0)
    steps = np.asarray(steps, dtype=float).reshape(-1, 2)
    _check_nonneg(steps=steps)
    a_total = float(steps[:, 0].sum())
    b_total = float(steps[:, 1].sum())
    return t_a_apply(a_total, z0) + b_total


@dataclass(frozen=True)
class QuadLinParams:
    """Coefficients of ``x_{t+1} <= x_t - a x_t^2 + beta x_t + delta`` and a floor ``m``."""

    a: float
    beta: float
    delta: float
    m: float

    def __post_init__(self):
        if np.any(np.asarray(self.a) <= 0):
            raise DomainError(f"a must be positive, got {self.a!r}")
        _check_nonneg(beta=self.beta, delta=self.delta, m=self.m)

    @classmethod
    def with_root(cls, a, beta, delta) -> "QuadLinParams":
        """Use the positive root of ``a m^2 - beta m - delta = 0`` as the floor."""
        a = np.asarray(a, dtype=float)
        beta = np.asarray(beta, dtype=float)
        delta = np.asarray(delta, dtype=float)
        # hypot avoids underflow of 4*a*delta for tiny noise levels
        m = (beta + np.hypot(beta, 2.0 * np.sqrt(a) * np.sqrt(delta))) / (2.0 * a)
        return cls(_out(a), _out(beta), _out(delta), _out(m))

    @property
    def super_residual(self):
        return _out(self.a * self.m**2 - self.beta * self.m - self.delta)

    @property
    def super_ok(self):
        scale = self.a * self.m**2 + self.beta * self.m + self.delta
        return np.asarray(self.super_residual >= -FEASIBILITY_RTOL * scale - np.finfo(float).tiny)

    @property
    def safe_ok(self):
        lhs = 2.0 * self.a * self.m
        rhs = 1.0 + self.beta
        return np.asarray(lhs <= rhs * (1.0 + FEASIBILITY_RTOL))


def quadlin_envelope(params: QuadLinParams, x0, T):
    """Closed-form bound ``m + 1 / ((x0 - m)_+^{-1} + a T)``.

    When ``x0 <= m`` the reciprocal is infinite and the bound is ``m``.
    """
    if not np.all(params.super_ok):
        raise PreconditionError(
            "a*m^2 - beta*m - delta >= 0 violated "
            f"(residual {params.super_residual!r})"
        )
    if not np.all(params.safe_ok):
        raise PreconditionError("2*a*m <= 1 + beta violated")
    _check_nonneg(x0=x0, T=T)
    x0 = np.asarray(x0, dtype=float)
    T = np.asarray(T, dtype=float)
    m = np.asarray(params.m, dtype=float)
    excess = x0 - m
    above = excess > 0
    y = np.where(above, excess, 0.0)
    # y / (1 + a T y) equals 1 / (1/y + a T) for y > 0 and is exact at T = 0.
    decayed = y / (1.0 + params.a * T * y)
    return _out(np.where(above, m + decayed, m))


def linear_envelope(a, delta, m, x0, T):
    """Bound ``m + (1 - a)^T (x0 - m)_+`` for ``x_{t+1} <= (1 - a) x_t + delta``."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0) or np.any(a > 1):
        raise DomainError(f"a must lie in (0, 1], got {a!r}")
    _check_nonneg(delta=delta, x0=x0, T=T)
    m = np.asarray(m, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(m * a < delta * (1.0 - FEASIBILITY_RTOL)):
        raise PreconditionError(f"m >= delta/a violated (m={m!r}, delta/a={delta / a!r})")
    x0 = np.asarray(x0, dtype=float)
    T = np.asarray(T, dtype=float)
    return _out(m + (1.0 - a) ** T * np.maximum(x0 - m, 0.0))


def cumulative_gronwall(a_seq: Sequence[float], beta: float) -> np.ndarray:
    """Pointwise envelope ``a_l (1 + beta)^l`` for ``x_l <= a_l + beta sum_{s<l} x_s``."""
    a_seq = np.asarray(a_seq, dtype=float)
    _check_nonneg(a_seq=a_seq, beta=beta)
    if np.any(np.diff(a_seq) < 0):
        raise DomainError("a_seq must be nondecreasing")
    return a_seq * (1.0 + beta) ** np.arange(a_seq.size)


# ---------------------------------------------------------------------------
# generator flows


@dataclass(frozen=True)
class Quadratic:
    """Generator ``phi(s) = kappa s^2``; ``kappa = 1`` gives ``T_a``."""

    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")

    def generator(self, s):
        return self.kappa * np.asarray(s, dtype=float) ** 2

    def flow(self, a, s):
        return s / (1.0 + self.kappa * a * s)

    def slope(self, a, m):
        return np.where(m == 0, 1.0, 1.0 / (1.0 + self.kappa * a * m) ** 2)

    def conjugacy(self, s, s_ref):
        return (1.0 / s - 1.0 / s_ref) / self.kappa


@dataclass(frozen=True)
class PowerLaw:
    """Generator ``phi(s) = kappa s^{1+p}``."""

    kappa: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if not (self.kappa > 0 and self.p > 0):
            raise DomainError("kappa and p must be positive")

    def generator(self, s):
        return self.kappa * np.asarray(s, dtype=float) ** (1.0 + self.p)

    def flow(self, a, s):
        # s (1 + kappa p a s^p)^{-1/p}; finite at s = 0.
        return s * (1.0 + self.kappa * self.p * a * s**self.p) ** (-1.0 / self.p)

    def slope(self, a, m):
        val = (1.0 + self.kappa * self.p * a * m**self.p) ** (-1.0 - 1.0 / self.p)
        return np.where(m == 0, 1.0, val)

    def conjugacy(self, s, s_ref):
        return (s ** (-self.p) - s_ref ** (-self.p)) / (self.kappa * self.p)


@dataclass(frozen=True)
class Exponential:
    """Generator ``phi(s) = rho s`` (the PL family)."""

    rho: float = 1.0

    def __post_init__(self):
        if not self.rho > 0:
            raise DomainError("rho must be positive")

    def generator(self, s):
        return self.rho * np.asarray(s, dtype=float)

    def flow(self, a, s):
        return np.exp(-self.rho * a) * s

    def slope(self, a, m):
        return np.exp(-self.rho * a) * np.ones_like(m)

    def conjugacy(self, s, s_ref):
        return np.log(s_ref / s) / self.rho


GeneratorFamily = Union[Quadratic, PowerLaw, Exponential]


def flow_apply(family: GeneratorFamily, a, s):
    """Closed-form flow ``R_a(s)`` of ``v' = -phi(v)``, ``v(0) = s``."""
    _check_nonneg(a=a, s=s)
    return _out(family.flow(np.asarray(a, dtype=float), np.asarray(s, dtype=float)))


def slope_modulus(family: GeneratorFamily, a, m):
    """``sup_{r>0} (R_a(m+r) - R_a(m)) / r``; the derivative of the flow for ``m > 0``."""
    _check_nonneg(a=a, m=m)
    return _out(family.slope(np.asarray(a, dtype=float), np.asarray(m, dtype=float)))


def conjugacy_coordinate(family: GeneratorFamily, s, s_ref):
    """``int_s^{s_ref} d xi / phi(xi)``, satisfying ``chi(R_a(s)) = chi(s) + a``."""
    s = np.asarray(s, dtype=float)
    s_ref = np.asarray(s_ref, dtype=float)
    if np.any(~(s > 0)) or np.any(~(s_ref > 0)):
        raise DomainError("conjugacy coordinate needs s > 0 and s_ref > 0")
    return _out(family.conjugacy(s, s_ref))


class NoisyStep(NamedTuple):
    a: float
    b: float
    d: float
    eps: float


def noisy_drift(family: GeneratorFamily, step: NoisyStep, s):
    """``g_t(s) = R_{a_t}(s) + b_t s + d_t + eps_t``."""
    return flow_apply(family, step.a, s) + step.b * s + step.d + step.eps


def noisy_master_envelope(
    family: GeneratorFamily,
    schedule: Sequence[tuple[float, float, float, float]],
    m: float,
    S0: float,
) -> float:
    """Bound on ``S_T`` for ``S_{t+1} <= R_{a_t}(S_t) + b_t S_t + d_t + eps_t``.

    A noiseless schedule (all ``b, d, eps`` zero) returns ``R_{A_T}(S0)``,
    which is never larger than the floor form. Otherwise the floor ``m`` must
    satisfy ``g_t(m) <= m`` and every ``lambda_t = L_{a_t}(m) + b_t`` must be
    below one; the result is ``m + prod(lambda_t) (S0 - m)_+``.
    """
    steps = [NoisyStep(*map(float, entry)) for entry in schedule]
    _check_nonneg(m=m, S0=S0)
    for t, step in enumerate(steps):
        if min(step) < 0:
            raise DomainError(f"schedule entry {t} has a negative component: {step}")
    if all(step.b == 0 and step.d == 0 and step.eps == 0 for step in steps):
        return flow_apply(family, sum(step.a for step in steps), S0)
    product = 1.0
    for t, step in enumerate(steps):
        drift = noisy_drift(family, step, m)
        if drift > m + FEASIBILITY_RTOL * max(m, 1.0):
            raise PreconditionError(f"floor condition g_t(m) <= m fails at index {t}: {drift} > {m}")
        lam = slope_modulus(family, step.a, m) + step.b
        if lam >= 1.0:
            raise PreconditionError(f"contraction factor lambda_{t} = {lam} is not below 1")
        product *= lam
    return m + product * max(S0 - m, 0.0)


def positive_root(a: float, beta: float, d: float) -> float:
    """Positive root of ``a m^2 - beta m - d = 0``."""
    if not a > 0:
        raise DomainError("a must be positive")
    return (beta + math.hypot(beta, 2.0 * math.sqrt(a) * math.sqrt(d))) / (2.0 * a)
