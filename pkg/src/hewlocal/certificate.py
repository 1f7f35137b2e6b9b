"""Coefficient systems, certificate objectives and upper-state recursions.

The per-node certificate rows feed the exact control solver; the scalar
coefficient systems (uniform controller, PL, higher order, post-local
heterogeneous and homogeneous) close into the envelopes of
:mod:`hewlocal.scalar`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, PreconditionError
from .scalar import (
    QuadLinParams,
    linear_envelope,
    positive_root,
    quadlin_envelope,
    t_a_apply,
)

SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True)
class UpperState:
    """Gap bound ``U`` and control-variate tracking bound ``Q``."""

    U: float
    Q: float

    def __post_init__(self):
        if not (self.U >= 0 and self.Q >= 0):
            raise DomainError(f"upper state must be nonnegative, got U={self.U}, Q={self.Q}")

    def sharp(self, bar_f: float) -> float:
        return min(self.U, bar_f)


@dataclass(frozen=True)
class NodeSchedule:
    H: int
    b: int
    v2: float
    theta_lo: float
    theta_hi: float

    def __post_init__(self):
        if self.H < 1 or self.b < 1:
            raise ConfigurationError("H and b must be positive integers")
        if self.v2 < 0:
            raise DomainError("v2 must be nonnegative")
        if not 0 < self.theta_lo <= self.theta_hi:
            raise ConfigurationError("need 0 < theta_lo <= theta_hi")

    def require_certificate_range(self) -> None:
        if self.theta_hi > 1:
            raise ConfigurationError(
                f"certificate evaluation needs theta_hi <= 1, got {self.theta_hi}; "
                "disable certificate mode for larger amplitudes"
            )


def bar_f(L: float, R: float) -> float:
    return 0.5 * L * R * R


# ---------------------------------------------------------------------------
# one-step certificate


@dataclass(frozen=True)
class NodeCoeffs:
    A: float
    s: float
    rho: float
    kappa: float
    mu: float


def _rows(theta, U, Q, H, b, v2, L, R):
    """Vectorized certificate rows; all arguments broadcast."""
    theta = np.asarray(theta, dtype=float)
    fbar = bar_f(L, R)
    U_sharp = np.minimum(U, fbar)
    A = theta / (2.0 * L * R * R)
    # U - T_A(U) written without cancellation
    s = A * U_sharp * U_sharp / (1.0 + A * U_sharp)
    e2 = np.exp(2.0 * theta)
    t2, t3, t4 = theta**2, theta**3, theta**4
    noise = np.asarray(v2, dtype=float) / (np.asarray(H, dtype=float) * np.asarray(b, dtype=float))
    rho = 32.0 * e2 * t3 * U + (16.0 * theta + 64.0 * e2 * t3) * Q / L + 8.0 * e2 * t3 * noise / L
    kappa = 16.0 * e2 * t4 * U / L + 32.0 * e2 * t4 * Q / L**2 + (2.0 * t2 + 4.0 * e2 * t4) * noise / L**2
    return A, s, rho, kappa, s - rho


def node_coeffs(theta: float, state: UpperState, sched: NodeSchedule, L: float, R: float) -> NodeCoeffs:
    """Certificate row ``(A_i, s_i, rho_i, kappa_i, mu_i)`` of one node."""
    if not sched.theta_lo <= theta <= sched.theta_hi:
        raise DomainError(f"theta={theta} outside [{sched.theta_lo}, {sched.theta_hi}]")
    if not (L > 0 and R > 0):
        raise DomainError("L and R must be positive")
    row = _rows(theta, state.U, state.Q, sched.H, sched.b, sched.v2, L, R)
    return NodeCoeffs(*(float(v) for v in row))


@dataclass(frozen=True)
class CertCoeffs:
    """Stacked certificate rows for the active nodes, with the data needed by the objective."""

    A: np.ndarray
    s: np.ndarray
    rho: np.ndarray
    kappa: np.ndarray
    mu: np.ndarray
    U_sharp: float
    L: float


def cert_coeffs(thetas, state: UpperState, scheds: Sequence[NodeSchedule], L: float, R: float, v2=None) -> CertCoeffs:
    """Rows for every node; ``v2`` overrides the schedules' variance levels (executable proxies)."""
    thetas = np.asarray(thetas, dtype=float)
    lo = np.array([s.theta_lo for s in scheds])
    hi = np.array([s.theta_hi for s in scheds])
    if np.any(thetas < lo) or np.any(thetas > hi):
        raise DomainError("amplitudes outside their boxes")
    H = np.array([s.H for s in scheds], dtype=float)
    b = np.array([s.b for s in scheds], dtype=float)
    v = np.array([s.v2 for s in scheds], dtype=float) if v2 is None else np.asarray(v2, dtype=float)
    A, s, rho, kappa, mu = _rows(thetas, state.U, state.Q, H, b, v, L, R)
    return CertCoeffs(A, s, rho, kappa, mu, state.sharp(bar_f(L, R)), float(L))


def _check_simplex(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < -SIMPLEX_ATOL) or abs(w.sum() - 1.0) > SIMPLEX_ATOL:
        raise DomainError(f"weights off the simplex (sum={w.sum()!r}, min={w.min()!r})")
    return w


def objective_J(coeffs: CertCoeffs, w) -> float:
    """``U_sharp - sum w_i mu_i + (L/2) sum w_i^2 kappa_i``."""
    w = _check_simplex(w)
    return float(coeffs.U_sharp - w @ coeffs.mu + 0.5 * coeffs.L * (w * w) @ coeffs.kappa)


def certificate_value(w, thetas, state, scheds, L, R, v2=None) -> float:
    return objective_J(cert_coeffs(thetas, state, scheds, L, R, v2), w)


# ---------------------------------------------------------------------------
# surrogate system (full participation)


@dataclass(frozen=True)
class Tracking:
    A_chi: float
    B_chi: float
    C_chi: float

    def step(self, u: float, chi: float) -> float:
        return self.A_chi + self.B_chi * u + self.C_chi * chi

    def cap(self, chi0: float, fbar: float) -> float:
        return max(chi0, (self.A_chi + self.B_chi * fbar) / (1.0 - self.C_chi))


def tracking_coeffs(scheds: Sequence[NodeSchedule], L: float, v2=None) -> Tracking:
    v = np.array([s.v2 for s in scheds]) if v2 is None else np.asarray(v2, dtype=float)
    Hb = np.array([s.H * s.b for s in scheds], dtype=float)
    theta_bar = max(s.theta_hi for s in scheds)
    C = 288.0 * theta_bar**2
    if C >= 1:
        raise ConfigurationError(f"tracking contraction 288*theta_bar^2 = {C} is not below 1")
    return Tracking(6.0 * float(np.max(v / Hb)), 144.0 * L * theta_bar**2, C)


def tracking_cap(A_chi: float, B_chi: float, C_chi: float, chi0: float, fbar: float) -> float:
    if C_chi >= 1:
        raise ConfigurationError("C_chi must be below 1")
    return max(chi0, (A_chi + B_chi * fbar) / (1.0 - C_chi))


@dataclass
class SurrogateStep:
    state: UpperState
    w: np.ndarray
    theta: np.ndarray
    J_opt: float


def surrogate_step(state: UpperState, scheds: Sequence[NodeSchedule], L: float, R: float, config=None, v2=None) -> SurrogateStep:
    """One step of ``(u, chi)``: optimize the certificate, cap at ``bar_f``, advance tracking."""
    from .solvers import alternating_solve

    for s in scheds:
        s.require_certificate_range()
    track = tracking_coeffs(scheds, L, v2)
    fbar = bar_f(L, R)
    if state.U > fbar * (1 + 1e-12):
        raise PreconditionError(f"u={state.U} exceeds bar_f={fbar}")
    pair = alternating_solve(state, scheds, L, R, config, v2=v2)
    J_opt = pair.value
    nxt = UpperState(min(fbar, max(J_opt, 0.0)), track.step(state.U, state.Q))
    return SurrogateStep(nxt, pair.w, pair.theta, J_opt)


def surrogate_trajectory(state0: UpperState, scheds, L, R, rounds: int, config=None, v2=None) -> list[SurrogateStep]:
    """States ``(u_t, chi_t)`` for ``t = 0..rounds`` with the controls chosen at each round.

    Entry ``t`` holds the state at round ``t`` and the controls used during
    round ``t``; the last entry carries no controls.
    """
    out = []
    state = state0
    for _ in range(rounds):
        step = surrogate_step(state, scheds, L, R, config, v2)
        out.append(SurrogateStep(state, step.w, step.theta, step.J_opt))
        state = step.state
    out.append(SurrogateStep(state, np.array([]), np.array([]), float("nan")))
    return out


def trace_record(round_index: int, step: SurrogateStep) -> str:
    """One JSON line ``{round, U, Q, J_opt, weights, thetas}``."""
    J = step.J_opt
    return json.dumps(
        {
            "round": round_index,
            "U": step.state.U,
            "Q": step.state.Q,
            "J_opt": None if J != J else J,
            "weights": [float(v) for v in step.w],
            "thetas": [float(v) for v in step.theta],
        },
        sort_keys=True,
    )


@dataclass(frozen=True)
class CvxCoeffs:
    a: float
    beta: float
    gamma: float
    delta: float


def cvx_coeffs(w_bar, theta_bar, scheds: Sequence[NodeSchedule], L: float, R: float) -> CvxCoeffs:
    """Comparator coefficients of the optimized-controller convex recursion."""
    w = _check_simplex(w_bar)
    th = np.asarray(theta_bar, dtype=float)
    noise = np.array([s.v2 / (s.H * s.b) for s in scheds])
    A_low = th / (2.0 * L * R * R * (1.0 + th / 4.0))
    return CvxCoeffs(
        a=float(w @ A_low),
        beta=float(96.0 * w @ th**2 + 32.0 * (w * w) @ th**4),
        gamma=float((256.0 * w @ th + 64.0 * (w * w) @ th**4) / L),
        delta=float((32.0 * w @ (th**2 * noise) + 16.0 * (w * w) @ (th**2 * noise)) / L),
    )


def cvx_floor(cvx: CvxCoeffs, chi_bar: float) -> QuadLinParams:
    return QuadLinParams.with_root(cvx.a, cvx.beta, cvx.gamma * chi_bar + cvx.delta)


# ---------------------------------------------------------------------------
# uniform controller, PL and higher-order branches


@dataclass(frozen=True)
class UniformCoeffs:
    a_dir: float
    beta_dir: float
    gamma_dir: float
    delta_dir: float
    A_q: float
    B_q: float
    C_q: float


def uniform_coeffs(vartheta: float, L: float, R: float, n: int, H: int, b: int, v2: float) -> UniformCoeffs:
    t = vartheta
    noise = v2 / (H * b)
    return UniformCoeffs(
        a_dir=t / (2.0 * L * R * R),
        beta_dir=48.0 * t**3 + 32.0 * t**4 / n,
        gamma_dir=96.0 * t**3 / L + 64.0 * t**4 / (L * n),
        delta_dir=(16.0 * t**3 + 16.0 * t**2 / n) * noise / L,
        A_q=6.0 * noise,
        B_q=144.0 * L * t * t,
        C_q=288.0 * t * t,
    )


@dataclass(frozen=True)
class PLCoeffs:
    a_PL: float
    rho_PL: float
    lambda_PL: float
    floor: float

    def bound(self, g0: float, q0: float, t) -> float:
        t = np.asarray(t, dtype=float)
        return (1.0 - self.rho_PL) ** t * (g0 + self.lambda_PL * q0) + self.floor


def pl_coeffs(uc: UniformCoeffs, mu_pl: float, vartheta: float, L: float) -> PLCoeffs:
    """Contraction rate, Lyapunov weight and noise floor of the PL branch."""
    if not mu_pl > 0:
        raise DomainError("PL constant must be positive")
    a = mu_pl * vartheta / L - uc.beta_dir
    nu = 1.0 - uc.C_q
    if not a > 0:
        raise PreconditionError(f"a_PL > 0 violated (a_PL={a})")
    if not a < nu:
        raise PreconditionError(f"a_PL < 1 - C_q violated (a_PL={a}, 1-C_q={nu})")
    if not a * nu > uc.B_q * uc.gamma_dir:
        raise PreconditionError(f"a_PL (1 - C_q) > B_q gamma_dir violated ({a * nu} <= {uc.B_q * uc.gamma_dir})")
    root = math.sqrt((nu - a) ** 2 + 4.0 * uc.B_q * uc.gamma_dir)
    # (a + nu - root)/2 written as a ratio to avoid cancellation when B*gamma is tiny
    rho = 2.0 * (a * nu - uc.B_q * uc.gamma_dir) / (a + nu + root)
    lam = 2.0 * uc.gamma_dir / (nu - a + root)
    return PLCoeffs(a, rho, lam, (uc.delta_dir + lam * uc.A_q) / rho)


def pl_safe_regime(mu_pl: float, vartheta: float, L: float) -> bool:
    return 2 * mu_pl * vartheta <= L and vartheta**2 <= min(mu_pl / (400.0 * L), 1.0 / 576.0)


@dataclass(frozen=True)
class HOCoeffs:
    K_ho: float
    a_ho: float
    a_ho_lower: float
    beta_ho: float
    delta_ho: float
    q_bar: float


def ho_coeffs(vartheta, L, R, n, H, b, v2, H_sim, M, q0=0.0) -> HOCoeffs:
    t = vartheta
    uc = uniform_coeffs(t, L, R, n, H, b, v2)
    K = (H_sim + M * R) ** 2
    q_bar = tracking_cap(uc.A_q, uc.B_q, uc.C_q, q0, bar_f(L, R))
    lead = 2.0 * t / L * K
    return HOCoeffs(
        K_ho=K,
        a_ho=t / (2.0 * L * R * R),
        a_ho_lower=t / (2.0 * L * R * R * (1.0 + t / 4.0)),
        beta_ho=lead * 96.0 * t * t / L,
        delta_ho=lead * (32.0 * t * t * v2 / (L * L * H * b) + 192.0 * t * t * q_bar / L**2) + t * t * v2 / (2.0 * L * n * H * b),
        q_bar=q_bar,
    )


def ho_best_iterate_bound(ho: HOCoeffs, g0: float, T: int) -> float:
    if T < 1:
        raise DomainError("T must be at least 1")
    a = ho.a_ho_lower
    return ho.beta_ho / a + math.sqrt(ho.delta_ho / a) + math.sqrt(g0 / (a * T))


# ---------------------------------------------------------------------------
# post-local coefficient systems


def _check_window(Lambda: float, vartheta: float, L: float) -> None:
    if not L < Lambda <= 2 * L:
        raise PreconditionError(f"L < Lambda <= 2L violated (Lambda={Lambda}, L={L})")
    if Lambda * vartheta > L / 2 * (1 + 1e-12):
        raise PreconditionError(f"Lambda*vartheta <= L/2 violated ({Lambda * vartheta} > {L / 2})")


def variance_optimal_comparator(H, b, v2) -> np.ndarray:
    """``a_i proportional to H_i b_i / v_i^2`` (needs every ``v_i^2 > 0``)."""
    v2 = np.asarray(v2, dtype=float)
    if np.any(v2 <= 0):
        raise DomainError("variance-optimal comparator needs v_i^2 > 0")
    r = np.asarray(H, dtype=float) * np.asarray(b, dtype=float) / v2
    return r / r.sum()


def noise_moments(a, H, b, v2) -> tuple[float, float]:
    """``V_1(a) = sum a_i v_i^2/(H_i b_i)`` and ``V_2(a) = sum a_i^2 v_i^2/(H_i b_i)``."""
    a = np.asarray(a, dtype=float)
    noise = np.asarray(v2, dtype=float) / (np.asarray(H, dtype=float) * np.asarray(b, dtype=float))
    return float(a @ noise), float((a * a) @ noise)


@dataclass(frozen=True)
class PostLocalHetCoeffs:
    A_het: float
    A_het_lower: float
    beta_het: float
    gamma_het: float
    delta_het: float
    A_chi: float
    B_chi: float
    C_chi: float
    Q_bar: float
    m_het: float
    bar_f: float

    @property
    def d_het(self) -> float:
        return self.gamma_het * self.Q_bar + self.delta_het


def postlocal_het_coeffs(vartheta, Lambda, L, R, H, b, v2, comparator=None, Q0=0.0, theta_bar=None) -> PostLocalHetCoeffs:
    """Constant-parameter heterogeneous system; ``comparator`` defaults to the variance-optimal one.

    ``theta_bar`` is the amplitude upper bound entering the tracking
    coefficients (defaults to ``vartheta``).
    """
    _check_window(Lambda, vartheta, L)
    t = vartheta
    H = np.asarray(H, dtype=float)
    b = np.asarray(b, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if comparator is None:
        comparator = variance_optimal_comparator(H, b, v2) if np.all(v2 > 0) else np.full(H.size, 1.0 / H.size)
    V1, V2 = noise_moments(comparator, H, b, v2)
    tb = t if theta_bar is None else theta_bar
    C = 288.0 * tb * tb
    if C >= 1:
        raise ConfigurationError(f"tracking contraction 288*theta_bar^2 = {C} is not below 1")
    A_chi = 6.0 * float(np.max(v2 / (H * b)))
    B_chi = 144.0 * L * tb * tb
    fbar = bar_f(L, R)
    Q_bar = tracking_cap(A_chi, B_chi, C, Q0, fbar)
    A = t / (2.0 * L * R * R)
    A_low = t / (2.0 * L * R * R * (1.0 + t / 4.0))
    beta = 192.0 * t**3 + 32.0 * Lambda / L * t**4
    gamma = 1.0 / (2.0 * (Lambda - L)) + 39.0 * t / L + 64.0 * Lambda / L**2 * t**4
    delta = 64.0 * t**3 / L * V1 + 16.0 * Lambda * t * t / L**2 * V2
    m = positive_root(A_low, beta, gamma * Q_bar + delta)
    return PostLocalHetCoeffs(A, A_low, beta, gamma, delta, A_chi, B_chi, C, Q_bar, m, fbar)


def het_rate(c: PostLocalHetCoeffs, U0: float, T) -> float:
    params = QuadLinParams(c.A_het_lower, c.beta_het, c.d_het, c.m_het)
    return quadlin_envelope(params, U0, T)


def het_upper_state_step(c: PostLocalHetCoeffs, U: float, Q: float) -> tuple[float, float]:
    """Exact upper-state recursion ``(U, Q) -> (U', Q')`` of the heterogeneous branch."""
    U_next = min(c.bar_f, t_a_apply(c.A_het, U) + c.beta_het * U + c.gamma_het * Q + c.delta_het)
    return U_next, c.A_chi + c.B_chi * U + c.C_chi * Q


@dataclass(frozen=True)
class PostLocalHomCoeffs:
    A_hom: float
    A_hom_lower: float
    beta_hom: float
    delta_hom: float
    V1_bar: float
    V_u: float
    rho_hom: float | None
    m_hom: float
    bar_f: float


def postlocal_hom_coeffs(vartheta, Lambda, L, R, H, b, v2, mu_pl: float | None = None) -> PostLocalHomCoeffs:
    _check_window(Lambda, vartheta, L)
    t = vartheta
    noise = np.asarray(v2, dtype=float) / (np.asarray(H, dtype=float) * np.asarray(b, dtype=float))
    n = noise.size
    V1_bar = float(noise.sum() / n)
    V_u = float(noise.sum() / n**2)
    eta = Lambda - L
    A = t / (4.0 * L * R * R)
    A_low = t / (4.0 * L * R * R * (1.0 + t / 8.0))
    beta = 16.0 * t**3 + 16.0 * L * t * t / eta
    delta = (4.0 * t**3 / L + 4.0 * t * t / eta) * V1_bar + (t / L + 1.0 / eta) * V_u
    rho = None if mu_pl is None else mu_pl * t / (2.0 * L) - beta
    m = positive_root(A_low, beta, delta)
    return PostLocalHomCoeffs(A, A_low, beta, delta, V1_bar, V_u, rho, m, bar_f(L, R))


def hom_rate(c: PostLocalHomCoeffs, g0: float, T) -> float:
    return quadlin_envelope(QuadLinParams(c.A_hom_lower, c.beta_hom, c.delta_hom, c.m_hom), g0, T)


def hom_pl_rate(c: PostLocalHomCoeffs, g0: float, T) -> float:
    """``(1 - rho)^T g0 + delta/rho``."""
    if c.rho_hom is None:
        raise PreconditionError("PL constant not supplied")
    if not c.rho_hom > 0:
        raise PreconditionError(f"rho_hom = mu*vartheta/(2L) - beta_hom > 0 violated (rho_hom={c.rho_hom})")
    if c.rho_hom > 1:
        raise PreconditionError(f"rho_hom={c.rho_hom} exceeds 1")
    T = np.asarray(T, dtype=float)
    out = (1.0 - c.rho_hom) ** T * g0 + c.delta_hom / c.rho_hom
    return float(out) if out.ndim == 0 else out


def hom_pl_floor_envelope(c: PostLocalHomCoeffs, g0: float, T) -> float:
    """Tighter floor form ``m + (1 - rho)^T (g0 - m)_+`` with ``m = delta/rho``."""
    hom_pl_rate(c, g0, 0)
    return linear_envelope(c.rho_hom, c.delta_hom, c.delta_hom / c.rho_hom, g0, T)


def as_dict(obj) -> dict:
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(obj).items()}
