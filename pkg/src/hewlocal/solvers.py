"""Control solvers: KKT threshold weights, amplitude search, alternating
block minimization and the simplex QP used by the post-local aggregators."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .certificate import NodeSchedule, UpperState, _rows, bar_f
from .errors import ConfigurationError, NumericalError

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SolverConfig:
    sweep_eps: float | None = None  # None: 1e-10 * (|J_0| + 1)
    theta_tol: float = 1e-6
    qp_tol: float = 1e-8
    qp_max_iters: int = 10_000
    max_sweeps: int = 200

    def __post_init__(self):
        for name in ("theta_tol", "qp_tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.sweep_eps is not None and not self.sweep_eps > 0:
            raise ConfigurationError("sweep_eps must be positive")
        if self.qp_max_iters < 1 or self.max_sweeps < 1:
            raise ConfigurationError("iteration caps must be positive")


@dataclass
class ControlPair:
    w: np.ndarray
    theta: np.ndarray
    value: float = float("nan")
    trace: list = field(default_factory=list)
    sweeps: int = 0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.size and (np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12):
            raise ConfigurationError("weights must lie on the simplex")


# ---------------------------------------------------------------------------
# weights


def kkt_threshold_weights(mu, kappa, L: float) -> tuple[np.ndarray, float]:
    """Minimize ``-sum w_i mu_i + (L/2) sum w_i^2 kappa_i`` over the simplex.

    Returns ``(w, lambda)`` with ``w_i = (mu_i - lambda)_+ / (L kappa_i)``.
    Nonpositive curvatures fall back to the general simplex QP.
    """
    mu = np.asarray(mu, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    S = mu.size
    if S == 0:
        raise ConfigurationError("empty node set")
    if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(kappa)):
        raise NumericalError("non-finite certificate coefficients")
    if np.any(kappa <= 0):
        if np.all(kappa == 0):
            # affine objective: uniform over the maximizers of mu
            top = mu == mu.max()
            w = top / top.sum()
            return w.astype(float), float(mu.max())
        warnings.warn("nonpositive curvature in the weight QP; using the general simplex solver", RuntimeWarning)
        res = simplex_qp(L * np.diag(kappa), -mu, np.arange(S), SolverConfig())
        return res.w, float("nan")
    order = np.argsort(-mu, kind="stable")
    ms = mu[order]
    inv = 1.0 / (L * kappa[order])
    cum_inv = np.cumsum(inv)
    cum_mu = np.cumsum(ms * inv)
    lam = None
    for k in range(S):
        cand = (cum_mu[k] - 1.0) / cum_inv[k]
        nxt = ms[k + 1] if k + 1 < S else -np.inf
        if ms[k] > cand and nxt <= cand:
            lam = cand
            break
    if lam is None:  # unreachable in exact arithmetic; keep the full support
        lam = (cum_mu[-1] - 1.0) / cum_inv[-1]
    w = np.maximum(mu - lam, 0.0) / (L * kappa)
    return w / w.sum(), float(lam)


# ---------------------------------------------------------------------------
# amplitudes


def amplitude_line_search(slice_fn: Callable[[float], float], lo: float, hi: float, config: SolverConfig | None = None) -> float:
    """Golden-section minimization of a unimodal slice on ``[lo, hi]``.

    The midpoint of the final bracket is compared with both endpoints and
    the best of the three is returned, so boundary minima are exact.
    """
    cfg = config or SolverConfig()

    def f(t):
        v = slice_fn(t)
        if v != v:
            raise NumericalError(f"objective is NaN at theta={t}")
        return v

    if hi <= lo:
        return lo
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > cfg.theta_tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    mid = 0.5 * (a + b)
    cands = [(f(mid), 1, mid), (f(lo), 0, lo), (f(hi), 2, hi)]
    return min(cands)[2]


# ---------------------------------------------------------------------------
# alternating block solver


def alternating_solve(
    state: UpperState,
    scheds: Sequence[NodeSchedule],
    L: float,
    R: float,
    config: SolverConfig | None = None,
    *,
    v2=None,
) -> ControlPair:
    """Alternate exact weight solves with per-node amplitude searches.

    Starts from uniform weights, first optimizes the amplitudes for those
    weights, then sweeps (weights, amplitudes) until the decrease over a
    sweep is at most ``sweep_eps``. A block update is kept only if it does
    not increase the objective, so the returned trace is nonincreasing.
    """
    cfg = config or SolverConfig()
    S = len(scheds)
    H = np.array([s.H for s in scheds], dtype=float)
    b = np.array([s.b for s in scheds], dtype=float)
    v = np.array([s.v2 for s in scheds], dtype=float) if v2 is None else np.asarray(v2, dtype=float)
    lo = np.array([s.theta_lo for s in scheds])
    hi = np.array([s.theta_hi for s in scheds])
    U_sharp = min(state.U, bar_f(L, R))

    def rows(theta):
        return _rows(theta, state.U, state.Q, H, b, v, L, R)

    def J(w, theta):
        _, _, _, kappa, mu = rows(theta)
        return float(U_sharp - w @ mu + 0.5 * L * (w * w) @ kappa)

    def amplitude_step(w, theta):
        new = theta.copy()
        for i in range(S):
            if w[i] == 0.0:
                continue

            def sl(t, i=i):
                _, _, _, kap, m = _rows(t, state.U, state.Q, H[i], b[i], v[i], L, R)
                return float(-w[i] * m + 0.5 * L * w[i] ** 2 * kap)

            cand = amplitude_line_search(sl, lo[i], hi[i], cfg)
            if sl(cand) <= sl(theta[i]):
                new[i] = cand
        return new

    def weight_step(theta):
        _, _, _, kappa, mu = rows(theta)
        return kkt_threshold_weights(mu, kappa, L)[0]

    w = np.full(S, 1.0 / S)
    theta = 0.5 * (lo + hi)
    cur = J(w, theta)
    trace = [cur]
    eps = cfg.sweep_eps if cfg.sweep_eps is not None else 1e-10 * (abs(cur) + 1.0)

    cand = amplitude_step(w, theta)
    val = J(w, cand)
    if val <= cur:
        theta, cur = cand, val
    trace.append(cur)

    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        start = cur
        cw = weight_step(theta)
        val = J(cw, theta)
        if val <= cur:
            w, cur = cw, val
        trace.append(cur)
        ct = amplitude_step(w, theta)
        val = J(w, ct)
        if val <= cur:
            theta, cur = ct, val
        trace.append(cur)
        if start - cur <= eps:
            break
    return ControlPair(w, theta, cur, trace, sweeps)


# ---------------------------------------------------------------------------
# simplex QP


class QPResult(NamedTuple):
    w: np.ndarray
    value: float
    gap: float
    iterations: int


def simplex_qp(P: np.ndarray, c: np.ndarray, active, config: SolverConfig | None = None) -> QPResult:
    """Minimize ``c'w + 0.5 w'Pw`` over the simplex face supported on ``active``.

    Away-step Frank-Wolfe with exact line search on the quadratic. Starts
    from the uniform point on the face and stops once the duality gap is at
    most ``qp_tol``; when the gradient is constant across the face the
    uniform point is returned unchanged.
    """
    cfg = config or SolverConfig()
    active = np.asarray(active, dtype=int)
    n = c.size
    if active.size == 0:
        raise ConfigurationError("active set must be nonempty")
    Pa = P[np.ix_(active, active)]
    ca = c[active]
    k = active.size
    w = np.full(k, 1.0 / k)
    grad = ca + Pa @ w
    gap = 0.0
    it = 0
    for it in range(cfg.qp_max_iters):
        s = int(np.argmin(grad))
        gw = grad @ w
        gap = gw - grad[s]
        if gap <= cfg.qp_tol:
            break
        support = np.flatnonzero(w > 0)
        a = support[np.argmax(grad[support])]
        away_gap = grad[a] - gw
        if gap >= away_gap or w[a] >= 1.0:
            d = -w.copy()
            d[s] += 1.0
            gmax = 1.0
        else:
            d = w.copy()
            d[a] -= 1.0
            gmax = w[a] / (1.0 - w[a])
        slope = grad @ d
        curv = d @ Pa @ d
        step = gmax if curv <= 0 else min(gmax, max(0.0, -slope / curv))
        if step == 0.0:
            break
        w = w + step * d
        w[w < 1e-18] = 0.0
        w /= w.sum()
        grad = ca + Pa @ w
    else:
        log.warning("simplex QP hit the iteration cap with gap %.3g", gap)
    full = np.zeros(n)
    full[active] = w
    return QPResult(full, float(ca @ w + 0.5 * w @ Pa @ w), float(gap), it)


def min_norm_point(points: np.ndarray, tol: float = 1e-12, max_iters: int = 10_000) -> tuple[np.ndarray, float, int]:
    """Wolfe's algorithm: the point of minimum norm in the convex hull of the columns.

    Returns barycentric weights, the final Frank-Wolfe gap
    ``||x||^2 - min_j <x, p_j>`` and the number of major cycles.
    """
    Pm = np.asarray(points, dtype=float)
    k = Pm.shape[1]
    norms = np.einsum("ij,ij->j", Pm, Pm)
    S = [int(np.argmin(norms))]
    lam = np.array([1.0])
    x = Pm[:, S[0]].copy()
    gap = 0.0
    it = 0
    for it in range(1, max_iters + 1):
        proj = x @ Pm
        j = int(np.argmin(proj))
        gap = float(x @ x - proj[j])
        if gap <= tol or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            PS = Pm[:, S]
            m = len(S)
            G = PS.T @ PS
            K = np.zeros((m + 1, m + 1))
            K[:m, :m] = G
            K[:m, m] = 1.0
            K[m, :m] = 1.0
            rhs = np.zeros(m + 1)
            rhs[m] = 1.0
            alpha = np.linalg.lstsq(K, rhs, rcond=None)[0][:m]
            if np.all(alpha > 1e-14):
                lam = alpha
                break
            mask = alpha < lam
            step = np.min(lam[mask] / (lam[mask] - alpha[mask])) if np.any(mask) else 1.0
            lam = lam + step * (alpha - lam)
            keep = lam > 1e-14 * max(1.0, lam.max())
            if keep.all():
                keep[np.argmin(lam)] = False
            S = [s for s, kp in zip(S, keep) if kp]
            lam = lam[keep]
            lam /= lam.sum()
        x = Pm[:, S] @ lam
    w = np.zeros(k)
    w[S] = lam
    w[w < 0] = 0.0
    w /= w.sum()
    return w, gap, it


def simplex_quadratic_minimize(linear, endpoints, curvature: float, active=None, config: SolverConfig | None = None, *, return_info: bool = False):
    """Minimize ``<g, D w> + (Lambda/2) ||D w||^2`` over the simplex face on ``active``.

    ``endpoints`` is ``D`` with one column per node. On the simplex the
    objective equals ``(Lambda/2) ||sum w_i (D_i + g/Lambda)||^2`` up to a
    constant, so the problem is a minimum-norm-point problem over shifted
    columns and is solved exactly by Wolfe's algorithm. When the uniform
    point already has duality gap below ``qp_tol`` (for instance when all
    columns coincide and the objective is constant) it is returned as is.
    """
    cfg = config or SolverConfig()
    D = np.asarray(endpoints, dtype=float)
    g = np.asarray(linear, dtype=float)
    if not curvature > 0:
        raise ConfigurationError("curvature must be positive")
    n = D.shape[1]
    active = np.arange(n) if active is None else np.asarray(active, dtype=int)
    if active.size == 0:
        raise ConfigurationError("active set must be nonempty")
    w = np.zeros(n)
    if active.size == 1:
        w[active[0]] = 1.0
        return (w, QPResult(w, psi_value(g, D, curvature, w), 0.0, 0)) if return_info else w
    Da = D[:, active]
    pts = Da + (g / curvature)[:, None]
    k = active.size
    uni = np.full(k, 1.0 / k)
    x = pts @ uni
    proj = x @ pts
    gap = curvature * float(x @ x - proj.min())
    it = 0
    if gap <= cfg.qp_tol:
        wa = uni
    else:
        wa, g_raw, it = min_norm_point(pts, tol=cfg.qp_tol / curvature, max_iters=cfg.qp_max_iters)
        gap = curvature * g_raw
        if gap > cfg.qp_tol:
            log.warning("post-local QP stopped with gap %.3g", gap)
    w[active] = wa
    if return_info:
        return w, QPResult(w, psi_value(g, D, curvature, w), gap, it)
    return w


def psi_value(linear, endpoints, curvature: float, w) -> float:
    d = np.asarray(endpoints, dtype=float) @ np.asarray(w, dtype=float)
    return float(np.asarray(linear) @ d + 0.5 * curvature * d @ d)
