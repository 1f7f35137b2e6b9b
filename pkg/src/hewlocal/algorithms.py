"""Round procedures: the exact-weight local SGD round, its two post-local
variants, and the standard federated baselines, with communication accounting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError
from .models import FiniteSumModel, MinibatchOracle
from .solvers import SolverConfig, simplex_quadratic_minimize

log = logging.getLogger(__name__)

IDENTITY_WARN = 1e-8


class MethodKind(str, Enum):
    HEW = "hew"
    HEW_FIXED = "hew_fixed"
    POST_HET = "post_het"
    POST_HOM = "post_hom"
    FEDAVG = "fedavg"
    UNIFORM = "uniform_localsgd"
    FEDNOVA = "fednova"
    SCAFFOLD = "scaffold"
    FEDPROX = "fedprox"
    MBSGD = "mbsgd"

    @classmethod
    def parse(cls, name) -> "MethodKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"uniform": "uniform_localsgd", "localsgd": "uniform_localsgd", "minibatch_sgd": "mbsgd", "hewfixed": "hew_fixed"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown method {name!r}") from None


CORRECTED = {MethodKind.HEW, MethodKind.HEW_FIXED, MethodKind.POST_HET, MethodKind.SCAFFOLD}


# ---------------------------------------------------------------------------
# state and reports


@dataclass
class ServerState:
    x: np.ndarray
    c: np.ndarray
    c_i: np.ndarray  # (n, d)
    round: int = 0

    @classmethod
    def initial(cls, model: FiniteSumModel, x0: np.ndarray | None = None, *, exact_controls: bool = True) -> "ServerState":
        """Zero-round state; controls start at the exact client gradients (one full local pass)."""
        x = np.zeros(model.dim) if x0 is None else np.array(x0, dtype=float)
        if exact_controls:
            c_i = np.stack([model.client_gradient(i, x) for i in range(model.n)])
        else:
            c_i = np.zeros((model.n, model.dim))
        return cls(x, c_i.mean(axis=0), c_i)

    def copy(self) -> "ServerState":
        return ServerState(self.x.copy(), self.c.copy(), self.c_i.copy(), self.round)

    def server_average_deviation(self) -> float:
        return float(np.linalg.norm(self.c - self.c_i.mean(axis=0)) / (1.0 + np.linalg.norm(self.c)))


@dataclass(frozen=True)
class RoundContext:
    """Everything a round needs besides the state: model, constants and schedule."""

    model: FiniteSumModel
    L: float
    H: np.ndarray
    b: np.ndarray
    seed: int = 0

    def __post_init__(self):
        n = self.model.n
        if len(self.H) != n or len(self.b) != n:
            raise ConfigurationError("H and b need one entry per client")
        if np.any(np.asarray(self.H) < 1) or np.any(np.asarray(self.b) < 1):
            raise ConfigurationError("H_i and b_i must be positive")

    @property
    def n(self) -> int:
        return self.model.n

    def oracle(self, i: int) -> MinibatchOracle:
        return MinibatchOracle(self.model, i, int(self.b[i]), self.seed)


@dataclass
class RoundPlan:
    active: np.ndarray
    kind: MethodKind
    weights: np.ndarray | None = None  # length n, zero off the active set
    thetas: np.ndarray | None = None  # length n
    vartheta: float | None = None
    Lambda: float | None = None

    def etas(self, ctx: RoundContext) -> np.ndarray:
        th = self.thetas if self.thetas is not None else np.full(ctx.n, self.vartheta)
        return th / (ctx.L * np.asarray(ctx.H, dtype=float))


@dataclass
class ClientReport:
    client: int
    delta: np.ndarray
    grad_mean: np.ndarray
    eta: float
    steps: int
    delta_c: np.ndarray | None = None
    g_loc: np.ndarray | None = None


@dataclass
class RoundMetrics:
    weights: np.ndarray
    comm: int
    identities: dict = field(default_factory=dict)


def full_active(n: int) -> np.ndarray:
    return np.arange(n)


# ---------------------------------------------------------------------------
# local work


def _local_path(ctx: RoundContext, state: ServerState, i: int, eta: float, steps: int, *, corrected: bool, prox_mu: float = 0.0) -> ClientReport:
    oracle = ctx.oracle(i)
    x = state.x
    y = x.copy()
    gsum = np.zeros_like(x)
    shift = state.c - state.c_i[i] if corrected else None
    with np.errstate(over="ignore", invalid="ignore"):
        for ell in range(steps):
            g = oracle.gradient(y, state.round, ell)
            gsum += g
            direction = g + shift if corrected else g
            if prox_mu:
                direction = direction + prox_mu * (y - x)
            y = y - eta * direction
    delta = y - x
    if not np.all(np.isfinite(delta)):
        raise NumericalError(f"non-finite local iterate at round {state.round}, client {i}, eta={eta}")
    rep = ClientReport(i, delta, gsum / steps, eta, steps)
    if corrected:
        new_ci = state.c_i[i] - state.c + (x - y) / (steps * eta)
        rep.delta_c = new_ci - state.c_i[i]
    return rep


def _apply_corrected(state: ServerState, reports: Sequence[ClientReport], weights: np.ndarray, n: int) -> tuple[ServerState, float]:
    """Server update for corrected branches; returns the new state and the worst
    deviation from the control-variate average identity."""
    new = state.copy()
    step = np.zeros_like(state.x)
    dc = np.zeros_like(state.c)
    worst = 0.0
    for rep in reports:
        step += weights[rep.client] * rep.delta
        dc += rep.delta_c
        new.c_i[rep.client] = state.c_i[rep.client] + rep.delta_c
        dev = np.linalg.norm(new.c_i[rep.client] - rep.grad_mean) / (1.0 + np.linalg.norm(rep.grad_mean))
        worst = max(worst, float(dev))
    new.x = state.x + step
    new.c = state.c + dc / n
    new.round = state.round + 1
    if worst > IDENTITY_WARN:
        log.warning("control-variate average identity off by %.3g at round %d", worst, state.round)
    return new, worst


# ---------------------------------------------------------------------------
# communication


def round_cost(S: int, d: int, *, down_vectors: int, up_vectors: int, node_scalars: int = 0, nu: int = 0) -> int:
    return down_vectors * d + up_vectors * d * S + node_scalars * S + nu


def comm_round_cost(S: int, d: int, nu: int = 0) -> int:
    """``2d + 2dS + S + nu``: broadcast of ``(x, c)``, per-node amplitudes, uploads of ``(Delta, Delta c)``."""
    if S < 0 or d < 0 or nu < 0:
        raise ConfigurationError("counts must be nonnegative")
    return round_cost(S, d, down_vectors=2, up_vectors=2, node_scalars=1, nu=nu)


def method_round_cost(kind: MethodKind, S: int, d: int, nu: int = 0) -> int:
    kind = MethodKind.parse(kind)
    if kind in (MethodKind.HEW, MethodKind.HEW_FIXED, MethodKind.POST_HET):
        return comm_round_cost(S, d, nu)
    if kind is MethodKind.SCAFFOLD:
        return round_cost(S, d, down_vectors=2, up_vectors=2)
    return round_cost(S, d, down_vectors=1, up_vectors=1, nu=nu)


# ---------------------------------------------------------------------------
# exact-weight round


def hew_round(state: ServerState, plan: RoundPlan, ctx: RoundContext) -> tuple[ServerState, RoundMetrics]:
    """Corrected local paths with per-node amplitudes and the planned weights.

    The plan must be fixed before the round's minibatches are drawn.
    """
    if plan.weights is None:
        raise ConfigurationError("hew_round needs planned weights")
    w = np.asarray(plan.weights, dtype=float)
    active = np.asarray(plan.active, dtype=int)
    if abs(w[active].sum() - 1.0) > 1e-9 or np.any(w < 0) or np.any(np.delete(w, active) != 0):
        raise ConfigurationError("weights must lie on the simplex of the active set")
    etas = plan.etas(ctx)
    reports = [_local_path(ctx, state, i, etas[i], int(ctx.H[i]), corrected=True) for i in active]
    new, dev = _apply_corrected(state, reports, w, ctx.n)
    d = ctx.model.dim
    metrics = RoundMetrics(w, comm_round_cost(active.size, d), {"cv_average": dev, "server_average": new.server_average_deviation()})
    return new, metrics


def post_het_round(state: ServerState, vartheta: float, Lambda: float, ctx: RoundContext, active=None, config: SolverConfig | None = None) -> tuple[ServerState, RoundMetrics]:
    """Corrected paths with a common amplitude; weights minimize the realized
    heterogeneous surrogate with linear term ``c_t``."""
    active = full_active(ctx.n) if active is None else np.asarray(active, dtype=int)
    eta = vartheta / (ctx.L * np.asarray(ctx.H, dtype=float))
    reports = [_local_path(ctx, state, i, eta[i], int(ctx.H[i]), corrected=True) for i in active]
    D = np.zeros((ctx.model.dim, ctx.n))
    for rep in reports:
        D[:, rep.client] = rep.delta
    w = simplex_quadratic_minimize(state.c, D, Lambda, active, config)
    new, dev = _apply_corrected(state, reports, w, ctx.n)
    metrics = RoundMetrics(w, comm_round_cost(active.size, ctx.model.dim), {"cv_average": dev, "server_average": new.server_average_deviation()})
    return new, metrics


def post_hom_round(state: ServerState, vartheta: float, Lambda: float, ctx: RoundContext, config: SolverConfig | None = None) -> tuple[ServerState, RoundMetrics]:
    """Plain local paths; weights minimize the realized homogeneous surrogate with linear term ``g_bar``."""
    n = ctx.n
    eta = vartheta / (ctx.L * np.asarray(ctx.H, dtype=float))
    reports = [_local_path(ctx, state, i, eta[i], int(ctx.H[i]), corrected=False) for i in range(n)]
    D = np.stack([rep.delta for rep in reports], axis=1)
    for rep in reports:
        rep.g_loc = -rep.delta / (rep.eta * rep.steps)
    g_bar = np.mean([rep.g_loc for rep in reports], axis=0)
    uniform_step = D.mean(axis=1)
    ident = float(np.linalg.norm(uniform_step + (vartheta / ctx.L) * g_bar) / (1.0 + np.linalg.norm(uniform_step)))
    if ident > IDENTITY_WARN:
        log.warning("uniform-comparator identity off by %.3g at round %d", ident, state.round)
    w = simplex_quadratic_minimize(g_bar, D, Lambda, None, config)
    new = state.copy()
    new.x = state.x + D @ w
    new.round = state.round + 1
    metrics = RoundMetrics(w, method_round_cost(MethodKind.POST_HOM, n, ctx.model.dim), {"uniform_identity": ident})
    return new, metrics


# ---------------------------------------------------------------------------
# baselines


@dataclass(frozen=True)
class BaselineParams:
    lr_scale: float
    prox_mu: float = 0.0


def baseline_round(state: ServerState, kind, hp: BaselineParams, ctx: RoundContext) -> tuple[ServerState, RoundMetrics]:
    """One round of a standard method with local step ``lr_scale / L``."""
    kind = MethodKind.parse(kind)
    n, d = ctx.n, ctx.model.dim
    eta = hp.lr_scale / ctx.L
    sizes = np.asarray(ctx.model.sizes, dtype=float)
    cost = method_round_cost(kind, n, d)
    H = np.asarray(ctx.H, dtype=int)

    if kind is MethodKind.MBSGD:
        grads = [ctx.oracle(i).gradient(state.x, state.round, 0) for i in range(n)]
        new = state.copy()
        new.x = state.x - eta * np.mean(grads, axis=0)
        new.round += 1
        if not np.all(np.isfinite(new.x)):
            raise NumericalError(f"non-finite iterate at round {state.round}")
        return new, RoundMetrics(np.full(n, 1.0 / n), cost)

    if kind is MethodKind.SCAFFOLD:
        reports = [_local_path(ctx, state, i, eta, int(H[i]), corrected=True) for i in range(n)]
        w = np.full(n, 1.0 / n)
        new, dev = _apply_corrected(state, reports, w, n)
        return new, RoundMetrics(w, cost, {"cv_average": dev, "server_average": new.server_average_deviation()})

    if kind in (MethodKind.FEDAVG, MethodKind.UNIFORM, MethodKind.FEDPROX, MethodKind.FEDNOVA):
        mu = hp.prox_mu if kind is MethodKind.FEDPROX else 0.0
        reports = [_local_path(ctx, state, i, eta, int(H[i]), corrected=False, prox_mu=mu) for i in range(n)]
        p = np.full(n, 1.0 / n) if kind is MethodKind.UNIFORM else sizes / sizes.sum()
        new = state.copy()
        if kind is MethodKind.FEDNOVA:
            tau = H.astype(float)
            tau_eff = float(p @ tau)
            step = sum(p[r.client] * r.delta / tau[r.client] for r in reports) * tau_eff
            w = p * tau_eff / tau
        else:
            step = sum(p[r.client] * r.delta for r in reports)
            w = p
        new.x = state.x + step
        new.round += 1
        return new, RoundMetrics(w / w.sum(), cost)

    raise ConfigurationError(f"{kind.value} is not a baseline")


def run_round(state: ServerState, kind, ctx: RoundContext, *, vartheta=None, Lambda=None, lr_scale=None, prox_mu=0.0, fixed_weights=None, config=None):
    """Dispatch one experiment-mode round for any method kind."""
    kind = MethodKind.parse(kind)
    if kind in (MethodKind.HEW, MethodKind.POST_HET):
        return post_het_round(state, vartheta, Lambda, ctx, None, config)
    if kind is MethodKind.HEW_FIXED:
        if fixed_weights is None:
            return post_het_round(state, vartheta, Lambda, ctx, None, config)
        plan = RoundPlan(full_active(ctx.n), kind, np.asarray(fixed_weights), np.full(ctx.n, float(vartheta)))
        return hew_round(state, plan, ctx)
    if kind is MethodKind.POST_HOM:
        return post_hom_round(state, vartheta, Lambda, ctx, config)
    return baseline_round(state, kind, BaselineParams(lr_scale, prox_mu), ctx)
