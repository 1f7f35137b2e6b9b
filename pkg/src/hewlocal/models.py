"""Convex finite-sum models with client structure and stochastic oracles.

The objective is ``F(x) = (1/n) sum_i F_i(x)`` with
``F_i(x) = (1/m_i) sum_j phi_ij(x)``. Two concrete families are provided:
synthetic quadratics with exactly computable constants (used for
verification) and a linear softmax classifier with l2-regularized
cross-entropy (used for the data experiments).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, DomainError

log = logging.getLogger(__name__)

VARIANCE_INFLATION = 1.5


def stream_rng(*key: int) -> np.random.Generator:
    """Counter-style generator keyed by a tuple of nonnegative integers."""
    return np.random.default_rng([int(k) for k in key])


class FiniteSumModel:
    """Common interface for sum-of-sums objectives.

    Subclasses implement ``client_value``, ``batch_gradient`` and
    ``smoothness``; everything else is derived.
    """

    n: int
    sizes: np.ndarray
    dim: int

    def client_value(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def batch_gradient(self, i: int, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Mean of ``grad phi_ij(x)`` over component indices ``idx`` of client ``i``."""
        raise NotImplementedError

    def smoothness(self) -> float:
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        return float(np.mean([self.client_value(i, x) for i in range(self.n)]))

    def client_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.batch_gradient(i, np.arange(self.sizes[i]), x)

    def component_gradient(self, i: int, j: int, x: np.ndarray) -> np.ndarray:
        return self.batch_gradient(i, np.array([j]), x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.mean([self.client_gradient(i, x) for i in range(self.n)], axis=0)

    def component_gradients(self, i: int, x: np.ndarray) -> np.ndarray:
        """All per-component gradients of client ``i`` stacked as ``(m_i, dim)``."""
        return np.stack([self.component_gradient(i, j, x) for j in range(self.sizes[i])])


# ---------------------------------------------------------------------------
# synthetic quadratics


class SyntheticQuadratic(FiniteSumModel):
    """``phi_ij(x) = 0.5 x'A_ij x - b_ij'x + c_ij`` with PSD ``A_ij``.

    ``mats[i]`` has shape ``(m_i, d, d)`` and ``offsets[i]`` shape ``(m_i, d)``.
    """

    def __init__(self, mats: Sequence[np.ndarray], offsets: Sequence[np.ndarray], consts=None):
        if len(mats) != len(offsets) or not mats:
            raise ConfigurationError("need one matrix stack and one offset stack per client")
        self.mats = [np.asarray(A, dtype=float) for A in mats]
        self.offsets = [np.asarray(b, dtype=float) for b in offsets]
        self.n = len(self.mats)
        self.dim = self.mats[0].shape[-1]
        self.sizes = np.array([A.shape[0] for A in self.mats])
        if consts is None:
            consts = [np.zeros(m) for m in self.sizes]
        self.consts = [np.asarray(c, dtype=float) for c in consts]
        for A in self.mats:
            if not np.allclose(A, np.swapaxes(A, -1, -2)):
                raise DomainError("component matrices must be symmetric")
            if np.linalg.eigvalsh(A).min() < -1e-12:
                raise DomainError("component matrices must be positive semidefinite")
        self._client_mats = [A.mean(axis=0) for A in self.mats]
        self._client_offsets = [b.mean(axis=0) for b in self.offsets]
        self._global_mat = np.mean(self._client_mats, axis=0)
        self._global_offset = np.mean(self._client_offsets, axis=0)

    # construction helpers -------------------------------------------------

    @classmethod
    def random(
        cls,
        n: int,
        dim: int,
        m: int | Sequence[int],
        seed: int,
        *,
        scale_spread: float = 1.0,
        offset_spread: float = 1.0,
        client_shift: float = 1.0,
        rank: int | None = None,
    ) -> "SyntheticQuadratic":
        """Heterogeneous random instance; ``client_shift`` controls drift between clients."""
        rng = np.random.default_rng(seed)
        sizes = [m] * n if np.isscalar(m) else list(m)
        rank = rank or dim
        mats, offsets = [], []
        for i in range(n):
            center = client_shift * rng.normal(size=dim)
            comps = []
            for _ in range(sizes[i]):
                G = rng.normal(size=(dim, rank)) / np.sqrt(rank)
                comps.append(G @ G.T * (1.0 + scale_spread * rng.random()) + 0.1 * np.eye(dim))
            mats.append(np.stack(comps))
            offsets.append(center + offset_spread * rng.normal(size=(sizes[i], dim)))
        return cls(mats, offsets)

    @classmethod
    def symmetric(cls, n: int, dim: int, m: int, seed: int) -> "SyntheticQuadratic":
        """Identical clients: every client carries the same component list."""
        base = cls.random(1, dim, m, seed)
        return cls([base.mats[0].copy() for _ in range(n)], [base.offsets[0].copy() for _ in range(n)])

    # oracle ---------------------------------------------------------------

    def client_value(self, i, x):
        x = np.asarray(x, dtype=float)
        A, b, c = self._client_mats[i], self._client_offsets[i], self.consts[i].mean()
        return float(0.5 * x @ A @ x - b @ x + c)

    def component_value(self, i, j, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.mats[i][j] @ x - self.offsets[i][j] @ x + self.consts[i][j])

    def batch_gradient(self, i, idx, x):
        idx = np.asarray(idx)
        A = self.mats[i][idx].mean(axis=0)
        return A @ x - self.offsets[i][idx].mean(axis=0)

    def client_gradient(self, i, x):
        return self._client_mats[i] @ x - self._client_offsets[i]

    def component_gradients(self, i, x):
        return np.einsum("jkl,l->jk", self.mats[i], x) - self.offsets[i]

    def gradient(self, x):
        return self._global_mat @ x - self._global_offset

    # exact constants ------------------------------------------------------

    def smoothness(self) -> float:
        return float(max(np.linalg.eigvalsh(A).max() for A in self.mats))

    def x_star(self) -> np.ndarray:
        return np.linalg.solve(self._global_mat, self._global_offset)

    def hessian_dissimilarity(self) -> float:
        """``max_i ||grad^2 F_i - grad^2 F||`` (the Hessian Lipschitz constant is 0)."""
        return float(max(np.linalg.norm(A - self._global_mat, 2) for A in self._client_mats))

    def variance_sup(self, i: int, center: np.ndarray, radius: float) -> float:
        """Exact ``sup_{||x - center|| <= radius} (1/m_i) sum_j ||grad phi_ij - grad F_i||^2``.

        The variance is a convex quadratic in ``x``; its maximum over a ball
        lies on the sphere and is found from the trust-region secular equation.
        """
        D = self.mats[i] - self._client_mats[i]
        e = np.einsum("jkl,l->jk", D, center) - (self.offsets[i] - self._client_offsets[i])
        m = D.shape[0]
        P = np.einsum("jkl,jkn->ln", D, D) / m
        q = np.einsum("jkl,jk->l", D, e) / m
        r = float(np.einsum("jk,jk->", e, e) / m)
        return _max_quadratic_on_ball(P, q, r, radius)


def _max_quadratic_on_ball(P: np.ndarray, q: np.ndarray, r: float, radius: float) -> float:
    """``max_{||y|| <= radius} y'Py + 2 q'y + r`` for symmetric PSD ``P``."""
    lam, V = np.linalg.eigh(P)
    qt = V.T @ q
    lam_max = lam[-1]
    if radius == 0:
        return r
    scale = max(abs(lam_max), 1.0)
    top = lam >= lam_max - 1e-12 * scale
    rest = ~top

    def value(y_t):
        return float(np.sum(lam * y_t**2) + 2.0 * qt @ y_t + r)

    q_top = np.linalg.norm(qt[top])
    if q_top <= 1e-14 * max(np.linalg.norm(qt), 1.0):
        # possible hard case: try sigma = lam_max
        y_t = np.zeros_like(qt)
        gap = lam_max - lam[rest]
        y_t[rest] = qt[rest] / gap
        norm_rest = np.linalg.norm(y_t)
        if norm_rest <= radius:
            tau = np.sqrt(radius**2 - norm_rest**2)
            y_t[np.flatnonzero(top)[0]] = tau
            return value(y_t)

    def secular(sigma):
        return np.sum(qt**2 / (sigma - lam) ** 2) - radius**2

    lo = lam_max + 1e-15 * scale
    while secular(lo) < 0:
        lo = lam_max + (lo - lam_max) * 1e-3
        if lo - lam_max < 1e-300:
            break
    hi = lam_max + np.linalg.norm(qt) / radius + 1e-15 * scale
    sigma = optimize.brentq(secular, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    y_t = qt / (sigma - lam)
    y_t *= radius / np.linalg.norm(y_t)
    return value(y_t)


# ---------------------------------------------------------------------------
# softmax classifier


class SoftmaxLinearModel(FiniteSumModel):
    """Linear softmax model with l2-regularized cross-entropy.

    ``features`` already carries the bias column. Parameters are a
    ``(dim_features, n_classes)`` matrix flattened row-major. Each component
    ``phi_ij`` is one example's cross-entropy plus ``l2_reg/2 ||W||^2``, so
    the objective is the mean over clients of per-client mean losses.
    """

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        n_classes: int,
        l2_reg: float,
        client_indices: Sequence[np.ndarray] | None = None,
    ):
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n_classes = int(n_classes)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= n_classes):
            raise DomainError(f"labels must lie in [0, {n_classes})")
        if l2_reg < 0:
            raise DomainError("l2_reg must be nonnegative")
        self.l2_reg = float(l2_reg)
        N = self.features.shape[0]
        if client_indices is None:
            client_indices = [np.arange(N)]
        self.client_indices = [np.asarray(ix, dtype=np.int64) for ix in client_indices]
        if any(ix.size == 0 for ix in self.client_indices):
            raise ConfigurationError("every client needs at least one example")
        self.n = len(self.client_indices)
        self.sizes = np.array([ix.size for ix in self.client_indices])
        self.n_features = self.features.shape[1]
        self.dim = self.n_features * self.n_classes

    def _W(self, x):
        return np.asarray(x, dtype=float).reshape(self.n_features, self.n_classes)

    def _loss_grad(self, rows: np.ndarray, x: np.ndarray, need_grad=True):
        W = self._W(x)
        X = self.features[rows]
        y = self.labels[rows]
        logits = X @ W
        logits -= logits.max(axis=1, keepdims=True)
        expz = np.exp(logits)
        norm = expz.sum(axis=1, keepdims=True)
        logp = logits - np.log(norm)
        loss = -logp[np.arange(rows.size), y].mean() + 0.5 * self.l2_reg * np.sum(W * W)
        if not need_grad:
            return float(loss), None
        P = expz / norm
        P[np.arange(rows.size), y] -= 1.0
        G = X.T @ P / rows.size + self.l2_reg * W
        return float(loss), G.ravel()

    def client_value(self, i, x):
        return self._loss_grad(self.client_indices[i], x, need_grad=False)[0]

    def batch_gradient(self, i, idx, x):
        return self._loss_grad(self.client_indices[i][np.asarray(idx)], x)[1]

    def client_gradient(self, i, x):
        return self._loss_grad(self.client_indices[i], x)[1]

    def value_and_gradient(self, x):
        vals, grads = zip(*(self._loss_grad(ix, x) for ix in self.client_indices))
        return float(np.mean(vals)), np.mean(grads, axis=0)

    def component_gradients(self, i, x):
        rows = self.client_indices[i]
        W = self._W(x)
        X = self.features[rows]
        logits = X @ W
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        P[np.arange(rows.size), self.labels[rows]] -= 1.0
        G = X[:, :, None] * P[:, None, :] + self.l2_reg * W[None]
        return G.reshape(rows.size, -1)

    def accuracy(self, x, features=None, labels=None) -> float:
        features = self.features if features is None else features
        labels = self.labels if labels is None else labels
        if len(labels) == 0:
            return float("nan")
        pred = np.argmax(np.asarray(features) @ self._W(x), axis=1)
        return float(np.mean(pred == np.asarray(labels)))

    def _design_operator(self):
        """``v -> (1/n) sum_i X_i'X_i v / m_i``."""

        def apply(v):
            out = np.zeros_like(v)
            for ix in self.client_indices:
                X = self.features[ix]
                out += X.T @ (X @ v) / ix.size
            return out / self.n

        return apply

    def smoothness(self, *, tol: float = 1e-6, max_iter: int = 500, seed: int = 0) -> float:
        """``0.5 * lambda_max`` of the client-averaged second moment plus ``l2_reg``."""
        return 0.5 * power_iteration(self._design_operator(), self.n_features, tol=tol, max_iter=max_iter, seed=seed) + self.l2_reg

    def component_smoothness(self) -> float:
        """Per-example bound ``0.5 max_j ||x_j||^2 + l2_reg`` (valid for every ``phi_ij``)."""
        rows = np.concatenate(self.client_indices)
        return 0.5 * float(np.max(np.sum(self.features[rows] ** 2, axis=1))) + self.l2_reg


def power_iteration(apply, dim: int, *, tol: float = 1e-6, max_iter: int = 500, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD operator given as a matvec."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = apply(v)
        new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        if abs(new - estimate) <= tol * max(abs(new), 1e-300):
            return new
        estimate = new
    warnings.warn(f"power iteration did not reach tol={tol} in {max_iter} iterations", RuntimeWarning)
    return estimate


def estimate_smoothness(model: FiniteSumModel, **kwargs) -> float:
    L = model.smoothness(**kwargs)
    log.info("smoothness estimate L=%.6g", L)
    return L


# ---------------------------------------------------------------------------
# minibatch oracle


@dataclass(frozen=True)
class MinibatchOracle:
    """Minibatch gradients of one client, keyed by ``(seed, client, round, step)``."""

    model: FiniteSumModel
    client: int
    batch_size: int
    seed: int = 0

    def __post_init__(self):
        m = int(self.model.sizes[self.client])
        if not 1 <= self.batch_size <= m:
            raise ConfigurationError(f"batch size {self.batch_size} invalid for client {self.client} with {m} components")

    def draw(self, round_index: int = 0, step: int = 0) -> np.ndarray:
        m = int(self.model.sizes[self.client])
        rng = stream_rng(self.seed, self.client, round_index, step)
        return rng.choice(m, size=self.batch_size, replace=False)

    def gradient(self, x: np.ndarray, round_index: int = 0, step: int = 0) -> np.ndarray:
        if self.batch_size == self.model.sizes[self.client]:
            return self.model.client_gradient(self.client, x)
        return self.model.batch_gradient(self.client, self.draw(round_index, step), x)


def minibatch_gradient(oracle: MinibatchOracle, x: np.ndarray, round_index: int = 0, step: int = 0) -> np.ndarray:
    return oracle.gradient(x, round_index, step)


# ---------------------------------------------------------------------------
# variance proxies and reference optimum


@dataclass
class BallSpec:
    x_star_ref: np.ndarray
    R: float
    L_hat: float
    F_star_ref: float
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def bar_f(self) -> float:
        return 0.5 * self.L_hat * self.R**2


def estimate_variance_proxy(
    model: FiniteSumModel,
    i: int,
    x_probe: np.ndarray,
    k: int,
    *,
    seed: int = 0,
    inflation: float = VARIANCE_INFLATION,
    ball: BallSpec | None = None,
) -> float:
    """Inflated empirical component-gradient variance of client ``i`` at ``x_probe``.

    For a :class:`SyntheticQuadratic` with a ``ball`` the exact supremum over
    the ball is returned and no estimation takes place.
    """
    if k < 2:
        raise ConfigurationError("variance proxy needs k >= 2 samples")
    if ball is not None and isinstance(model, SyntheticQuadratic):
        return model.variance_sup(i, ball.x_star_ref, ball.R)
    m = int(model.sizes[i])
    if k >= m:
        idx = np.arange(m)
    else:
        idx = np.random.default_rng([seed, i]).choice(m, size=k, replace=False)
    grads = np.stack([model.component_gradient(i, int(j), x_probe) for j in idx])
    dev = grads - grads.mean(axis=0)
    var = float(np.sum(dev * dev) / max(len(idx) - 1, 1))
    return inflation * var


def compute_reference_optimum(
    model: FiniteSumModel,
    x0: np.ndarray | None = None,
    *,
    tol: float | None = None,
    max_iter: int = 1_000_000,
    radius_factor: float = 2.0,
    method: str = "gd",
    L_hat: float | None = None,
    record_history: bool = False,
) -> BallSpec:
    """Centralized reference solve giving ``F_star_ref``, ``x_star_ref`` and ``R``.

    ``method="gd"`` runs full-gradient descent with step ``1/L_hat``;
    ``method="lbfgs"`` uses scipy's L-BFGS-B with the same stopping rule,
    which is the practical choice for the data models.
    """
    if tol is None:
        tol = 1e-8 if isinstance(model, SyntheticQuadratic) else 1e-6
    L = float(L_hat if L_hat is not None else model.smoothness())
    x = np.zeros(model.dim) if x0 is None else np.array(x0, dtype=float)
    start = x.copy()
    history: list[float] = []

    def fg(z):
        if hasattr(model, "value_and_gradient"):
            return model.value_and_gradient(z)
        return model.value(z), model.gradient(z)

    converged = False
    it = 0
    if method == "gd":
        val, g = fg(x)
        best = (val, x.copy(), float(np.linalg.norm(g)))
        while it < max_iter:
            gn = float(np.linalg.norm(g))
            if record_history:
                history.append(val)
            if gn <= tol:
                converged = True
                break
            x = x - g / L
            val, g = fg(x)
            it += 1
            if val < best[0]:
                best = (val, x.copy(), float(np.linalg.norm(g)))
        if not converged:
            log.warning("reference solve hit the iteration cap (%d); returning best iterate", max_iter)
            val, x, gn = best
        else:
            gn = float(np.linalg.norm(g))
    elif method == "lbfgs":
        res = optimize.minimize(
            fg, x, jac=True, method="L-BFGS-B",
            options={"maxiter": max_iter, "gtol": tol * 1e-2, "ftol": 0.0, "maxcor": 30},
            callback=(lambda z: history.append(fg(z)[0])) if record_history else None,
        )
        x = res.x
        val, g = fg(x)
        gn = float(np.linalg.norm(g))
        it = int(res.nit)
        # polish with plain gradient steps if the quasi-Newton stop left a residual
        while gn > tol and it < max_iter:
            x = x - g / L
            val, g = fg(x)
            gn = float(np.linalg.norm(g))
            it += 1
        converged = gn <= tol
    else:
        raise ConfigurationError(f"unknown reference method {method!r}")
    R = radius_factor * float(np.linalg.norm(start - x))
    if R == 0:
        R = radius_factor * max(1.0, float(np.linalg.norm(x)))
    return BallSpec(x, R, L, float(val), converged, it, gn, history)
