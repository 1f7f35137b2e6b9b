import numpy as np
import pytest
from scipy import optimize

from hewlocal.errors import ConfigurationError, DomainError
from hewlocal.models import (
    MinibatchOracle,
    SoftmaxLinearModel,
    SyntheticQuadratic,
    compute_reference_optimum,
    estimate_smoothness,
    estimate_variance_proxy,
    minibatch_gradient,
)


@pytest.fixture(scope="module")
def quad():
    return SyntheticQuadratic.random(4, 5, [6, 7, 8, 9], seed=3)


@pytest.fixture(scope="module")
def softmax():
    rng = np.random.default_rng(0)
    X = np.hstack([rng.normal(size=(120, 4)), np.ones((120, 1))])
    y = rng.integers(0, 3, 120)
    parts = np.array_split(rng.permutation(120), 4)
    return SoftmaxLinearModel(X, y, 3, 1e-2, parts)


def _models(quad, softmax):
    return [quad, softmax]


def test_value_and_gradient_consistency(quad, softmax):
    rng = np.random.default_rng(1)
    for model in _models(quad, softmax):
        x = rng.normal(size=model.dim)
        vals = [model.client_value(i, x) for i in range(model.n)]
        assert model.value(x) == pytest.approx(np.mean(vals), rel=1e-10)
        for i in range(model.n):
            comp = np.mean([model.component_gradient(i, j, x) for j in range(model.sizes[i])], axis=0)
            np.testing.assert_allclose(model.client_gradient(i, x), comp, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(model.component_gradients(i, x).mean(axis=0), comp, rtol=1e-10, atol=1e-12)


def test_gradient_finite_differences(quad, softmax):
    rng = np.random.default_rng(2)
    h = 1e-5
    for model in _models(quad, softmax):
        for _ in range(100):
            x = rng.normal(size=model.dim)
            u = rng.normal(size=model.dim)
            u /= np.linalg.norm(u)
            fd = (model.value(x + h * u) - model.value(x - h * u)) / (2 * h)
            an = model.gradient(x) @ u
            assert an == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_quadratic_exact_constants(quad):
    x_star = quad.x_star()
    assert np.linalg.norm(quad.gradient(x_star)) <= 1e-10
    L = quad.smoothness()
    for A in quad.mats:
        assert L >= np.linalg.norm(A, axis=(1, 2), ord=2).max() - 1e-12
    single = SyntheticQuadratic([np.eye(3)[None]], [np.zeros((1, 3))])
    assert estimate_smoothness(single) == 1.0


def test_smoothness_certificate(quad, softmax):
    rng = np.random.default_rng(4)
    for model, L in ((quad, quad.smoothness()), (softmax, softmax.component_smoothness())):
        for _ in range(200):
            i = rng.integers(model.n)
            j = rng.integers(model.sizes[i])
            x, y = rng.normal(size=(2, model.dim))
            gx = model.component_gradient(i, j, x)
            gy = model.component_gradient(i, j, y)
            assert np.linalg.norm(gx - gy) <= L * np.linalg.norm(x - y) * (1 + 1e-6)


def test_softmax_average_smoothness_bounds_full_gradient(softmax):
    rng = np.random.default_rng(5)
    L = softmax.smoothness()
    for _ in range(200):
        x, y = rng.normal(size=(2, softmax.dim)) * 3
        assert np.linalg.norm(softmax.gradient(x) - softmax.gradient(y)) <= L * np.linalg.norm(x - y) * (1 + 1e-6)


def test_softmax_smoothness_closed_form():
    m = SoftmaxLinearModel(np.array([[1.0, 0.0]]), np.array([0]), 2, 0.0)
    assert m.smoothness() == pytest.approx(0.5, rel=1e-9)


def test_softmax_smoothness_vs_dense_eigensolver(softmax):
    X = softmax.features
    M = sum(X[ix].T @ X[ix] / ix.size for ix in softmax.client_indices) / softmax.n
    dense = 0.5 * np.linalg.eigvalsh(M).max() + softmax.l2_reg
    assert softmax.smoothness(seed=0) == pytest.approx(dense, rel=1e-4)
    assert softmax.smoothness(seed=1) == pytest.approx(softmax.smoothness(seed=2), rel=1e-4)


def test_softmax_rejects_bad_labels():
    with pytest.raises(DomainError):
        SoftmaxLinearModel(np.ones((2, 2)), np.array([0, 3]), 3, 0.0)


def test_convexity_probe(quad, softmax):
    rng = np.random.default_rng(6)
    for _ in range(100):
        x, y = rng.normal(size=(2, quad.dim))
        i, j = 0, int(rng.integers(quad.sizes[0]))
        mid = quad.component_value(i, j, (x + y) / 2)
        assert mid <= 0.5 * quad.component_value(i, j, x) + 0.5 * quad.component_value(i, j, y) + 1e-10
        x, y = rng.normal(size=(2, softmax.dim))
        assert softmax.value((x + y) / 2) <= 0.5 * softmax.value(x) + 0.5 * softmax.value(y) + 1e-10


def test_minibatch_full_batch_and_determinism(quad):
    x = np.arange(quad.dim, dtype=float)
    full = MinibatchOracle(quad, 1, int(quad.sizes[1]), seed=0)
    assert np.array_equal(minibatch_gradient(full, x), quad.client_gradient(1, x))
    o = MinibatchOracle(quad, 1, 3, seed=9)
    assert np.array_equal(o.gradient(x, 4, 2), MinibatchOracle(quad, 1, 3, seed=9).gradient(x, 4, 2))
    with pytest.raises(ConfigurationError):
        MinibatchOracle(quad, 1, 100)


def test_minibatch_unbiased(quad):
    x = np.ones(quad.dim)
    o = MinibatchOracle(quad, 2, 3, seed=1)
    K = 100_000
    m = int(quad.sizes[2])
    rng = np.random.default_rng(0)
    # vectorized equivalent of K draws: mean over component gradients of sampled subsets
    comps = quad.component_gradients(2, x)
    idx = np.argsort(rng.random((K, m)), axis=1)[:, :3]
    draws = comps[idx].mean(axis=1)
    target = quad.client_gradient(2, x)
    se = draws.std(axis=0) / np.sqrt(K)
    assert np.all(np.abs(draws.mean(axis=0) - target) < 3 * se + 1e-12)
    # and the oracle's own draws agree on a smaller budget
    own = np.mean([o.gradient(x, r, 0) for r in range(4000)], axis=0)
    assert np.all(np.abs(own - target) < 4 * draws.std(axis=0) / np.sqrt(4000) + 1e-12)


def test_variance_proxy(quad, softmax):
    same = SyntheticQuadratic([np.stack([np.eye(2)] * 5)], [np.ones((5, 2))])
    assert estimate_variance_proxy(same, 0, np.zeros(2), 5) == 0
    with pytest.raises(ConfigurationError):
        estimate_variance_proxy(quad, 0, np.zeros(quad.dim), 1)
    x = np.zeros(softmax.dim)
    small = estimate_variance_proxy(softmax, 0, x, 20, seed=1)
    full = estimate_variance_proxy(softmax, 0, x, 10_000)
    assert small == pytest.approx(full, rel=0.5)


def test_variance_sup_exact_vs_sampling(quad):
    x_star = quad.x_star()
    R = 1.7
    rng = np.random.default_rng(8)
    for i in range(quad.n):
        exact = quad.variance_sup(i, x_star, R)
        dirs = rng.normal(size=(20000, quad.dim))
        dirs *= R / np.linalg.norm(dirs, axis=1, keepdims=True)
        comps = np.einsum("jkl,nl->njk", quad.mats[i], x_star + dirs) - quad.offsets[i]
        var = np.mean(np.sum((comps - comps.mean(axis=1, keepdims=True)) ** 2, axis=2), axis=1)
        assert var.max() <= exact * (1 + 1e-10)
        # independent constrained optimizer from the best sampled start
        y0 = dirs[np.argmax(var)]

        def neg(y):
            c = np.einsum("jkl,l->jk", quad.mats[i], x_star + y) - quad.offsets[i]
            return -np.mean(np.sum((c - c.mean(axis=0)) ** 2, axis=1))

        res = optimize.minimize(neg, y0, constraints=[{"type": "ineq", "fun": lambda y: R**2 - y @ y}], method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        assert -res.fun <= exact * (1 + 1e-8)
        assert -res.fun >= exact * (1 - 1e-6)


def test_variance_sup_hard_case():
    # P has a top eigenvector orthogonal to q: the maximizer is on the hard-case branch
    A1 = np.diag([2.0, 0.0])
    A2 = np.diag([0.0, 0.0])
    b = np.array([[0.0, 1.0], [0.0, -1.0]])
    model = SyntheticQuadratic([np.stack([A1, A2])], [b])
    R = 3.0
    ys = np.stack([R * np.cos(t) * np.array([1, 0]) + R * np.sin(t) * np.array([0, 1]) for t in np.linspace(0, 2 * np.pi, 100001)])
    c = np.einsum("jkl,nl->njk", model.mats[0], ys) - model.offsets[0]
    var = np.mean(np.sum((c - c.mean(axis=1, keepdims=True)) ** 2, axis=2), axis=1)
    assert model.variance_sup(0, np.zeros(2), R) == pytest.approx(var.max(), rel=1e-8)


def test_reference_optimum_synthetic(quad):
    ball = compute_reference_optimum(quad, np.zeros(quad.dim), record_history=True)
    assert ball.converged
    np.testing.assert_allclose(ball.x_star_ref, quad.x_star(), atol=1e-7)
    assert ball.R == pytest.approx(2 * np.linalg.norm(quad.x_star()), rel=1e-6)
    assert np.all(np.diff(ball.history) <= 1e-12)
    rng = np.random.default_rng(9)
    for _ in range(100):
        u = rng.normal(size=quad.dim)
        x = ball.x_star_ref + ball.R * rng.random() * u / np.linalg.norm(u)
        gap = quad.value(x) - ball.F_star_ref
        assert -1e-10 <= gap <= ball.L_hat * ball.R**2 / 2 + 1e-8


def test_reference_optimum_zero_data_softmax():
    m = SoftmaxLinearModel(np.zeros((10, 3)), np.arange(10) % 2, 2, 0.5)
    ball = compute_reference_optimum(m, np.ones(m.dim))
    np.testing.assert_allclose(ball.x_star_ref, 0, atol=1e-6)


def test_reference_optimum_two_starts(softmax):
    a = compute_reference_optimum(softmax, np.zeros(softmax.dim), method="lbfgs")
    b = compute_reference_optimum(softmax, np.ones(softmax.dim), method="lbfgs")
    assert a.converged and b.converged
    assert a.F_star_ref == pytest.approx(b.F_star_ref, abs=1e-5)
    g = compute_reference_optimum(softmax, np.zeros(softmax.dim), method="gd", record_history=True)
    assert np.all(np.diff(g.history) <= 1e-12)
    assert g.F_star_ref == pytest.approx(a.F_star_ref, abs=1e-5)
