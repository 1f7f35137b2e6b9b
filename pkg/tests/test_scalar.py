import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from hewlocal.errors import DomainError, PreconditionError
from hewlocal.scalar import (
    Exponential,
    PowerLaw,
    QuadLinParams,
    Quadratic,
    conjugacy_coordinate,
    cumulative_gronwall,
    flow_apply,
    linear_envelope,
    noisy_master_envelope,
    quadlin_envelope,
    slope_modulus,
    t_a_apply,
    telescope_envelope,
)

nonneg = st.floats(0, 50, allow_nan=False)


def test_t_a_examples():
    assert t_a_apply(0, 5) == 5
    assert t_a_apply(1, 1) == 0.5
    assert t_a_apply(0.7, t_a_apply(0.3, 2.0)) == pytest.approx(t_a_apply(1.0, 2.0), abs=1e-15)


def test_t_a_rejects_negative():
    with pytest.raises(DomainError):
        t_a_apply(-1, 1)
    with pytest.raises(DomainError):
        t_a_apply(1, -0.1)


@given(nonneg, nonneg, nonneg)
def test_t_a_bounds_and_lipschitz(a, u, v):
    tu = t_a_apply(a, u)
    assert u - a * u * u <= tu + 1e-12 * (1 + a * u * u)
    assert tu <= u
    assert abs(tu - t_a_apply(a, v)) <= abs(u - v) + 1e-12


def test_telescope_examples():
    assert telescope_envelope(1.0, [(0, 0), (0, 0)]) == 1.0
    assert telescope_envelope(1.0, [(1, 0), (1, 0)]) == pytest.approx(1 / 3)
    steps = [(0.5, 0.1), (0.25, 0.2)]
    env = telescope_envelope(2.0, steps)
    assert env == pytest.approx(1.1)
    z = 2.0
    for a, b in steps:
        z = t_a_apply(a, z) + b
    assert z <= env


def test_quadlin_examples():
    p = QuadLinParams(1, 0, 0, 0)
    assert quadlin_envelope(p, 1.0, 1) == 0.5
    p = QuadLinParams.with_root(0.2, 0.05, 0.01)
    assert quadlin_envelope(p, p.m, 10) == p.m
    x = 3.0
    # x0 = 3 is above the safe region of the raw recursion only if 2ax > 1+beta;
    # the envelope still dominates iterates started at any x0 once safe_ok holds.
    for t in range(101):
        assert x <= quadlin_envelope(p, 3.0, t) * (1 + 1e-12)
        x = x - p.a * x * x + p.beta * x + p.delta


def test_quadlin_precondition_names_inequality():
    with pytest.raises(PreconditionError, match="a\\*m\\^2"):
        quadlin_envelope(QuadLinParams(1.0, 0.0, 1.0, 0.1), 1.0, 2)
    with pytest.raises(PreconditionError, match="2\\*a\\*m"):
        quadlin_envelope(QuadLinParams(1.0, 0.0, 0.0, 5.0), 1.0, 2)


def test_linear_examples():
    assert linear_envelope(1, 0, 0, 7, 1) == 0
    assert linear_envelope(0.5, 0.1, 0.2, 1.2, 2) == pytest.approx(0.45)
    with pytest.raises(PreconditionError):
        linear_envelope(0.5, 0.1, 0.1, 1.0, 3)


def test_gronwall():
    np.testing.assert_allclose(cumulative_gronwall([2.0] * 4, 0.0), 2.0)
    assert cumulative_gronwall([1.0] * 4, 1.0)[3] == 8.0
    with pytest.raises(DomainError):
        cumulative_gronwall([2.0, 1.0], 0.5)
    rng = np.random.default_rng(1)
    for _ in range(200):
        a = np.cumsum(rng.random(30))
        beta = rng.random()
        x = np.empty_like(a)
        for l in range(a.size):
            x[l] = a[l] + beta * x[:l].sum()
        assert np.all(x <= cumulative_gronwall(a, beta) * (1 + 1e-12))


def test_flow_examples():
    assert flow_apply(Quadratic(1), 2, 3) == pytest.approx(3 / 7, abs=1e-15)
    assert flow_apply(Exponential(math.log(2)), 1, 4) == pytest.approx(2.0, abs=1e-14)
    assert flow_apply(PowerLaw(1, 1), 2, 3) == pytest.approx(3 / 7, abs=1e-15)


def test_quadratic_family_equals_t_a_exactly():
    rng = np.random.default_rng(3)
    a, s = rng.random(1000) * 10, rng.random(1000) * 10
    assert np.array_equal(flow_apply(Quadratic(1.0), a, s), t_a_apply(a, s))


def test_slope_examples():
    assert slope_modulus(Quadratic(1), 1, 0) == 1
    assert slope_modulus(Quadratic(1), 1, 1) == 0.25
    assert slope_modulus(Exponential(1), 0, 5) == 1


FAMILIES = [Quadratic(1.0), Quadratic(2.5), PowerLaw(1.0, 0.5), PowerLaw(0.7, 2.0), Exponential(1.3)]


@pytest.mark.parametrize("fam", FAMILIES, ids=repr)
def test_semigroup_and_contraction(fam):
    rng = np.random.default_rng(0)
    a, b, s = rng.random((3, 2000)) * 10
    lhs = flow_apply(fam, a + b, s)
    rhs = flow_apply(fam, a, flow_apply(fam, b, s))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12
    assert np.all(lhs >= 0) and np.all(lhs <= s)


@pytest.mark.parametrize("fam", FAMILIES, ids=repr)
def test_monotone_concave(fam):
    grid = np.linspace(0, 10, 2001)
    for a in (0.1, 1.0, 5.0):
        r = flow_apply(fam, a, grid)
        assert np.all(np.diff(r) >= 0)
        assert np.max(np.diff(r, 2)) <= 1e-9


@pytest.mark.parametrize("fam", FAMILIES, ids=repr)
def test_slope_matches_derivative(fam):
    rng = np.random.default_rng(5)
    for a, m in rng.random((50, 2)) * [5, 5] + [0, 0.05]:
        h = 1e-6 * max(m, 1)
        fd = (flow_apply(fam, a, m + h) - flow_apply(fam, a, m - h)) / (2 * h)
        assert slope_modulus(fam, a, m) == pytest.approx(fd, abs=1e-6)


@pytest.mark.parametrize("fam", FAMILIES, ids=repr)
def test_conjugacy_identity_and_quadrature(fam):
    rng = np.random.default_rng(7)
    s = rng.random(500) * 10 + 0.01
    a = rng.random(500) * 10
    ref = 2.0
    lhs = conjugacy_coordinate(fam, flow_apply(fam, a, s), ref)
    assert np.max(np.abs(lhs - (conjugacy_coordinate(fam, s, ref) + a))) <= 1e-10 * max(1, np.max(np.abs(lhs)))
    for sv in (0.3, 1.0, 4.0):
        quad = integrate.quad(lambda xi: 1.0 / fam.generator(xi), sv, ref, epsabs=1e-13, epsrel=1e-13)[0]
        assert conjugacy_coordinate(fam, sv, ref) == pytest.approx(quad, rel=1e-9)


def test_conjugacy_examples():
    q = Quadratic(1)
    assert conjugacy_coordinate(q, 2.0, 2.0) == 0
    assert conjugacy_coordinate(q, flow_apply(q, 1.5, 2.0), 2.0) == pytest.approx(1.5, abs=1e-14)
    assert conjugacy_coordinate(Exponential(2), 1.0, math.e**2) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(DomainError):
        conjugacy_coordinate(q, 0.0, 1.0)


def test_noisy_master_noiseless_and_zero_excess():
    sched = [(0.2, 0, 0, 0), (0.5, 0, 0, 0), (0.3, 0, 0, 0)]
    assert noisy_master_envelope(Quadratic(1), sched, 0.0, 3.0) == pytest.approx(flow_apply(Quadratic(1), 1.0, 3.0))
    fam = Exponential(1.0)
    sched = [(0.5, 0.1, 0.05, 0.0)] * 4
    m = 1.0
    assert noisy_master_envelope(fam, sched, m, m) == m


def test_noisy_master_names_index():
    fam = Exponential(0.1)
    sched = [(1.0, 0.0, 0.0, 0.001), (0.0, 0.0, 0.0, 0.0)]
    with pytest.raises(PreconditionError, match="1"):
        noisy_master_envelope(fam, sched, 1.0, 2.0)


@pytest.mark.parametrize("fam", FAMILIES, ids=repr)
def test_noisy_master_dominates_iteration(fam):
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(300):
        T = rng.integers(1, 40)
        a = rng.random(T) * 2 + 0.05
        b = rng.random(T) * 0.1
        d = rng.random(T) * 0.05
        e = rng.random(T) * 0.05
        m = 1.0 + 3 * rng.random()
        # keep only entries satisfying the floor condition at m
        g = np.array([flow_apply(fam, ai, m) for ai in a]) + b * m + d + e
        ok = (g <= m) & (np.array([slope_modulus(fam, ai, m) for ai in a]) + b < 1)
        if not ok.all():
            continue
        checked += 1
        S0 = 10 * rng.random()
        env = noisy_master_envelope(fam, list(zip(a, b, d, e)), m, S0)
        S = S0
        for t in range(T):
            S = flow_apply(fam, a[t], S) + b[t] * S + d[t] + e[t]
        assert S <= env * (1 + 1e-12)
    assert checked > 20


@settings(max_examples=300)
@given(
    st.floats(1e-3, 2), st.floats(0, 0.5), st.floats(0, 1), st.floats(0, 20), st.integers(0, 200)
)
def test_quadlin_dominates(a, beta, delta, x0, T):
    p = QuadLinParams.with_root(a, beta, delta)
    if not p.safe_ok or 2 * a * x0 > 1 + beta:
        return
    x = x0
    for t in range(T + 1):
        assert x <= quadlin_envelope(p, x0, t) * (1 + 1e-12) + 1e-15
        x = x - a * x * x + beta * x + delta


@settings(max_examples=300)
@given(st.floats(1e-3, 1), st.floats(0, 1), st.floats(0, 20), st.integers(0, 1000))
def test_linear_dominates(a, delta, x0, T):
    m = delta / a
    x = x0
    for t in range(min(T, 200) + 1):
        assert x <= linear_envelope(a, delta, m, x0, t) * (1 + 1e-12) + 1e-15
        x = (1 - a) * x + delta
