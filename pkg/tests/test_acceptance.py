"""Acceptance gate: one printed PASS/FAIL line per criterion, full instance counts.

Run with ``pytest tests/test_acceptance.py -s -v`` to see the lines.
Criterion 11 needs the raw Covertype and MNIST files; point ``--data-dir``
at them (see ``hewlocal fetch-data``). Without them it reports "not run"
and exercises the same pipeline on synthetic data instead.
"""

import json
import time

import numpy as np
from oracles import grid_simplex_min

from hewlocal.experiment import ExperimentConfig, SweepGrid, run_protocol
from hewlocal.solvers import kkt_threshold_weights
from hewlocal.verify import SUITES

LIMITS = {1: 60, 2: 60, 3: 120, 5: 60, 6: 900, 7: 60, 8: 120}


def _gate(number, title, suite, extra=()):
    fn, _ = SUITES[suite]
    t0 = time.perf_counter()
    checks = fn()
    elapsed = time.perf_counter() - t0
    bad = [c for c in checks if not c.passed] + [e for e in extra if e]
    limit = LIMITS.get(number)
    slow = limit is not None and elapsed > limit
    ok = not bad and not slow
    worst = ", ".join(f"{c.name}={c.observed:.3e} (tol {c.tolerance:.1e})" for c in checks[:3])
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {title} [{elapsed:.1f}s] {worst}")
    for c in bad:
        print(f"    failing: {c}")
    if slow:
        print(f"    runtime {elapsed:.1f}s exceeds {limit}s")
    assert ok


def test_criterion_01_scalar_toolkit():
    _gate(1, "scalar toolkit on 1e4 instances", "scalar")


def test_criterion_02_semigroup():
    _gate(2, "generator-flow families", "semigroup")


def test_criterion_03_kkt_exactness():
    # The suite checks against the library's lattice search; the test oracle
    # is an independent implementation, run here on a subset.
    rng = np.random.default_rng(303)
    worst_w = worst_gap = 0.0
    for _ in range(200):
        S = int(rng.integers(1, 6))
        mu, kappa, L = rng.uniform(-1, 1, S), rng.uniform(0.5, 2, S), float(rng.uniform(0.5, 2))
        w, _ = kkt_threshold_weights(mu, kappa, L)

        def f(W):
            return -W @ mu + 0.5 * L * (W * W) @ kappa

        gw, gv = grid_simplex_min(f, S)
        worst_w = max(worst_w, float(np.max(np.abs(gw - w))))
        worst_gap = max(worst_gap, gv - float(f(w[None])[0]))
    extra = []
    if worst_w > 1e-3 or worst_gap > 1e-6:
        extra.append(f"oracle mismatch: w {worst_w:.2e}, objective {worst_gap:.2e}")
    _gate(3, "KKT threshold law vs simplex grid search", "kkt", extra)


def test_criterion_04_alternating_monotone():
    _gate(4, "alternating solver trace and uniform benchmark", "alternating")


def test_criterion_05_symmetric_degeneration():
    _gate(5, "symmetric regime equals centralized microsteps", "degeneration")


def test_criterion_06_surrogate_domination():
    _gate(6, "Monte Carlo gap and tracking under the surrogate state", "surrogate-domination")


def test_criterion_07_pl_identities():
    _gate(7, "PL identities and safe-regime floor", "pl")


def test_criterion_08_rate_envelopes():
    _gate(8, "closed-rate envelopes dominate exact iteration", "rates")


def test_criterion_09_communication():
    _gate(9, "per-round communication increments", "comm")


def test_criterion_10_postlocal_identities():
    _gate(10, "post-local, server-average and control-variate identities", "postlocal")


def _have_data(d):
    if not d:
        return False
    from pathlib import Path

    p = Path(d)
    cov = any((p / f).exists() for f in ("covtype.data.gz", "covtype.data", "covtype.csv"))
    mn = any((p / f).exists() for f in ("train-images-idx3-ubyte.gz", "train-images-idx3-ubyte"))
    return cov and mn


def test_criterion_11_protocol_report(request, tmp_path):
    """Non-gating: the observation is recorded, never asserted."""
    data_dir = request.config.getoption("--data-dir")
    t0 = time.perf_counter()
    if _have_data(data_dir):
        base = ExperimentConfig(data_dir=data_dir)
        rep = run_protocol(base, out_dir=tmp_path / "protocol")
        elapsed = time.perf_counter() - t0
        obs = rep["observation"]
        print(f"\nREPORT criterion 11: protocol finished in {elapsed / 60:.1f} min (limit 120), status {obs['status']}, seeds {obs['seeds']}")
        print(json.dumps(rep["pairs"].get("covertype/hom_random", {}).get("hew_vs_fixed", {}), sort_keys=True))
        assert not rep["failed"]
        return
    base = ExperimentConfig(dataset="synthetic", synthetic_N=400, synthetic_d=6, synthetic_classes=3, n_clients=8, rounds=4, seeds=[42, 43], batch=8)
    grid = SweepGrid(vartheta=(0.5, 1.0), lambda_ratio=(1.5,), lr_scale=(0.4,), prox_mu=(0.01,), rounds=2, n_seeds=1)
    rep = run_protocol(base, ("synthetic",), grid=grid, out_dir=tmp_path / "protocol")
    svgs = sorted(p.name for p in (tmp_path / "protocol").rglob("*.svg"))
    elapsed = time.perf_counter() - t0
    print(f"\nREPORT criterion 11: not run (Covertype/MNIST files absent; pass --data-dir). "
          f"Synthetic pipeline stand-in: {len(rep['pairs'])} regimes, {len(svgs)} SVGs, {elapsed:.1f}s, status {rep['observation']['status']}")
    assert not rep["failed"] and "weight_mass.svg" in svgs
