"""Independent reference computations used only by the tests."""

import itertools

import mpmath
import numpy as np

mpmath.mp.dps = 50


def mp_rows(theta, U, Q, H, b, v2, L, R):
    """Certificate row re-derived in 50-digit arithmetic."""
    th, U, Q, H, b, v2, L, R = (mpmath.mpf(float(z)) for z in (theta, U, Q, H, b, v2, L, R))
    fbar = L * R**2 / 2
    Us = min(U, fbar)
    A = th / (2 * L * R**2)
    s = Us - Us / (1 + A * Us)
    e = mpmath.exp(2 * th)
    rho = 32 * e * th**3 * U + (16 * th + 64 * e * th**3) / L * Q + 8 * e * th**3 * v2 / (L * H * b)
    kappa = 16 * e * th**4 / L * U + 32 * e * th**4 / L**2 * Q + (2 * th**2 + 4 * e * th**4) * v2 / (L**2 * H * b)
    return A, s, rho, kappa, s - rho


def _lattice(center, step, radius, S):
    """Simplex lattice points within ``radius`` steps of ``center`` (first S-1 free coords)."""
    if center is None:
        k = int(round(1 / step))
        pts = [c for c in itertools.product(range(k + 1), repeat=S - 1) if sum(c) <= k]
        head = np.array(pts, dtype=float) * step
    else:
        offs = np.array(list(itertools.product(range(-radius, radius + 1), repeat=S - 1)), dtype=float) * step
        head = center[: S - 1] + offs
        head = head[np.all(head >= -1e-15, axis=1)]
        head = np.clip(head, 0, None)
    last = 1.0 - head.sum(axis=1)
    keep = last >= -1e-12
    return np.column_stack([head[keep], np.clip(last[keep], 0, None)])


def grid_simplex_min(f, S, steps=(0.05, 0.01, 1e-3, 1e-4), radius=2):
    """Pattern search over nested simplex lattices; ``f`` maps ``(N, S)`` to ``(N,)``."""
    if S == 1:
        w = np.ones((1, 1))
        return w[0], float(f(w)[0])
    pts = _lattice(None, steps[0], radius, S)
    vals = f(pts)
    best = pts[np.argmin(vals)]
    best_val = vals.min()
    for step in steps[1:]:
        while True:
            pts = _lattice(best, step, radius, S)
            vals = f(pts)
            i = np.argmin(vals)
            if vals[i] < best_val - 1e-15:
                best, best_val = pts[i], vals[i]
            else:
                break
    return best, float(best_val)


def iterate_quadlin(a, beta, delta, x0, T):
    xs = [x0]
    for _ in range(T):
        x = xs[-1]
        xs.append(x - a * x * x + beta * x + delta)
    return np.array(xs)
