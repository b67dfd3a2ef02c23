"""Slow, loop-based reference implementations used as independent oracles."""

import numpy as np


def _mm(a, b, c):
    if a > 0 and b > 0 and c > 0:
        return min(a, b, c)
    if a < 0 and b < 0 and c < 0:
        return max(a, b, c)
    return 0.0


def freezing_terms(u, grid, nu, p, a, theta, a_bound):
    """``(H0, H1, Pv)`` by direct face loops over the flux definitions."""
    u = np.asarray(u, dtype=float).reshape(grid.shape)
    d = grid.dim
    H0 = np.zeros(grid.shape)
    H1 = np.zeros(grid.shape + (d + 1,))
    Pv = np.zeros(grid.shape)
    for k in np.ndindex(*grid.shape):
        H1[k + (0,)] -= (1 - d * (p - 1)) * u[k]
    for j in range(d):
        m = grid.shape[j]
        dx = grid.dx[j]
        faces = grid.faces(j)
        for k in np.ndindex(*grid.shape):
            if k[j] != 0:
                continue
            line = [k[:j] + (i,) + k[j + 1:] for i in range(m)]
            w = [u[c] for c in line]
            s = [0.0] * m
            for i in range(1, m - 1):
                s[i] = _mm(theta * (w[i] - w[i - 1]), 0.5 * (w[i + 1] - w[i - 1]), theta * (w[i + 1] - w[i]))
            h0 = [0.0] * (m + 1)
            hs = [0.0] * (m + 1)
            ht = [0.0] * (m + 1)
            q = [0.0] * (m + 1)
            for f in range(1, m):
                um = w[f - 1] + 0.5 * s[f - 1]
                up = w[f] - 0.5 * s[f]
                h0[f] = 0.5 * (a[j] / p) * (abs(up) ** p + abs(um) ** p) - a_bound * (up - um)
                hs[f] = -0.5 * (p - 1) * faces[f] * (up + um)
                ht[f] = -0.5 * (up + um)
                q[f] = nu * (w[f] - w[f - 1]) / dx
            for i, c in enumerate(line):
                H0[c] += (h0[i + 1] - h0[i]) / dx
                H1[c + (0,)] += (hs[i + 1] - hs[i]) / dx
                H1[c + (1 + j,)] += (ht[i + 1] - ht[i]) / dx
                Pv[c] += (q[i + 1] - q[i]) / dx
    return H0.ravel(), H1.reshape(-1, d + 1), Pv.ravel()


def dense_stage_solve(system, R1, bundle_prev, h_a, shift):
    """Stage ``(V_i, mu_{i-1})`` from one monolithic dense solve of the block system."""
    n = R1.size
    k = bundle_prev.H1.shape[1]
    P = system.P.toarray() if hasattr(system.P, "toarray") else np.asarray(system.P)
    M = np.zeros((n + k, n + k))
    rhs = np.zeros(n + k)
    M[:n, :n] = np.eye(n) - shift * P
    M[:n, n:] = h_a * bundle_prev.H1
    rhs[:n] = R1
    if system.phase == "fixed":
        M[n:, :n] = system.Psi.T
        rhs[n:] = system.psi_target
    else:
        W = system.weights
        M[n:, n:] = W * bundle_prev.H1.T @ bundle_prev.H1
        rhs[n:] = W * bundle_prev.H1.T @ (bundle_prev.Pv - bundle_prev.H0)
    x = np.linalg.solve(M, rhs)
    return x[:n], x[n:]


def random_stage_instance(rng, phase):
    """A random 8-cell freezing problem and stage data for block-solve checks."""
    from freezing_burgers.freezing import FreezingProblem
    from freezing_burgers.mesh import build_grid

    grid = build_grid(1, (-3, 3), 6)
    ref = rng.normal(size=8) if phase == "fixed" else None
    prob = FreezingProblem(grid=grid, nu=float(rng.uniform(0, 1)), p=2.0, phase=phase, reference=ref)
    V_prev = rng.normal(size=8)
    bundle_prev = prob.bundle(V_prev, float(rng.uniform(0, 3)))
    h = float(rng.uniform(1e-3, 0.2))
    R1 = rng.normal(size=8)
    return prob, V_prev, bundle_prev, h, R1
