"""Brute-force reference for tiny one-dimensional solves.

Written independently of the compiled kernels: numpy loops, normal
equations for the local fits, and only the raw Philox blocks shared with
the solver so both consume the same random numbers.
"""

import math

import numpy as np

from srmdp import rng as R


def _uniforms(key, block, m, k, i):
    out = np.empty(4)
    R.uniform_block(key[0], key[1], block, m, k, i, out)
    return out


def _normal(key, s, m, k, i):
    # d = q = 1: one start block, then one block per step; Box-Muller on (u0, u1)
    u = _uniforms(key, 1 + s, m, k, i)
    return math.sqrt(-2.0 * math.log(u[0])) * math.cos(2.0 * math.pi * u[1])


def _fit(x, s, lp1):
    if not lp1:
        return np.array([s.mean()])
    A = np.column_stack([np.ones_like(x), x])
    return np.linalg.solve(A.T @ A, A.T @ s)


def _val(c, x, bound):
    v = c[0] + (c[1] * x if c.size > 1 else 0.0)
    return min(max(v, -bound), bound)


def reference_solve(g, f, N, M, T, seed, run, lp1, C_y, C_z, mu=1.0):
    """Coefficients ``(y[i], z[i])`` for d = q = 1, one unbounded stratum and Brownian dynamics."""
    key = R.derive_key(seed, run, R.SOLVER_DOMAIN)
    dt = T / N
    P = 2 if lp1 else 1
    ycoef = np.zeros((N, P))
    zcoef = np.zeros((N, P))
    for i in range(N - 1, -1, -1):
        xs, dws, ynext, base = np.empty(M), np.empty(M), np.empty(M), np.empty(M)
        for m in range(M):
            u = _uniforms(key, 0, m, 0, i)[0]
            x = (math.log(u) - math.log1p(-u)) / mu
            xs[m] = x
            acc = 0.0
            for j in range(i, N):
                dw = math.sqrt(dt) * _normal(key, j - i, m, 0, i)
                xn = x + dw
                yn = g(np.array([xn])) if j + 1 == N else _val(ycoef[j + 1], xn, C_y)
                if j == i:
                    dws[m], ynext[m] = dw, yn
                else:
                    acc += f(j, np.array([x]), yn, np.array([_val(zcoef[j], x, C_z)])) * dt
                x = xn
            base[m] = yn + acc
        zcoef[i] = _fit(xs, base * dws / dt, lp1)
        zx = np.array([_val(zcoef[i], x, C_z) for x in xs])
        resp = np.array([base[m] + f(i, np.array([xs[m]]), ynext[m], np.array([zx[m]])) * dt
                         for m in range(M)])
        ycoef[i] = _fit(xs, resp, lp1)
    return ycoef, zcoef
