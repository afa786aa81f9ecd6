"""BSDE problem definitions, a-priori bounds and forward path simulation.

Problem callables are numba-jitted so the solver kernel can inline them:

* ``g(x) -> float``                      terminal condition
* ``f(i, x, y, z) -> float``             driver at time index ``i``
* ``step(t, x, dw, dt, out) -> None``    one transition of the forward chain
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numba as nb
import numpy as np


class BoundsError(ValueError):
    """Raised when the time step is too coarse for the a-priori bounds."""


@dataclass(frozen=True)
class ExactSampler:
    """Forward chain with an exactly simulable transition, driven by a Gaussian increment."""

    step: Callable


@dataclass(frozen=True)
class EulerCoefficients:
    """Euler scheme ``x + b(t, x) dt + sigma(t, x) dw`` for jitted ``b`` and ``sigma``."""

    b: Callable
    sigma: Callable

    @property
    def step(self) -> Callable:
        return _euler_step(self.b, self.sigma)


@functools.lru_cache(maxsize=None)
def _euler_step(b, sigma):
    @nb.njit(nogil=True)
    def step(t, x, dw, dt, out):
        drift = b(t, x)
        vol = sigma(t, x)
        for l in range(x.shape[0]):
            acc = x[l] + drift[l] * dt
            for r in range(dw.shape[0]):
                acc += vol[l, r] * dw[r]
            out[l] = acc

    return step


@dataclass(frozen=True)
class BSDEProblem:
    """Decoupled forward-backward SDE on a uniform time grid.

    ``y_bound`` optionally replaces the generic a-priori bound on ``|y|``
    when a sharper one is known analytically.
    """

    d: int
    q: int
    T: float
    g: Callable
    f: Callable
    dynamics: ExactSampler | EulerCoefficients
    C_g: float
    C_f: float
    L_f: float
    y_bound: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if self.d < 1 or self.q < 1:
            raise ValueError(f"dimensions must be positive, got d={self.d}, q={self.q}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        for label, value in (("C_g", self.C_g), ("C_f", self.C_f), ("L_f", self.L_f)):
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{label} must be finite and non-negative, got {value}")

    @property
    def step(self) -> Callable:
        return self.dynamics.step


@dataclass(frozen=True)
class AnalyticSolution:
    """Closed-form value functions, vectorised over rows of ``x``."""

    y_fn: Callable[[float, np.ndarray], np.ndarray]
    z_fn: Callable[[float, np.ndarray], np.ndarray]
    T: float

    def y(self, i: int, x, N: int):
        return self.y_fn(i * self.T / N, np.asarray(x, dtype=float))

    def z(self, i: int, x, N: int):
        return self.z_fn(i * self.T / N, np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Bounds:
    C_y: float
    C_z: float
    C_star: float


@nb.njit(cache=True, nogil=True)
def _sigmoid(s):
    if s >= 0.0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


@nb.njit(cache=True, nogil=True)
def benchmark_driver(i, x, y, z):
    q = z.shape[0]
    s = 0.0
    for l in range(q):
        s += z[l]
    return s * (y - (2.0 + q) / (2.0 * q))


@nb.njit(cache=True, nogil=True)
def brownian_step(t, x, dw, dt, out):
    for l in range(x.shape[0]):
        out[l] = x[l] + dw[l]


@functools.lru_cache(maxsize=None)
def _benchmark_terminal(T: float):
    @nb.njit(nogil=True)
    def g(x):
        s = T
        for l in range(x.shape[0]):
            s += x[l]
        return _sigmoid(s)

    return g


def make_benchmark(d: int, T: float = 1.0) -> tuple[BSDEProblem, AnalyticSolution]:
    """Brownian benchmark with logistic terminal value and explicit solution.

    With ``w(t, x) = exp(t + sum(x))`` the solution is ``y = w / (1 + w)`` and
    every component of ``z`` equals ``w / (1 + w)**2``.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got d={d}")
    if not T > 0:
        raise ValueError(f"horizon must be positive, got T={T}")
    q = d
    shift = (2.0 + q) / (2.0 * q)

    def y_fn(t, x):
        return _expit(t + np.sum(np.atleast_1d(x), axis=-1))

    def z_fn(t, x):
        x = np.asarray(x, dtype=float)
        s = _expit(t + np.sum(np.atleast_1d(x), axis=-1))
        zc = s * (1.0 - s)
        return np.repeat(np.expand_dims(zc, -1), q, axis=-1)

    # |f(x, y, z)| <= sqrt(q) (1 + shift) |z| whenever |y| <= 1; the solver
    # truncates y at 1, so this is the growth constant the bounds need.
    problem = BSDEProblem(
        d=d, q=q, T=float(T),
        g=_benchmark_terminal(float(T)),
        f=benchmark_driver,
        dynamics=ExactSampler(brownian_step),
        C_g=1.0, C_f=0.0, L_f=math.sqrt(q) * (1.0 + shift),
        y_bound=1.0,
        name="benchmark",
    )
    return problem, AnalyticSolution(y_fn, z_fn, float(T))


@nb.njit(cache=True, nogil=True)
def zero_driver(i, x, y, z):
    return 0.0


@functools.lru_cache(maxsize=None)
def _constant_terminal(c: float):
    @nb.njit(nogil=True)
    def g(x):
        return c

    return g


def make_constant(d: int, c: float = 0.0, T: float = 1.0) -> tuple[BSDEProblem, AnalyticSolution]:
    """Driverless Brownian problem with ``g = c``: the solution is ``y = c``, ``z = 0``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got d={d}")
    c = float(c)

    def y_fn(t, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.full(x.shape[:-1], c) if x.ndim > 1 else c

    def z_fn(t, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.zeros(x.shape[:-1] + (d,))

    problem = BSDEProblem(
        d=d, q=d, T=float(T), g=_constant_terminal(c), f=zero_driver,
        dynamics=ExactSampler(brownian_step), C_g=abs(c), C_f=0.0, L_f=0.0,
        y_bound=max(abs(c), 1.0), name="constant",
    )
    return problem, AnalyticSolution(y_fn, z_fn, float(T))


def _expit(s):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(s, dtype=float)))


def compute_bounds(problem: BSDEProblem, N: int) -> Bounds:
    """Almost-sure bounds on ``y``, ``z`` and on the Y-responses.

    The generic bound on ``y`` needs ``(T/N) L_f^2 <= 1/(12 q)``; problems
    that declare ``y_bound`` skip that check.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    T, q, L_f = problem.T, problem.q, problem.L_f
    dt = T / N
    if problem.y_bound is not None:
        C_y = float(problem.y_bound)
    else:
        lhs = dt * L_f ** 2
        if lhs > 1.0 / (12 * q):
            raise BoundsError(
                f"time step too coarse for the a-priori bounds: (T/N) L_f^2 = {lhs:.6g} "
                f"> 1/(12 q) = {1.0 / (12 * q):.6g} (T={T}, N={N}, L_f={L_f}, q={q})"
            )
        C_y = math.exp(T / 4 + 6 * q * max(1.0, L_f ** 2) * max(T, 1.0)) * (
            problem.C_g + T * problem.C_f / (2 * math.sqrt(q))
        )
    C_z = C_y / math.sqrt(dt)
    C_star = problem.C_g + T * (L_f * C_y * (1 + math.sqrt(q) / math.sqrt(dt)) + problem.C_f)
    if not (all(math.isfinite(v) and v > 0 for v in (C_y, C_z)) and math.isfinite(C_star) and C_star >= 0):
        raise BoundsError(f"bounds are not finite and positive: C_y={C_y}, C_z={C_z}, C_star={C_star}")
    return Bounds(C_y=C_y, C_z=C_z, C_star=C_star)


def simulate_path(problem: BSDEProblem, i: int, x_i, N: int, rng=None, increments=None):
    """Forward chain from ``x_i`` at time index ``i`` up to ``N``.

    Increments are ``sqrt(dt) * rng.standard_normal((N - i, q))`` unless
    given explicitly.  Returns ``(states, increments)`` with shapes
    ``(N - i + 1, d)`` and ``(N - i, q)``.
    """
    if not 0 <= i <= N - 1:
        raise ValueError(f"need 0 <= i <= N-1, got i={i}, N={N}")
    dt = problem.T / N
    n = N - i
    if increments is None:
        if rng is None:
            raise ValueError("either rng or increments is required")
        increments = math.sqrt(dt) * np.asarray(rng.standard_normal((n, problem.q)), dtype=float)
    increments = np.asarray(increments, dtype=float).reshape(n, problem.q)
    states = np.empty((n + 1, problem.d))
    states[0] = np.asarray(x_i, dtype=float).reshape(problem.d)
    step = problem.step
    for s in range(n):
        step((i + s) * dt, states[s], increments[s], dt, states[s + 1])
    return states, increments
