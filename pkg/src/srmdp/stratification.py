"""Logistic reference measure, hypercube strata and conditional sampling.

The grid tiles ``[-L, L]^d`` with ``cells_per_dim`` equal cells per axis.  By
default the outermost cells extend to infinity so the strata cover all of
R^d; a ``bounded`` grid stops at the box and points outside belong to no
stratum (index -1), where local estimates vanish.  Cells are half-open
``[lo, hi)`` and flattened in row-major order (first axis most significant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numba as nb
import numpy as np


@dataclass(frozen=True)
class LogisticMeasure:
    """Product logistic law with density ``mu e^{-mu x} / (1 + e^{-mu x})^2`` per axis."""

    mu: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"mu must be positive and finite, got {self.mu}")

    def pdf(self, x):
        e = np.exp(-self.mu * np.abs(np.asarray(x, dtype=float)))
        return self.mu * e / (1.0 + e) ** 2


@dataclass(frozen=True)
class StratGrid:
    d: int
    cells_per_dim: int
    L: float = 6.5
    bounded: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.cells_per_dim < 1:
            raise ValueError(f"cells_per_dim must be >= 1, got {self.cells_per_dim}")
        if not (math.isfinite(self.L) and self.L > 0):
            raise ValueError(f"L must be positive and finite, got {self.L}")

    @property
    def delta(self) -> float:
        return 2.0 * self.L / self.cells_per_dim

    @property
    def K(self) -> int:
        return self.cells_per_dim ** self.d

    @property
    def breakpoints(self) -> np.ndarray:
        """``cells_per_dim + 1`` breakpoints, shared by every axis."""
        c = self.cells_per_dim
        b = -self.L + self.delta * np.arange(c + 1, dtype=float)
        if self.bounded:
            b[0], b[-1] = -self.L, self.L
        else:
            b[0], b[-1] = -np.inf, np.inf
        return b

    def multi(self, flat: int) -> tuple[int, ...]:
        if not 0 <= flat < self.K:
            raise IndexError(f"stratum {flat} out of range [0, {self.K})")
        return tuple(int(v) for v in np.unravel_index(flat, (self.cells_per_dim,) * self.d))

    def flat(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), (self.cells_per_dim,) * self.d))

    def cell_bounds(self, k) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(self.multi(_flat(self, k)))
        b = self.breakpoints
        return b[idx], b[idx + 1]


class StratumIndex(NamedTuple):
    flat: int
    multi: tuple[int, ...]


def _flat(grid: StratGrid, k) -> int:
    if isinstance(k, StratumIndex):
        return k.flat
    if isinstance(k, (tuple, list)):
        return grid.flat(k)
    return int(k)


# -- scalar kernels shared with the solver -----------------------------------

_BIG = np.finfo(np.float64).max

@nb.njit(cache=True, nogil=True)
def logistic_cdf(mu, x):
    s = mu * x
    if s >= 0.0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


@nb.njit(cache=True, nogil=True)
def _inv_from_masses(mu, u, lo, hi, cdf_lo, cdf_hi, sf_lo, sf_hi):
    # lower and upper tail masses are formed separately so that neither
    # suffers cancellation near 0 or 1
    p = (1.0 - u) * cdf_lo + u * cdf_hi
    r = (1.0 - u) * sf_lo + u * sf_hi
    # an underflowed tail mass pins the point to the cell edge, kept finite
    if p <= 0.0:
        return max(lo, -_BIG)
    if r <= 0.0:
        return min(hi, _BIG)
    x = (math.log(p) - math.log(r)) / mu
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@nb.njit(cache=True, nogil=True)
def logistic_inv_cdf_conditional(mu, u, lo, hi):
    return _inv_from_masses(mu, u, lo, hi, logistic_cdf(mu, lo), logistic_cdf(mu, hi),
                            logistic_cdf(mu, -lo), logistic_cdf(mu, -hi))


@nb.njit(cache=True, nogil=True)
def cell_of(v, cells, L, delta, breaks):
    # finite end breakpoints mark a bounded grid
    if v < breaks[0] or v >= breaks[cells]:
        return -1
    t = (v + L) * (1.0 / delta)
    if t < 0.0:
        c = 0
    elif t >= cells:
        c = cells - 1
    else:
        c = int(t)
    # floor of a rounded quotient can be off by one at a breakpoint
    while c > 0 and v < breaks[c]:
        c -= 1
    while c < cells - 1 and v >= breaks[c + 1]:
        c += 1
    return c


@nb.njit(cache=True, nogil=True)
def locate_flat(x, cells, L, delta, breaks):
    k = 0
    for l in range(x.shape[0]):
        c = cell_of(x[l], cells, L, delta, breaks)
        if c < 0:
            return -1
        k = k * cells + c
    return k


@nb.njit(cache=True, nogil=True)
def stratum_masses(k, mu, cells, breaks, out):
    """Per-axis bounds and tail masses of stratum ``k``: rows lo, hi, F(lo), F(hi), S(lo), S(hi)."""
    d = out.shape[1]
    rem = k
    for l in range(d - 1, -1, -1):
        c = rem % cells
        rem //= cells
        lo = breaks[c]
        hi = breaks[c + 1]
        out[0, l] = lo
        out[1, l] = hi
        out[2, l] = logistic_cdf(mu, lo)
        out[3, l] = logistic_cdf(mu, hi)
        out[4, l] = logistic_cdf(mu, -lo)
        out[5, l] = logistic_cdf(mu, -hi)


@nb.njit(cache=True, nogil=True)
def point_from_masses(u, mu, masses, out):
    for l in range(out.shape[0]):
        hi = masses[1, l]
        v = _inv_from_masses(mu, u[l], masses[0, l], hi, masses[2, l], masses[3, l],
                             masses[4, l], masses[5, l])
        if v >= hi:
            v = np.nextafter(hi, -np.inf)
        out[l] = v


@nb.njit(cache=True, nogil=True)
def stratum_point(k, u, mu, cells, breaks, out):
    """Map uniforms ``u`` to a point of stratum ``k`` distributed as the conditioned logistic law."""
    masses = np.empty((6, out.shape[0]))
    stratum_masses(k, mu, cells, breaks, masses)
    point_from_masses(u, mu, masses, out)


@nb.njit(cache=True, nogil=True)
def _locate_many(X, cells, L, delta, breaks, out):
    for n in range(X.shape[0]):
        out[n] = locate_flat(X[n], cells, L, delta, breaks)


# -- public operations ---------------------------------------------------------

def cdf(measure: LogisticMeasure, x):
    """Logistic distribution function ``1 / (1 + exp(-mu x))``; accepts +-inf."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * (1.0 + np.tanh(0.5 * measure.mu * x))
    return float(out) if out.ndim == 0 else out


def inv_cdf_conditional(measure: LogisticMeasure, u: float, lo: float, hi: float) -> float:
    """Quantile of the logistic law conditioned on ``[lo, hi)``."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    return float(logistic_inv_cdf_conditional(measure.mu, float(u), float(lo), float(hi)))


def stratum_measure(grid: StratGrid, measure: LogisticMeasure, k) -> float:
    lo, hi = grid.cell_bounds(k)
    mass = np.array([logistic_cdf(measure.mu, h) - logistic_cdf(measure.mu, l_) for l_, h in zip(lo, hi)])
    return float(np.prod(mass))


def stratum_measures(grid: StratGrid, measure: LogisticMeasure) -> np.ndarray:
    """``nu(H_k)`` for every stratum, flattened row-major."""
    b = grid.breakpoints
    per_axis = np.diff([logistic_cdf(measure.mu, v) for v in b])
    out = per_axis
    for _ in range(grid.d - 1):
        out = np.multiply.outer(out, per_axis)
    return np.asarray(out).ravel()


def sample_in_stratum(grid: StratGrid, measure: LogisticMeasure, k, M: int, rng) -> np.ndarray:
    """``M`` i.i.d. points from the logistic law restricted to stratum ``k``.

    ``rng`` needs a ``random(size)`` method returning uniforms, e.g. a
    :class:`numpy.random.Generator` or :class:`srmdp.rng.CounterStream`.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    flat = _flat(grid, k)
    if not 0 <= flat < grid.K:
        raise IndexError(f"stratum {flat} out of range [0, {grid.K})")
    u = np.asarray(rng.random((M, grid.d)), dtype=float)
    out = np.empty((M, grid.d))
    b = grid.breakpoints
    for m in range(M):
        stratum_point(flat, u[m], measure.mu, grid.cells_per_dim, b, out[m])
    return out


def locate(grid: StratGrid, x) -> Optional[StratumIndex]:
    """Stratum containing ``x``; ``None`` outside a bounded grid."""
    x = np.asarray(x, dtype=float).reshape(grid.d)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"point must be finite, got {x}")
    flat = int(locate_flat(x, grid.cells_per_dim, grid.L, grid.delta, grid.breakpoints))
    if flat < 0:
        return None
    return StratumIndex(flat, grid.multi(flat))


def locate_many(grid: StratGrid, X) -> np.ndarray:
    """Flat stratum index of every row of ``X`` (-1 outside a bounded grid)."""
    X = np.ascontiguousarray(X, dtype=float).reshape(-1, grid.d)
    out = np.empty(X.shape[0], dtype=np.int64)
    _locate_many(X, grid.cells_per_dim, grid.L, grid.delta, grid.breakpoints, out)
    return out


def sample_logistic(measure: LogisticMeasure, u) -> np.ndarray:
    """Unconditioned logistic variates from uniforms in (0, 1)."""
    u = np.asarray(u, dtype=float)
    return (np.log(u) - np.log1p(-u)) / measure.mu


# -- Gaussian smoothing of the logistic density ------------------------------

def uses_ratio(y, lam: float, mu: float = 1.0, order: int = 128) -> np.ndarray:
    """``I(y, lam) / p(y)`` with ``I(y, lam) = 2 * int p(y + z sqrt(lam)) exp(-z^2/2) dz``.

    Computed by Gauss-Hermite quadrature of the given order; ``p`` is the
    one-dimensional logistic density.
    """
    if order < 2:
        raise ValueError("order must be >= 2")
    y = np.asarray(y, dtype=float)
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    z = math.sqrt(2.0) * nodes
    p = LogisticMeasure(mu).pdf
    shifted = p(y[..., None] + z * math.sqrt(lam))
    integral = 2.0 * math.sqrt(2.0) * (shifted @ weights)
    return integral / p(y)


def uses_bracket(ys, lams, mu: float = 1.0, order: int = 128) -> tuple[float, float, float]:
    """Smallest and largest ratio over the grid and the constant ``C`` with ratios in ``[1/C, C]``."""
    ratios = np.array([uses_ratio(ys, lam, mu, order) for lam in lams])
    lo, hi = float(ratios.min()), float(ratios.max())
    return lo, hi, max(hi, 1.0 / lo)
