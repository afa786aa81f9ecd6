"""Local least-squares regression: piecewise constant (LP0) and affine (LP1) bases.

LP1 coefficients are obtained from a Householder QR factorisation stored in
place of the design matrix (LAPACK-style: ``R`` on and above the diagonal,
reflector tails below it), so the working memory is the ``M x (d + 1)``
matrix itself and never an explicit ``M x M`` orthogonal factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

LP0 = "lp0"
LP1 = "lp1"

# |R_jj| below this fraction of max |R| counts as rank deficient
RANK_TOL = 1e-10


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    d: int

    def __post_init__(self):
        if self.kind not in (LP0, LP1):
            raise ValueError(f"basis kind must be 'lp0' or 'lp1', got {self.kind!r}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")

    @property
    def dim_y(self) -> int:
        return 1 if self.kind == LP0 else self.d + 1

    @property
    def dim_z_per_component(self) -> int:
        return self.dim_y


@dataclass
class CoefficientBlock:
    y: np.ndarray          # (dim_y,)
    z: np.ndarray          # (q, dim_y)
    downgraded: bool = False


# -- kernels ------------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def shifted_mean(v, n):
    """Mean of ``v[:n]`` accumulated around ``v[0]``; exact for constant input."""
    ref = v[0]
    acc = 0.0
    for m in range(n):
        acc += v[m] - ref
    return ref + acc / n


@nb.njit(cache=True, nogil=True)
def householder_inplace(A, beta):
    """Factor ``A`` in place; returns ``(flops, rank_deficient)``.

    ``flops`` counts multiply-add pairs: ``sum_j 2 (M - j)(n - j)``.
    """
    M, n = A.shape
    flops = 0
    for j in range(n):
        sigma = 0.0
        for r in range(j + 1, M):
            sigma += A[r, j] * A[r, j]
        x0 = A[j, j]
        norm = math.sqrt(x0 * x0 + sigma)
        flops += M - j
        if norm == 0.0:
            beta[j] = 0.0
            continue
        sgn = 1.0 if x0 >= 0.0 else -1.0
        v0 = x0 + sgn * norm
        for r in range(j + 1, M):
            A[r, j] /= v0
        flops += M - j
        beta[j] = 2.0 * v0 * v0 / (v0 * v0 + sigma)
        A[j, j] = -sgn * norm
        b = beta[j]
        for c in range(j + 1, n):
            w = A[j, c]
            for r in range(j + 1, M):
                w += A[r, j] * A[r, c]
            w *= b
            A[j, c] -= w
            for r in range(j + 1, M):
                A[r, c] -= w * A[r, j]
            flops += 2 * (M - j)
    rmax = 0.0
    for j in range(n):
        for c in range(j, n):
            a = abs(A[j, c])
            if a > rmax:
                rmax = a
    deficient = rmax == 0.0
    for j in range(n):
        if abs(A[j, j]) < RANK_TOL * rmax:
            deficient = True
    return flops, deficient


@nb.njit(cache=True, nogil=True)
def apply_qt(A, beta, v):
    M, n = A.shape
    for j in range(n):
        if beta[j] == 0.0:
            continue
        w = v[j]
        for r in range(j + 1, M):
            w += A[r, j] * v[r]
        w *= beta[j]
        v[j] -= w
        for r in range(j + 1, M):
            v[r] -= w * A[r, j]


@nb.njit(cache=True, nogil=True)
def apply_q(A, beta, v):
    M, n = A.shape
    for j in range(n - 1, -1, -1):
        if beta[j] == 0.0:
            continue
        w = v[j]
        for r in range(j + 1, M):
            w += A[r, j] * v[r]
        w *= beta[j]
        v[j] -= w
        for r in range(j + 1, M):
            v[r] -= w * A[r, j]


@nb.njit(cache=True, nogil=True)
def back_substitute(A, v, out):
    n = A.shape[1]
    for j in range(n - 1, -1, -1):
        acc = v[j]
        for c in range(j + 1, n):
            acc -= A[j, c] * out[c]
        out[j] = acc / A[j, j]


@nb.njit(cache=True, nogil=True)
def fill_design(X, A):
    for m in range(X.shape[0]):
        A[m, 0] = 1.0
        for l in range(X.shape[1]):
            A[m, l + 1] = X[m, l]


@nb.njit(cache=True, nogil=True)
def eval_basis(coef, x, lp1):
    v = coef[0]
    if lp1:
        for l in range(x.shape[0]):
            v += coef[l + 1] * x[l]
    return v


@nb.njit(cache=True, nogil=True)
def clamp(v, bound):
    if v > bound:
        return bound
    if v < -bound:
        return -bound
    return v


# -- public operations -----------------------------------------------------------

def truncate(v, bound: float):
    """Componentwise clamp to ``[-bound, bound]``."""
    if bound < 0:
        raise ValueError(f"bound must be >= 0, got {bound}")
    return np.clip(np.asarray(v, dtype=float), -bound, bound)


def ols_lp0(responses) -> float:
    s = np.ascontiguousarray(responses, dtype=float).ravel()
    if s.size < 1:
        raise ValueError("need at least one response")
    return float(shifted_mean(s, s.size))


def design_matrix(points) -> np.ndarray:
    """``M x (d + 1)`` matrix with a leading column of ones."""
    X = np.ascontiguousarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    A = np.empty((X.shape[0], X.shape[1] + 1))
    fill_design(X, A)
    return A


@dataclass
class HouseholderQR:
    factors: np.ndarray    # R above the diagonal, reflector tails below
    beta: np.ndarray
    flops: int
    rank_deficient: bool

    @property
    def R(self) -> np.ndarray:
        n = self.factors.shape[1]
        return np.triu(self.factors[:n])

    def apply_qt(self, v) -> np.ndarray:
        out = np.array(v, dtype=float)
        if out.ndim == 1:
            apply_qt(self.factors, self.beta, out)
        else:
            for c in range(out.shape[1]):
                col = np.ascontiguousarray(out[:, c])
                apply_qt(self.factors, self.beta, col)
                out[:, c] = col
        return out

    def apply_q(self, v) -> np.ndarray:
        out = np.array(v, dtype=float)
        if out.ndim == 1:
            apply_q(self.factors, self.beta, out)
        else:
            for c in range(out.shape[1]):
                col = np.ascontiguousarray(out[:, c])
                apply_q(self.factors, self.beta, col)
                out[:, c] = col
        return out

    def reconstruct(self) -> np.ndarray:
        """``Q R`` rebuilt by applying the stored reflectors to ``R``."""
        M, n = self.factors.shape
        QR = np.zeros((M, n))
        QR[:n] = self.R
        return self.apply_q(QR)


def householder_qr(A) -> HouseholderQR:
    """Householder QR of an ``M x n`` matrix with ``M >= n`` (input is not modified)."""
    F = np.array(A, dtype=float, order="C")
    if F.ndim != 2:
        raise ValueError("A must be a 2-d array")
    M, n = F.shape
    if M < n:
        raise ValueError(f"need at least as many rows as columns, got {M} x {n}")
    beta = np.zeros(n)
    flops, deficient = householder_inplace(F, beta)
    return HouseholderQR(F, beta, int(flops), bool(deficient))


def ols_lp1(A, responses) -> np.ndarray:
    """Least-squares coefficients of ``responses`` on the columns of ``A``.

    ``responses`` may be ``(M,)`` or ``(M, r)``; one factorisation serves
    every column.
    """
    A = np.asarray(A, dtype=float)
    M, n = A.shape
    if M < n:
        raise ValueError(f"need M >= {n} simulations for {n} coefficients, got M={M}")
    qr = householder_qr(A)
    if qr.rank_deficient:
        raise RankDeficientError("design matrix is numerically rank deficient")
    S = np.asarray(responses, dtype=float)
    QtS = qr.apply_qt(S)
    if QtS.ndim == 1:
        out = np.empty(n)
        back_substitute(qr.factors, np.ascontiguousarray(QtS[:n]), out)
        return out
    out = np.empty((n, QtS.shape[1]))
    for c in range(QtS.shape[1]):
        col = np.empty(n)
        back_substitute(qr.factors, np.ascontiguousarray(QtS[:n, c]), col)
        out[:, c] = col
    return out


def evaluate(spec: BasisSpec, coeffs, x) -> float:
    """Basis function value; truncation is left to the caller."""
    coeffs = np.ascontiguousarray(coeffs, dtype=float)
    if coeffs.shape != (spec.dim_y,):
        raise ValueError(f"expected {spec.dim_y} coefficients, got shape {coeffs.shape}")
    x = np.ascontiguousarray(x, dtype=float).reshape(spec.d)
    return float(eval_basis(coeffs, x, spec.kind == LP1))
