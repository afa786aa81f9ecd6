"""Counter-based random streams (Philox4x32-10) for reproducible parallel Monte Carlo.

Every random number used by the solver is a pure function of
``(key, block, m, k, i)``: the key is derived from the master seed, the run
index and a stream domain, and the 128-bit Philox counter carries the draw
block, the simulation index ``m``, the stratum ``k`` and the time index
``i``.  No state is shared between cells, so the result of a solve does not
depend on how strata are scheduled across workers.

Draw layout for one simulation ``(i, k, m)``:

* blocks ``0 .. nbx-1`` give the ``d`` uniforms of the start point,
  ``nbx = ceil(d / 4)``;
* blocks ``nbx + s * nbg .. nbx + (s + 1) * nbg - 1`` give the ``q``
  standard normals of the increment over step ``i + s``, ``nbg = ceil(q / 4)``.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

SOLVER_DOMAIN = 0
EVAL_DOMAIN = 1

_MASK64 = (1 << 64) - 1

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
_TWO_PI = 2.0 * math.pi
_INV_2_32 = 1.0 / 4294967296.0


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, run: int = 0, domain: int = SOLVER_DOMAIN) -> tuple[int, int]:
    """Two 32-bit Philox key words for ``(seed, run, domain)``."""
    if seed < 0 or run < 0:
        raise ValueError(f"seed and run must be non-negative, got seed={seed}, run={run}")
    h = _splitmix64(seed & _MASK64)
    h = _splitmix64(h ^ (run & _MASK64))
    h = _splitmix64(h ^ domain)
    return h & 0xFFFFFFFF, h >> 32


@nb.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds; all arguments are 32-bit words."""
    x0 = np.uint64(c0) & _LO
    x1 = np.uint64(c1) & _LO
    x2 = np.uint64(c2) & _LO
    x3 = np.uint64(c3) & _LO
    key0 = np.uint64(k0) & _LO
    key1 = np.uint64(k1) & _LO
    for r in range(10):
        p0 = _M0 * x0
        p1 = _M1 * x2
        hi0 = p0 >> _SHIFT
        lo0 = p0 & _LO
        hi1 = p1 >> _SHIFT
        lo1 = p1 & _LO
        x0 = hi1 ^ x1 ^ key0
        x1 = lo1
        x2 = hi0 ^ x3 ^ key1
        x3 = lo0
        if r < 9:
            key0 = (key0 + _W0) & _LO
            key1 = (key1 + _W1) & _LO
    return x0, x1, x2, x3


@nb.njit(cache=True, nogil=True)
def uniform_block(k0, k1, block, m, k, i, out):
    """Write 4 uniforms in the open interval (0, 1) into ``out[0:4]``."""
    w0, w1, w2, w3 = philox4x32(block, m, k, i, k0, k1)
    out[0] = (np.float64(w0) + 0.5) * _INV_2_32
    out[1] = (np.float64(w1) + 0.5) * _INV_2_32
    out[2] = (np.float64(w2) + 0.5) * _INV_2_32
    out[3] = (np.float64(w3) + 0.5) * _INV_2_32


@nb.njit(cache=True, nogil=True)
def start_uniforms(k0, k1, i, k, m, d, scratch, out):
    """Uniforms for the ``d`` start coordinates of simulation ``(i, k, m)``."""
    nbx = (d + 3) // 4
    for b in range(nbx):
        uniform_block(k0, k1, b, m, k, i, scratch)
        for j in range(4):
            idx = 4 * b + j
            if idx < d:
                out[idx] = scratch[j]


@nb.njit(cache=True, nogil=True)
def step_normals(k0, k1, i, k, m, d, s, q, scratch, out):
    """Standard normals (Box-Muller) for step ``i + s`` of simulation ``(i, k, m)``."""
    nbx = (d + 3) // 4
    nbg = (q + 3) // 4
    for b in range(nbg):
        uniform_block(k0, k1, nbx + s * nbg + b, m, k, i, scratch)
        r0 = math.sqrt(-2.0 * math.log(scratch[0]))
        r1 = math.sqrt(-2.0 * math.log(scratch[2]))
        a0 = _TWO_PI * scratch[1]
        a1 = _TWO_PI * scratch[3]
        vals = (r0 * math.cos(a0), r0 * math.sin(a0), r1 * math.cos(a1), r1 * math.sin(a1))
        for j in range(4):
            idx = 4 * b + j
            if idx < q:
                out[idx] = vals[j]


class CounterStream:
    """Sequential view of one Philox counter domain.

    Quacks like the subset of :class:`numpy.random.Generator` used in this
    package (``random`` and ``standard_normal``), so it can be handed to
    :func:`srmdp.model.simulate_path` or
    :func:`srmdp.stratification.sample_in_stratum`.  Two streams built with the
    same arguments produce the same sequence.
    """

    def __init__(self, seed: int, run: int = 0, domain: int = SOLVER_DOMAIN,
                 i: int = 0, k: int = 0, m: int = 0):
        self.key = derive_key(seed, run, domain)
        self.prefix = (m, k, i)
        self._block = 0
        self._buf = np.empty(4)
        self._pending: list[float] = []

    def _next_uniforms(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            if not self._pending:
                m, k, i = self.prefix
                uniform_block(self.key[0], self.key[1], self._block, m, k, i, self._buf)
                self._block += 1
                self._pending = list(self._buf)
            take = min(n - filled, len(self._pending))
            out[filled:filled + take] = self._pending[:take]
            del self._pending[:take]
            filled += take
        return out

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self._next_uniforms(n)
        return float(u[0]) if size is None else u.reshape(size)

    def standard_normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self._next_uniforms(2 * ((n + 1) // 2)).reshape(-1, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        z = np.column_stack((r * np.cos(_TWO_PI * u[:, 1]), r * np.sin(_TWO_PI * u[:, 1]))).ravel()[:n]
        return float(z[0]) if size is None else z.reshape(size)
