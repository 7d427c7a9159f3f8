"""Numba-accelerated numeric kernels with pure-numpy fallbacks.

Every hot loop in the package routes through this module.  Each kernel has
two implementations: a numpy one (``_*_np``) and a numba ``@njit`` one
compiled lazily on first use.  The active backend is chosen from the
``KIVO_NUMBA`` environment variable at import time (``0`` disables numba,
anything else, or unset, enables it when numba imports cleanly) and can be
switched at runtime with :func:`use_numba` — the benchmark under
``benchmarks/`` relies on that.

``KIVO_THREADS`` caps the numba thread pool.  Parallel kernels split work
by output row, so results are identical for every thread count.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

_use_numba = _HAVE_NUMBA and os.environ.get("KIVO_NUMBA", "1") != "0"

if _HAVE_NUMBA and os.environ.get("KIVO_THREADS"):
    _cap = max(1, min(int(os.environ["KIVO_THREADS"]), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(_cap)


def use_numba(flag: bool) -> None:
    """Switch the backend at runtime; no-op to enable when numba is missing."""
    global _use_numba
    _use_numba = bool(flag) and _HAVE_NUMBA


def backend_name() -> str:
    return "numba" if _use_numba else "numpy"


# ---------------------------------------------------------------------------
# weighted squared distances: out[i, j] = sum_d w[d] * (a[i, d] - b[j, d])^2
# ---------------------------------------------------------------------------

def _weighted_sq_dists_np(a, b, w):
    aw = a * w
    sq = (aw * a).sum(axis=1)[:, None] + (b * b * w).sum(axis=1)[None, :]
    sq -= 2.0 * (aw @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def _weighted_sq_dists_kernel(a, b, w):
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    for i in prange(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = a[i, t] - b[j, t]
                acc += w[t] * diff * diff
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# Matern-3/2 gram on one block: prod form (1 + sqrt3 r/ell) exp(-sqrt3 r/ell)
# ---------------------------------------------------------------------------

def _matern32_gram_np(a, b, ell):
    sq = _weighted_sq_dists_np(a, b, np.full(a.shape[1], 1.0))
    q = np.sqrt(3.0 * sq) / ell
    return (1.0 + q) * np.exp(-q)


def _matern32_gram_kernel(a, b, ell):
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    for i in prange(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = a[i, t] - b[j, t]
                acc += diff * diff
            q = math.sqrt(3.0 * acc) / ell
            out[i, j] = (1.0 + q) * math.exp(-q)
    return out


# ---------------------------------------------------------------------------
# Irwin-Hall pdf: density of a sum of k iid U[0,1) at each point of s
# ---------------------------------------------------------------------------

def _irwin_hall_pdf_np(s, k):
    out = np.zeros_like(s)
    inside = (s >= 0.0) & (s <= k)
    sm = s[inside]
    acc = np.zeros_like(sm)
    coef = 1.0
    for j in range(k + 1):
        acc += coef * np.where(sm >= j, (sm - j) ** (k - 1), 0.0)
        coef *= -(k - j) / (j + 1.0)
    out[inside] = acc / math.gamma(k)
    return out


def _irwin_hall_pdf_kernel(s, k):
    out = np.zeros_like(s)
    inv_fact = 1.0 / math.gamma(k)
    for i in prange(s.shape[0]):
        v = s[i]
        if v < 0.0 or v > k:
            continue
        acc = 0.0
        coef = 1.0
        for j in range(k + 1):
            if v >= j:
                acc += coef * (v - j) ** (k - 1)
            coef *= -(k - j) / (j + 1.0)
        out[i] = acc * inv_fact
    return out


# ---------------------------------------------------------------------------
# Irwin-Hall cdf, used for exact cell masses of operator grids
# ---------------------------------------------------------------------------

def _irwin_hall_cdf_np(s, k):
    s = np.clip(s, 0.0, float(k))
    acc = np.zeros_like(s)
    coef = 1.0
    for j in range(k + 1):
        acc += coef * np.where(s >= j, (s - j) ** k, 0.0)
        coef *= -(k - j) / (j + 1.0)
    return acc / math.gamma(k + 1)


def _irwin_hall_cdf_kernel(s, k):
    out = np.empty_like(s)
    inv_fact = 1.0 / math.gamma(k + 1)
    for i in prange(s.shape[0]):
        v = s[i]
        if v <= 0.0:
            out[i] = 0.0
            continue
        if v > k:
            v = float(k)
        acc = 0.0
        coef = 1.0
        for j in range(k + 1):
            if v >= j:
                acc += coef * (v - j) ** k
            coef *= -(k - j) / (j + 1.0)
        out[i] = acc * inv_fact
    return out


# ---------------------------------------------------------------------------
# cardinal B-spline by the Cox-de Boor recursion, m convolution steps
# (m + 1 indicator factors, support [0, m + 1])
# ---------------------------------------------------------------------------

def _bspline_np(m, t):
    # table over integer shifts: level p needs values at t - q, q = 0..m-p
    shifts = np.stack([t - q for q in range(m + 1)])
    table = np.where((shifts >= 0.0) & (shifts < 1.0), 1.0, 0.0)
    for p in range(1, m + 1):
        new = np.empty((m - p + 1,) + t.shape)
        for q in range(m - p + 1):
            tq = shifts[q]
            new[q] = (tq / p) * table[q] + ((p + 1 - tq) / p) * table[q + 1]
        table = new
    return table[0]


def _bspline_kernel(m, t):
    out = np.empty_like(t)
    for i in prange(t.shape[0]):
        v = t[i]
        if v < 0.0 or v >= m + 1:
            out[i] = 0.0
            continue
        work = np.empty(m + 1)
        for q in range(m + 1):
            tq = v - q
            work[q] = 1.0 if (tq >= 0.0 and tq < 1.0) else 0.0
        for p in range(1, m + 1):
            for q in range(m - p + 1):
                tq = v - q
                work[q] = (tq / p) * work[q] + ((p + 1 - tq) / p) * work[q + 1]
        out[i] = work[0]
    return out


# ---------------------------------------------------------------------------
# cosine phase sum: out[p] = sum_q c[q] * cos(dot(nodes[q], x[p]))
# (inverse Fourier quadrature of a real symmetric box spectrum)
# ---------------------------------------------------------------------------

def _cos_phase_sum_np(x, nodes, coeffs):
    return np.cos(x @ nodes.T) @ coeffs


def _cos_phase_sum_kernel(x, nodes, coeffs):
    np_, d = x.shape
    q = nodes.shape[0]
    out = np.zeros(np_)
    for p in prange(np_):
        acc = 0.0
        for j in range(q):
            phase = 0.0
            for t in range(d):
                phase += nodes[j, t] * x[p, t]
            acc += coeffs[j] * math.cos(phase)
        out[p] = acc
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_compiled: dict[str, object] = {}

_KERNELS = {
    "weighted_sq_dists": (_weighted_sq_dists_kernel, True),
    "matern32_gram": (_matern32_gram_kernel, True),
    "irwin_hall_pdf": (_irwin_hall_pdf_kernel, True),
    "irwin_hall_cdf": (_irwin_hall_cdf_kernel, True),
    "bspline": (_bspline_kernel, True),
    "cos_phase_sum": (_cos_phase_sum_kernel, True),
}


def _jit(name):
    fn = _compiled.get(name)
    if fn is None:
        py, parallel = _KERNELS[name]
        fn = njit(cache=True, parallel=parallel)(py)
        _compiled[name] = fn
    return fn


def weighted_sq_dists(a, b, w):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if _use_numba:
        return _jit("weighted_sq_dists")(a, b, w)
    return _weighted_sq_dists_np(a, b, w)


def matern32_gram(a, b, ell):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if _use_numba:
        return _jit("matern32_gram")(a, b, float(ell))
    return _matern32_gram_np(a, b, float(ell))


def irwin_hall_pdf(s, k):
    s = np.ascontiguousarray(s, dtype=np.float64)
    if _use_numba:
        return _jit("irwin_hall_pdf")(s.ravel(), int(k)).reshape(s.shape)
    return _irwin_hall_pdf_np(s, int(k))


def irwin_hall_cdf(s, k):
    s = np.ascontiguousarray(s, dtype=np.float64)
    if _use_numba:
        return _jit("irwin_hall_cdf")(s.ravel(), int(k)).reshape(s.shape)
    return _irwin_hall_cdf_np(s, int(k))


def bspline(m, t):
    t = np.ascontiguousarray(t, dtype=np.float64)
    if _use_numba:
        return _jit("bspline")(int(m), t.ravel()).reshape(t.shape)
    return _bspline_np(int(m), t)


def cos_phase_sum(x, nodes, coeffs):
    x = np.ascontiguousarray(x, dtype=np.float64)
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    if _use_numba:
        return _jit("cos_phase_sum")(x, nodes, coeffs)
    return _cos_phase_sum_np(x, nodes, coeffs)
