"""Kernel evaluation and Gram-matrix construction.

Two families are supported:

* anisotropic Gaussian, ``k(x, x') = exp(-sum_j (x_j - x'_j)^2 / g_b(j)^2)``
  with one lengthscale per input block;
* Matern-3/2, ``k(x, x') = prod_b (1 + sqrt3 r_b / l_b) exp(-sqrt3 r_b / l_b)``
  with the per-block Euclidean distance ``r_b`` and one lengthscale per block.

Blocks let a single spec describe a product kernel over concatenated
inputs (treatment block x covariate block); a Gram over the concatenation
equals the elementwise product of per-block Grams.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _accel


class KernelFamily(str, enum.Enum):
    GAUSSIAN = "AnisotropicGaussian"
    MATERN32 = "Matern32"


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus one lengthscale and one dimension per block."""

    family: KernelFamily
    lengthscales: tuple[float, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        ls = tuple(float(v) for v in np.atleast_1d(np.asarray(self.lengthscales, dtype=float)))
        dims = tuple(int(v) for v in np.atleast_1d(np.asarray(self.dims)))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "dims", dims)
        if len(ls) != len(dims):
            raise KernelError("one lengthscale per block required: %d lengthscales, %d blocks"
                              % (len(ls), len(dims)))
        for v in ls:
            if not np.isfinite(v) or v <= 0.0:
                raise KernelError("lengthscales must be strictly positive and finite, got %r" % (v,))
        for d in dims:
            if d < 0:
                raise KernelError("block dimensions must be non-negative")

    @property
    def dim(self) -> int:
        return sum(self.dims)


def gaussian_spec(*lengthscales_dims: tuple[float, int]) -> KernelSpec:
    ls, dims = zip(*lengthscales_dims)
    return KernelSpec(KernelFamily.GAUSSIAN, ls, dims)


def matern_spec(*lengthscales_dims: tuple[float, int]) -> KernelSpec:
    ls, dims = zip(*lengthscales_dims)
    return KernelSpec(KernelFamily.MATERN32, ls, dims)


@dataclass(frozen=True)
class GramMatrix:
    """Dense kernel matrix plus the identifiers of the points it was built from."""

    entries: np.ndarray
    row_points: np.ndarray | None = None
    col_points: np.ndarray | None = None

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)


def _as_points(p, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a single point of dimension len(arr) when it matches, else a column
        arr = arr.reshape(1, -1) if arr.shape[0] == dim else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise KernelError("%s: expected points of dimension %d, got shape %r" % (what, dim, arr.shape))
    return arr


def _block_slices(spec: KernelSpec):
    start = 0
    for ls, d in zip(spec.lengthscales, spec.dims):
        yield ls, slice(start, start + d)
        start += d


def gram(rows, cols, spec: KernelSpec) -> GramMatrix:
    """Kernel matrix k(rows[i], cols[j]); symmetric PSD when rows is cols."""
    a = _as_points(rows, spec.dim, "rows")
    b = _as_points(cols, spec.dim, "cols")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise KernelError("empty point sequence")
    if spec.family is KernelFamily.GAUSSIAN:
        w = np.concatenate([np.full(d, 1.0 / ls**2) for ls, d in zip(spec.lengthscales, spec.dims)]) \
            if spec.dim > 0 else np.empty(0)
        if spec.dim == 0:
            entries = np.ones((a.shape[0], b.shape[0]))
        else:
            entries = np.exp(-_accel.weighted_sq_dists(a, b, w))
    else:
        entries = np.ones((a.shape[0], b.shape[0]))
        for ls, sl in _block_slices(spec):
            if sl.stop == sl.start:
                continue
            entries *= _accel.matern32_gram(a[:, sl], b[:, sl], ls)
    return GramMatrix(entries, row_points=a, col_points=b)


def _eval_pair(x, xp, spec: KernelSpec) -> float:
    a = _as_points(x, spec.dim, "x")
    b = _as_points(xp, spec.dim, "x'")
    if a.shape[0] != 1 or b.shape[0] != 1:
        raise KernelError("eval expects single points")
    return float(gram(a, b, spec).entries[0, 0])


def gaussian_eval(x, xp, spec: KernelSpec) -> float:
    """Anisotropic Gaussian kernel value for one pair of points."""
    if spec.family is not KernelFamily.GAUSSIAN:
        raise KernelError("spec.family must be AnisotropicGaussian")
    return _eval_pair(x, xp, spec)


def matern32_eval(x, xp, spec: KernelSpec) -> float:
    """Matern-3/2 kernel value for one pair of points."""
    if spec.family is not KernelFamily.MATERN32:
        raise KernelError("spec.family must be Matern32")
    return _eval_pair(x, xp, spec)


def psd_floor(entries: np.ndarray) -> float:
    """Tolerance below zero allowed for the smallest eigenvalue of a square Gram."""
    n = entries.shape[0]
    return 1e-8 * np.trace(entries) / n
