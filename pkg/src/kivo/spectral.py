"""B-spline Fourier machinery and frequency-masked hard instances.

Cardinal B-splines are repeated self-convolutions of the unit indicator.
Two indexing conventions coexist in the literature; here

* :func:`bspline_eval` counts convolution *steps*: order m has m + 1
  indicator factors and support [0, m + 1];
* :func:`bspline_fourier` is the transform of the spline with m indicator
  *factors*, ``exp(-i m w / 2) (sin(w/2) / (w/2))^m`` -- i.e. the
  transform of ``bspline_eval(m - 1, .)``.

The hard-instance generator combines an even centered B-spline, band-pass
masked in the treatment direction through compact frequency boxes, with
disjointly shifted B-splines in the covariate direction.  The resulting
functions are well separated in L2 yet nearly invisible after conditional
expectation, which is what makes them useful stress fixtures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from . import _accel
from .synthdata import make_rng


class SpectralError(ValueError):
    pass


def bspline_eval(m_order: int, t) -> np.ndarray | float:
    """Cardinal B-spline after m_order self-convolutions of 1_[0,1)."""
    if m_order < 0:
        raise SpectralError("m_order must be non-negative")
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    vals = _accel.bspline(m_order, np.atleast_1d(t))
    return float(vals[0]) if scalar else vals


def bspline_fourier(m_order: int, omega) -> np.ndarray | complex:
    """Fourier transform of the B-spline with m_order indicator factors."""
    if m_order < 1:
        raise SpectralError("m_order must be at least 1")
    omega = np.asarray(omega, dtype=float)
    scalar = omega.ndim == 0
    w = np.atleast_1d(omega)
    half = w / 2.0
    sinc = np.ones_like(half)
    nz = half != 0.0
    sinc[nz] = np.sin(half[nz]) / half[nz]
    vals = np.exp(-1j * m_order * half) * sinc**m_order
    return complex(vals[0]) if scalar else vals


def centered_bspline_fourier(m_order: int, omega) -> np.ndarray:
    """Transform of the even spline with m_order factors shifted to [-m/2, m/2]."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    half = omega / 2.0
    sinc = np.ones_like(half)
    nz = half != 0.0
    sinc[nz] = np.sin(half[nz]) / half[nz]
    return sinc**m_order


@dataclass(frozen=True)
class FreqBox:
    """Axis-aligned box in the (unscaled) frequency domain."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains_within(self, low: float, high: float) -> bool:
        return all(low <= a and b <= high for a, b in zip(self.lo, self.hi))

    def disjoint(self, other: "FreqBox") -> bool:
        return any(b <= other.lo[j] or other.hi[j] <= a
                   for j, (a, b) in enumerate(zip(self.lo, self.hi)))


_BAND_LO = 1.1 * math.pi
_BAND_HI = 1.95 * math.pi


@dataclass(frozen=True)
class HardInstanceSpec:
    """Geometry of the masked-B-spline function class."""

    resolution: int               # dyadic resolution, drives both axes
    m_order: int                  # even spline factor count, > max(s_x, s_o)
    s_x: float = 1.0
    s_o: float = 1.0
    d_x: int = 1
    d_o: int = 1
    zeta: float = 3.0             # mask spacing, >= 3 keeps shifted masks disjoint
    eps0: float | None = None     # amplitude; None = normalize sup to 0.1
    quad_order: int = 32

    def __post_init__(self):
        if self.resolution < 1:
            raise SpectralError("resolution must be at least 1")
        if self.m_order % 2 != 0 or self.m_order <= max(self.s_x, self.s_o):
            raise SpectralError("m_order must be even and exceed max(s_x, s_o)")
        if self.zeta < 3.0:
            raise SpectralError("zeta must be at least 3 for disjoint shifted masks")
        if self.d_x < 1 or self.d_o < 0:
            raise SpectralError("need d_x >= 1 and d_o >= 0")

    @property
    def s_min(self) -> float:
        return min(self.s_x, self.s_o)

    @property
    def x_scale(self) -> float:
        """2^(resolution * s_min / s_x), the treatment-axis dilation."""
        return 2.0 ** (self.resolution * self.s_min / self.s_x)

    @property
    def o_scale(self) -> float:
        return 2.0 ** math.floor(self.resolution * self.s_min / self.s_o)

    def x_locations(self) -> list[tuple[int, ...]]:
        lmax = math.floor(0.8 * math.pi / self.zeta * self.x_scale)
        axis = [l for l in range(lmax + 1)
                if self.freq_box((l,) * self.d_x).contains_within(_BAND_LO, _BAND_HI)]
        return sorted(product(axis, repeat=self.d_x))

    def o_locations(self) -> list[tuple[int, ...]]:
        if self.d_o == 0:
            return [()]
        top = int(self.o_scale)
        axis = list(range(0, top + 1, 2 * self.m_order))
        return sorted(product(axis, repeat=self.d_o))

    def locations(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(lx, lo) for lx in self.x_locations() for lo in self.o_locations()]

    def freq_box(self, lx: tuple[int, ...]) -> FreqBox:
        w = 2.0 ** (-self.resolution * self.s_min / self.s_x)
        lo = tuple(_BAND_LO + self.zeta * l * w for l in lx)
        return FreqBox(lo=lo, hi=tuple(v + w for v in lo))

    @property
    def amplitude_scale(self) -> float:
        """2^(-K s_min (1 - d_x / (2 s_x))), the class-level normalization."""
        return 2.0 ** (-self.resolution * self.s_min * (1.0 - self.d_x / (2.0 * self.s_x)))


@lru_cache(maxsize=64)
def _box_quadrature(spec: HardInstanceSpec, lx: tuple[int, ...], order: int):
    """Gauss-Legendre nodes over the frequency box and inverse-FT coefficients."""
    box = spec.freq_box(lx)
    pts, wts = np.polynomial.legendre.leggauss(order)
    axes_nodes, axes_weights = [], []
    for a, b in zip(box.lo, box.hi):
        axes_nodes.append(0.5 * (b - a) * pts + 0.5 * (a + b))
        axes_weights.append(0.5 * (b - a) * wts)
    if spec.d_x == 1:
        nodes = axes_nodes[0][:, None]
        weights = axes_weights[0]
    else:
        grids = np.meshgrid(*axes_nodes, indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        wgrids = np.meshgrid(*axes_weights, indexing="ij")
        weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    fm = np.prod([centered_bspline_fourier(spec.m_order, nodes[:, j])
                  for j in range(spec.d_x)], axis=0)
    coeffs = weights * fm / (2.0 * math.pi) ** spec.d_x
    return nodes, np.asarray(coeffs)


class QuadratureOrderError(RuntimeError):
    pass


@lru_cache(maxsize=64)
def _validate_quadrature(spec: HardInstanceSpec) -> bool:
    """Order-doubling check on probe points spanning the spline's reach."""
    lx0 = spec.x_locations()[0]
    probes = np.linspace(-10.0 * (spec.m_order + 1), 10.0 * (spec.m_order + 1),
                         129).reshape(-1, 1)
    probes = np.repeat(probes, spec.d_x, axis=1) / spec.x_scale
    lo = _omega_eval_raw(spec, lx0, probes, spec.quad_order)
    hi = _omega_eval_raw(spec, lx0, probes, 2 * spec.quad_order)
    peak = np.abs(hi).max()
    if peak == 0.0 or np.abs(lo - hi).max() > 1e-6 * peak:
        raise QuadratureOrderError(
            "quadrature order %d insufficient: order-doubling disagreement %.3e of peak"
            % (spec.quad_order, np.abs(lo - hi).max() / max(peak, 1e-300)))
    return True


def _omega_eval_raw(spec: HardInstanceSpec, lx: tuple[int, ...], x: np.ndarray,
                    order: int) -> np.ndarray:
    nodes, coeffs = _box_quadrature(spec, lx, order)
    return _accel.cos_phase_sum(x * spec.x_scale, nodes, coeffs)


def omega_eval(spec: HardInstanceSpec, lx, x) -> np.ndarray | float:
    """Band-passed spline factor: real part of the box-restricted inverse FT."""
    lx = tuple(int(v) for v in np.atleast_1d(lx))
    if lx not in set(spec.x_locations()):
        raise SpectralError("location %r outside the admissible x-range" % (lx,))
    _validate_quadrature(spec)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (x.ndim == 1 and spec.d_x > 1 and x.shape[0] == spec.d_x)
    pts = x.reshape(-1, spec.d_x)
    vals = _omega_eval_raw(spec, lx, pts, spec.quad_order)
    return float(vals[0]) if scalar and pts.shape[0] == 1 else vals


def covariate_bspline(spec: HardInstanceSpec, lo, o) -> np.ndarray:
    """Shifted covariate spline factor with disjoint supports across locations."""
    o = np.asarray(o, dtype=float).reshape(-1, spec.d_o)
    vals = np.ones(o.shape[0])
    for j, loc in enumerate(lo):
        vals *= _accel.bspline(spec.m_order - 1, spec.o_scale * o[:, j] - loc)
    return vals


@dataclass(frozen=True)
class HardInstance:
    """Evaluable masked-spline combination f_v plus its metadata."""

    spec: HardInstanceSpec
    v: tuple[int, ...]
    eps0: float

    @property
    def scale(self) -> float:
        return self.eps0 * self.spec.amplitude_scale

    def evaluate(self, x, o=None) -> np.ndarray:
        spec = self.spec
        x = np.asarray(x, dtype=float).reshape(-1, spec.d_x)
        if spec.d_o:
            o = np.asarray(o, dtype=float).reshape(-1, spec.d_o)
            if o.shape[0] != x.shape[0]:
                raise SpectralError("x and o row counts differ")
        _validate_quadrature(spec)
        out = np.zeros(x.shape[0])
        locs = spec.locations()
        xlocs = spec.x_locations()
        olocs = spec.o_locations()
        bits = dict(zip(locs, self.v))
        xvals = {lx: _omega_eval_raw(spec, lx, x, spec.quad_order) for lx in xlocs}
        for lo in olocs:
            xsum = np.zeros(x.shape[0])
            active = False
            for lx in xlocs:
                if bits[(lx, lo)]:
                    xsum += xvals[lx]
                    active = True
            if not active:
                continue
            out += xsum * (covariate_bspline(spec, lo, o) if spec.d_o else 1.0)
        return self.scale * out

    def metadata(self) -> dict:
        spec = self.spec
        return {
            "resolution": spec.resolution, "m_order": spec.m_order,
            "s_x": spec.s_x, "s_o": spec.s_o, "d_x": spec.d_x, "d_o": spec.d_o,
            "zeta": spec.zeta, "eps0": self.eps0,
            "n_locations": len(self.v), "active_bits": int(sum(self.v)),
        }


def _normalizing_eps0(spec: HardInstanceSpec) -> float:
    ones = tuple([1] * len(spec.locations()))
    probe = HardInstance(spec=spec, v=ones, eps0=1.0)
    w = 10.0 * (spec.m_order + 1) / spec.x_scale
    xg = np.linspace(-w, w, 257)
    if spec.d_x > 1:
        xg = np.stack([g.ravel() for g in np.meshgrid(*([xg] * spec.d_x), indexing="ij")], axis=1)
    else:
        xg = xg[:, None]
    if spec.d_o:
        og = np.linspace(0.0, 1.0, 129)
        if spec.d_o > 1:
            og = np.stack([g.ravel() for g in np.meshgrid(*([og] * spec.d_o), indexing="ij")], axis=1)
        else:
            og = og[:, None]
        xx = np.repeat(xg, og.shape[0], axis=0)
        oo = np.tile(og, (xg.shape[0], 1))
        sup = np.abs(probe.evaluate(xx, oo)).max()
    else:
        sup = np.abs(probe.evaluate(xg)).max()
    if sup == 0.0:
        raise SpectralError("degenerate instance class: all-ones member vanishes")
    return 0.1 / sup


def hard_instance(spec: HardInstanceSpec, v=None) -> HardInstance:
    """Build f_v; v may be a bit sequence, or None for the all-ones member."""
    locs = spec.locations()
    if v is None:
        v = [1] * len(locs)
    v = tuple(int(b) for b in np.atleast_1d(np.asarray(v)).ravel())
    if len(v) != len(locs):
        raise SpectralError("bit vector length %d != number of locations %d"
                            % (len(v), len(locs)))
    if any(b not in (0, 1) for b in v):
        raise SpectralError("v must be 0/1 valued")
    eps0 = spec.eps0 if spec.eps0 is not None else _normalizing_eps0(spec)
    return HardInstance(spec=spec, v=v, eps0=eps0)


def sample_codewords(spec: HardInstanceSpec, count: int, seed: int,
                     max_tries: int = 10000) -> list[tuple[int, ...]]:
    """Random bit assignments with pairwise Hamming distance >= |L| / 8."""
    if count > 64:
        raise SpectralError("codeword sampling supports at most 64 words")
    nloc = len(spec.locations())
    min_dist = nloc / 8.0
    rng = make_rng(seed, stream=7)
    words: list[tuple[int, ...]] = [tuple([0] * nloc)]
    tries = 0
    while len(words) < count:
        cand = tuple(int(b) for b in rng.integers(0, 2, nloc))
        if all(sum(a != b for a, b in zip(cand, w)) >= min_dist for w in words):
            words.append(cand)
        tries += 1
        if tries > max_tries:
            raise SpectralError("rejection sampling failed to reach %d codewords" % count)
    return words[:count]


# ---------------------------------------------------------------------------
# pairwise statistics under a grid measure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridMeasure:
    """Tensor quadrature grid with per-axis weights (density times cell size)."""

    x_grid: np.ndarray
    x_weights: np.ndarray
    o_grid: np.ndarray
    o_weights: np.ndarray


def bump_uniform_measure(gx: int = 512, go: int = 512) -> GridMeasure:
    """Bump-distributed treatment on (-1/2, 1/2) times uniform covariate on [0,1]."""
    from .synthdata import BumpDensitySpec, bump_density
    xs = (np.arange(gx) + 0.5) / gx - 0.5
    ws = bump_density(BumpDensitySpec(1), xs[:, None]) / gx
    os_ = (np.arange(go) + 0.5) / go
    wo = np.full(go, 1.0 / go)
    return GridMeasure(x_grid=xs, x_weights=np.asarray(ws), o_grid=os_, o_weights=wo)


def _grid_eval(inst: HardInstance, measure: GridMeasure) -> np.ndarray:
    gx, go = len(measure.x_grid), len(measure.o_grid)
    xx = np.repeat(measure.x_grid, go)[:, None]
    oo = np.tile(measure.o_grid, gx)[:, None]
    return inst.evaluate(xx, oo).reshape(gx, go)


def instance_pair_stats(inst_v: HardInstance, inst_vp: HardInstance,
                        measure: GridMeasure, sigma: float, n: int,
                        operator=None) -> tuple[float, float]:
    """L2 separation of the pair and the n-sample KL upper bound.

    ``operator`` maps grid values (gx, go) to projected values with an
    associated row-weight vector; None means the identity (exogenous
    regime), under which the KL bound is n ||f_v||^2 / (2 sigma^2).
    """
    if inst_v.spec != inst_vp.spec:
        raise SpectralError("instances must share a spec")
    if sigma <= 0:
        raise SpectralError("sigma must be positive")
    fv = _grid_eval(inst_v, measure)
    fvp = _grid_eval(inst_vp, measure)
    wx, wo = measure.x_weights, measure.o_weights
    l2_sep = float(np.einsum("ij,i,j->", (fv - fvp) ** 2, wx, wo))
    if operator is None:
        tnorm = float(np.einsum("ij,i,j->", fv**2, wx, wo))
    else:
        tf, z_weights = operator(fv)
        tnorm = float(np.einsum("ij,i,j->", np.asarray(tf) ** 2, z_weights, wo))
    kl_upper = n * tnorm / (2.0 * sigma**2)
    return l2_sep, kl_upper
