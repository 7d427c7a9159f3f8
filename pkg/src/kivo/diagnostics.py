"""Operator-level verification: discretized conditional expectations on grids.

The circle process admits an explicit transition density: the treatment is
the instrument shifted by W whose density is a rescaled Irwin-Hall (sum of
k uniforms).  Discretizing p(x | z) on uniform circle grids gives a
row-stochastic matrix whose action reproduces the operator's two defining
behaviors: covariate-only functions pass through untouched, treatment
frequencies contract by the closed-form sinc powers.

Rows hold exact per-cell masses of the transition density (CDF
differences), not point samples; point sampling is too coarse for the
percent-level contraction checks at the default 512-point grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .synthdata import CircleDgpSpec, contractivity_ratio, make_rng


class DiagnosticsError(ValueError):
    pass


def irwin_hall_pdf(s, k: int) -> np.ndarray:
    """Density of U_1 + ... + U_k at s; support [0, k]."""
    if not 1 <= k <= 10:
        raise DiagnosticsError("k must lie in [1, 10]")
    return _accel.irwin_hall_pdf(np.asarray(s, dtype=float), k)


def shift_density(w, k: int) -> np.ndarray:
    """Density of W = 0.1 (U_1 + ... + U_k): 10 f_IH(10 w)."""
    return 10.0 * irwin_hall_pdf(10.0 * np.asarray(w, dtype=float), k)


@dataclass(frozen=True)
class OperatorGrid:
    """Row-stochastic discretizations of T and its adjoint on circle grids."""

    markov: np.ndarray        # n_z x n_x, rows are p(x-cell | z_i)
    adjoint: np.ndarray       # n_x x n_z, rows are p(z-cell | x_j)
    z_grid: np.ndarray
    x_grid: np.ndarray
    spec: CircleDgpSpec

    def __post_init__(self):
        rs = self.markov.sum(axis=1)
        if np.abs(rs - 1.0).max() > 1e-10 or self.markov.min() < 0:
            raise DiagnosticsError("markov rows must be non-negative and sum to 1")


def _cell_masses(points: np.ndarray, n_cells: int, k: int) -> np.ndarray:
    """masses[i, j] = P(point_i + W lands in cell j of a uniform circle grid)."""
    edges = np.arange(n_cells + 1) / n_cells
    # W has support [0, 0.1 k] within one period; CDF differences per cell,
    # including the wrapped copy of the arc
    out = np.zeros((len(points), n_cells))
    for wrap in (0.0, 1.0):
        lo = edges[None, :-1] + wrap - points[:, None]
        hi = edges[None, 1:] + wrap - points[:, None]
        out += _accel.irwin_hall_cdf(10.0 * hi, k) - _accel.irwin_hall_cdf(10.0 * lo, k)
    return out


def build_operator(spec: CircleDgpSpec, n_z: int = 512, n_x: int = 512) -> OperatorGrid:
    """Discretize E[. | Z] and E[. | X] on uniform grids of grid-cell centers."""
    if n_z < 16 or n_x < 16:
        raise DiagnosticsError("grids must have at least 16 points")
    z = (np.arange(n_z) + 0.5) / n_z
    x = (np.arange(n_x) + 0.5) / n_x
    markov = _cell_masses(z, n_x, spec.k)
    markov /= markov.sum(axis=1, keepdims=True)
    # p(z | x) is the reversed shift: Z = X - W mod 1
    adjoint = _cell_masses(-x, n_z, spec.k)[:, ::-1]
    # reversing cells of the -x construction yields masses of X - W per z-cell
    adjoint = np.roll(adjoint, -1, axis=1)
    adjoint /= adjoint.sum(axis=1, keepdims=True)
    return OperatorGrid(markov=markov, adjoint=adjoint, z_grid=z, x_grid=x, spec=spec)


def apply_t(op: OperatorGrid, f_grid: np.ndarray) -> np.ndarray:
    """T f on the z-grid; f_grid is indexed by (x, ...) along axis 0."""
    return np.tensordot(op.markov, f_grid, axes=(1, 0))


def apply_tstar(op: OperatorGrid, h_grid: np.ndarray) -> np.ndarray:
    return np.tensordot(op.adjoint, h_grid, axes=(1, 0))


def apply_tstar_t(op: OperatorGrid, f_grid: np.ndarray) -> np.ndarray:
    return apply_tstar(op, apply_t(op, f_grid))


def partial_identity_check(op: OperatorGrid, g, o_grid=None) -> float:
    """Max deviation of T*T applied to a covariate-only function.

    ``g`` maps covariate values to reals; the function is constant across
    the treatment per covariate slice, so the discretized operator must
    return it unchanged up to grid error.
    """
    if o_grid is None:
        o_grid = (np.arange(64) + 0.5) / 64
    o_grid = np.asarray(o_grid, dtype=float)
    gvals = np.asarray(g(o_grid), dtype=float)
    f_grid = np.broadcast_to(gvals, (len(op.x_grid), len(o_grid)))
    result = apply_tstar_t(op, f_grid)
    return float(np.abs(result - gvals[None, :]).max())


def grid_contraction(op: OperatorGrid, f_x: np.ndarray) -> float:
    """||T*T f|| / ||f|| on the grid for a treatment-only function."""
    return float(np.linalg.norm(apply_tstar_t(op, f_x)) / np.linalg.norm(f_x))


@dataclass(frozen=True)
class ProbeRow:
    m: int
    log_m: float
    ratio: float
    log_ratio: float


@dataclass(frozen=True)
class ProbeResult:
    k: int
    slope: float
    rows: tuple[ProbeRow, ...]
    mc_ratios: tuple[float, ...] | None = None
    mc_slope: float | None = None


def contractivity_probe(k: int, freqs, mc_samples: int = 0, seed: int = 0) -> ProbeResult:
    """Log-log contraction ratios over frequencies; slope is exactly -2k
    on frequencies congruent to 5 mod 10 where the sine factor is 1.
    """
    freqs = [int(m) for m in freqs]
    if len(freqs) < 2:
        raise DiagnosticsError("need at least two frequencies")
    for m in freqs:
        if m % 10 == 0:
            raise DiagnosticsError("frequency %d hits a zero of the operator" % m)
        if m % 10 != 5:
            raise DiagnosticsError("frequencies must be 5 mod 10 so the sine factor is 1, got %d" % m)
    rows = []
    for m in freqs:
        r = contractivity_ratio(m, k)
        rows.append(ProbeRow(m=m, log_m=math.log(m), ratio=r, log_ratio=math.log(r)))
    slope = _ls_slope([r.log_m for r in rows], [r.log_ratio for r in rows])
    mc_ratios = mc_slope = None
    if mc_samples:
        mc_ratios = tuple(mc_contractivity_ratio(m, k, mc_samples, seed=seed + i)
                          for i, m in enumerate(freqs))
        mc_slope = _ls_slope([r.log_m for r in rows], [math.log(v) for v in mc_ratios])
    return ProbeResult(k=k, slope=slope, rows=tuple(rows),
                       mc_ratios=mc_ratios, mc_slope=mc_slope)


def _ls_slope(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    xc = xs - xs.mean()
    return float(xc @ (ys - ys.mean()) / (xc @ xc))


def mc_contractivity_ratio(m: int, k: int, samples: int = 1_000_000, seed: int = 0,
                           a: float = 0.5) -> float:
    """Monte-Carlo ||Tf||^2 / ||f||^2 for f = cos(2 pi m x)(1 + a cos(2 pi o)).

    ||Tf||^2 uses the two-independent-shifts identity
    E[(E[f|Z,O])^2] = E[f(Z+W, O) f(Z+W', O)] with W, W' independent,
    so the estimate never touches the closed form it is checking.
    """
    rng = make_rng(seed, stream=11)
    z = rng.uniform(0.0, 1.0, samples)
    o = rng.uniform(0.0, 1.0, samples)
    w1 = 0.1 * rng.uniform(0.0, 1.0, (k, samples)).sum(axis=0)
    w2 = 0.1 * rng.uniform(0.0, 1.0, (k, samples)).sum(axis=0)
    h = 1.0 + a * np.cos(2.0 * np.pi * o)
    f1 = np.cos(2.0 * np.pi * m * (z + w1)) * h
    f2 = np.cos(2.0 * np.pi * m * (z + w2)) * h
    num = float(np.mean(f1 * f2))
    den = float(np.mean(f1**2))
    return num / den


def probe_table_csv(result: ProbeResult) -> str:
    lines = ["m,log_m,ratio,log_ratio,mc_ratio"]
    for i, row in enumerate(result.rows):
        mc = "" if result.mc_ratios is None else "%.17g" % result.mc_ratios[i]
        lines.append("%d,%.17g,%.17g,%.17g,%s" % (row.m, row.log_m, row.ratio, row.log_ratio, mc))
    lines.append("slope,%.17g,,,%s" % (result.slope,
                                       "" if result.mc_slope is None else "%.17g" % result.mc_slope))
    return "\n".join(lines) + "\n"
