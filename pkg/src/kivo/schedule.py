"""Theory-driven hyperparameter schedules and grid cross-validation.

The rate analysis ties the two Gaussian lengthscales together through a
balance condition ``gamma_x^(s_x + d_x eta1) = gamma_o^(s_o)`` and fixes
the Stage-II ridge at ``1/n``; the Stage-I ridge decays polynomially with
an exponent built from smoothness orders of the conditional density.
Cross-validation searches a multiplicative grid around that schedule using
the exact leave-one-out shortcut on the Stage-II system.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import solver
from .estimator import Dataset, Stage1Map, fit_stage1
from .kernels import KernelFamily, KernelSpec, gram


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class RateSpec:
    """Smoothness/ill-posedness exponents driving the schedules."""

    s_x: float
    s_o: float
    d_x: int = 1
    d_o: int = 1
    d_z: int = 1
    eta0: float = 0.0
    eta1: float = 0.0
    sigma: float = 1.0   # subgaussian noise scale; reporting metadata only

    def __post_init__(self):
        if self.s_x <= 0 or self.s_o <= 0:
            raise ScheduleError("smoothness must be positive")
        if self.d_x < 1:
            raise ScheduleError("treatment dimension must be at least 1")
        if self.d_o < 0 or self.d_z < 0:
            raise ScheduleError("dimensions must be non-negative")
        if not (self.eta0 >= self.eta1 >= 0.0):
            raise ScheduleError("need eta0 >= eta1 >= 0, got eta0=%g eta1=%g"
                                % (self.eta0, self.eta1))

    @property
    def smoothing_gain(self) -> float:
        """The combination s_x/d_x + eta1 that every schedule exponent uses."""
        return self.s_x / self.d_x + self.eta1


@dataclass(frozen=True)
class ScheduleOut:
    gamma_x: float
    gamma_o: float
    lam: float
    xi: float
    m_o: int
    m_z: int
    m_dagger: float
    d_dagger: float
    zeta: float


def lengthscales(n: int, rs: RateSpec) -> tuple[float, float]:
    """Stage-II Gaussian lengthscales as powers of the sample size."""
    if n < 1:
        raise ScheduleError("n must be at least 1")
    a = rs.smoothing_gain
    denom = 1.0 + 2.0 * a + (rs.d_o / rs.s_o) * a
    gamma_x = float(n) ** (-(1.0 / rs.d_x) / denom)
    gamma_o = float(n) ** (-(a / rs.s_o) / denom)
    return gamma_x, gamma_o


_NO_COVARIATES = 0   # sentinel order when d_o = 0


def smoothness_orders(rs: RateSpec) -> tuple[int, int]:
    """Required derivative orders (m_o, m_z) of the conditional density."""
    if rs.d_o == 0:
        if rs.d_z > 0:
            raise ScheduleError("m_z is defined through m_o/d_o; undefined for d_o=0 with d_z>0")
        return _NO_COVARIATES, _NO_COVARIATES
    a = rs.smoothing_gain
    inner = (rs.d_o / 2.0) * (1.0 + 2.0 * a + (rs.d_o / rs.s_o) * a) / (1.0 + 2.0 * a)
    m_o = math.ceil(inner) + 1
    m_z = math.ceil(rs.d_z / rs.d_o * m_o)
    return m_o, m_z


def stage_regs(n: int, n_tilde: int, rs: RateSpec, t_z: float, t_o: float,
               zeta: float = 0.05, cme_optimal_xi: bool = False) -> tuple[float, float]:
    """Ridge schedule: lambda = 1/n and a polynomial Stage-I decay.

    ``cme_optimal_xi`` switches the Stage-I exponent denominator from
    ``m + d + zeta`` to ``m + d/2 + zeta`` (the rate at which the
    embedding regression itself is optimal); both forms appear in the
    analysis and the choice is left to the caller.
    """
    if n < 1 or n_tilde < 1:
        raise ScheduleError("sample sizes must be at least 1")
    if zeta < 0:
        raise ScheduleError("zeta must be non-negative")
    m_o, m_z = smoothness_orders(rs)
    _validate_band(m_o, rs.d_o, t_o, "t_o")
    _validate_band(m_z, rs.d_z, t_z, "t_z")
    terms_m = []
    terms_d = []
    if rs.d_z > 0:
        terms_m.append(m_z / t_z)
        terms_d.append(rs.d_z / t_z)
    if rs.d_o > 0:
        terms_m.append(m_o / t_o)
        terms_d.append(rs.d_o / t_o)
    m_dag = min(terms_m) if terms_m else 1.0
    d_dag = max(terms_d) if terms_d else 0.0
    denom = m_dag + (d_dag / 2.0 if cme_optimal_xi else d_dag) + zeta
    xi = float(n_tilde) ** (-1.0 / denom)
    return 1.0 / n, xi


def _validate_band(m: int, d: int, t: float, name: str) -> None:
    if d == 0:
        return
    if not (2.0 * t >= m > t > d / 2.0):
        warnings.warn("%s=%g violates the admissible band 2t >= m > t > d/2 for m=%d, d=%d"
                      % (name, t, m, d), stacklevel=3)


def make_schedule(n: int, n_tilde: int, rs: RateSpec, t_z: float, t_o: float,
                  zeta: float = 0.05, cme_optimal_xi: bool = False) -> ScheduleOut:
    gamma_x, gamma_o = lengthscales(n, rs)
    m_o, m_z = smoothness_orders(rs)
    lam, xi = stage_regs(n, n_tilde, rs, t_z, t_o, zeta, cme_optimal_xi)
    terms_m = [v for v, d in ((m_z / t_z, rs.d_z), (m_o / t_o, rs.d_o)) if d > 0]
    terms_d = [v for v, d in ((rs.d_z / t_z, rs.d_z), (rs.d_o / t_o, rs.d_o)) if d > 0]
    return ScheduleOut(gamma_x=gamma_x, gamma_o=gamma_o, lam=lam, xi=xi,
                       m_o=m_o, m_z=m_z,
                       m_dagger=min(terms_m) if terms_m else 1.0,
                       d_dagger=max(terms_d) if terms_d else 0.0,
                       zeta=zeta)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

DEFAULT_GRID_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


def default_grid(n: int, rs: RateSpec,
                 factors=DEFAULT_GRID_FACTORS) -> list[tuple[float, float, float]]:
    """Multiplicative grid around the schedule; lambda pinned at 1/n."""
    gx, go = lengthscales(n, rs)
    lam = 1.0 / n
    return [(gx * fx, go * fo, lam) for fx in factors for fo in factors]


@dataclass(frozen=True)
class CvRow:
    gamma_x: float
    gamma_o: float
    lam: float
    cv_value: float
    selected: bool


def cv_select(data: Dataset, grid, j_builder) -> tuple[tuple[float, float, float], list[CvRow]]:
    """Pick the grid tuple minimizing exact leave-one-out squared error.

    ``j_builder()`` must return the Stage-I map; it is invoked once since
    no grid coordinate touches Stage I.  Grid order is preserved in the
    returned table; exact ties go to the larger (gamma_x, gamma_o, lambda).
    """
    grid = [tuple(map(float, g)) for g in grid]
    if not grid:
        raise ScheduleError("empty cross-validation grid")
    if data.n < 3:
        raise ScheduleError("cross-validation needs at least 3 stage-2 rows")
    stage1: Stage1Map = j_builder()
    J = stage1.J
    y = data.stage2.y
    n = data.n
    # J^T K_xx J is shared by every gamma_o at fixed gamma_x
    values = []
    by_gx: dict[float, np.ndarray] = {}
    for gx, go, lam in grid:
        g = by_gx.get(gx)
        if g is None:
            kx = KernelSpec(KernelFamily.GAUSSIAN, (gx,), (data.d_x,))
            kxx = gram(data.stage1.x, data.stage1.x, kx).entries
            g = J.T @ kxx @ J
            by_gx[gx] = g
        k2 = g
        if data.d_o:
            ko = KernelSpec(KernelFamily.GAUSSIAN, (go,), (data.d_o,))
            k2 = g * gram(data.stage2.o, data.stage2.o, ko).entries
        residuals = solver.loo_residuals(k2, n * lam, y)
        values.append(float(np.mean(residuals**2)))
    best = min(range(len(grid)), key=lambda i: (values[i], tuple(-v for v in grid[i])))
    table = [CvRow(g[0], g[1], g[2], v, i == best)
             for i, (g, v) in enumerate(zip(grid, values))]
    return grid[best], table


def cv_table_csv(table: list[CvRow]) -> str:
    lines = ["gamma_x,gamma_o,lambda,cv_value,selected"]
    for row in table:
        lines.append("%.17g,%.17g,%.17g,%.17g,%d"
                     % (row.gamma_x, row.gamma_o, row.lam, row.cv_value, int(row.selected)))
    return "\n".join(lines) + "\n"
