"""Synthetic data-generating processes with analytically known operators.

The main process lives on the circle: the instrument, covariate, and k
latent uniforms are independent U[0,1), the treatment is Z plus a small
latent shift W = 0.1 (U_1 + ... + U_k) wrapped mod 1, and the target is

    f*(x, o) = amp * cos(2 pi m x) * (1 + a cos(2 pi o)).

Because W's characteristic function is a k-th sinc power, the conditional
expectation operator acts diagonally on x-frequencies with coefficients
(10 / (pi n))^k sin^k(0.1 pi n); both the projection of f* and the exact
norm-contraction ratio are closed-form, which makes the process usable as
a verification oracle.

Randomness is counter-based (Philox keyed by seed and stream id), so
sampling is splittable and reproducible for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .estimator import Dataset, EvalData, Stage1Data, Stage2Data


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) pairs give independent streams."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF,
                                                     stream & 0xFFFFFFFFFFFFFFFF]))


@dataclass(frozen=True)
class SampleBlock:
    """One stage worth of draws; f holds the noiseless structural values."""

    z: np.ndarray
    o: np.ndarray
    x: np.ndarray
    y: np.ndarray
    f: np.ndarray


@dataclass(frozen=True)
class CircleDgpSpec:
    """Circle process parameters; k also equals the contractivity exponent."""

    k: int = 1
    m: int = 3
    a: float = 0.5
    c_e: float = 0.5
    sigma: float = 0.2
    amp: float = 1.0   # amplitude of the cos(2 pi m x) term; 0 gives f* = 0

    def __post_init__(self):
        if not (1 <= self.k <= 10):
            raise ValueError("k must lie in [1, 10] so W stays inside one period")
        if self.m < 1:
            raise ValueError("m must be a positive integer frequency")
        if not (0.0 <= self.a < 1.0):
            raise ValueError("a must lie in [0, 1)")
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")

    def f_star(self, x, o):
        x = np.asarray(x, dtype=float)
        o = np.asarray(o, dtype=float)
        return self.amp * np.cos(2.0 * np.pi * self.m * x) * (1.0 + self.a * np.cos(2.0 * np.pi * o))


def circle_sample(spec: CircleDgpSpec, n: int, seed: int, stream: int = 0) -> SampleBlock:
    """Draw n rows of (z, o, x, y) from the circle process."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed, stream)
    z = rng.uniform(0.0, 1.0, n)
    o = rng.uniform(0.0, 1.0, n)
    u = rng.uniform(0.0, 1.0, (spec.k, n))
    w = 0.1 * u.sum(axis=0)
    x = np.mod(z + w, 1.0)
    f = spec.f_star(x, o)
    eps = spec.c_e * np.sin(2.0 * np.pi * u[0])
    if spec.sigma > 0.0:
        eps = eps + spec.sigma * rng.standard_normal(n)
    return SampleBlock(z=z, o=o, x=x, y=f + eps, f=f)


def sinc_power(m: int, k: int) -> float:
    """(sin(0.1 pi m) / (0.1 pi m))^k, the amplitude ratio after projection."""
    t = 0.1 * math.pi * m
    return (math.sin(t) / t) ** k


def true_projection(spec: CircleDgpSpec, z, o):
    """E[f*(X, O) | Z=z, O=o] in closed form."""
    z = np.asarray(z, dtype=float)
    o = np.asarray(o, dtype=float)
    rho = sinc_power(spec.m, spec.k)
    phase = 0.1 * math.pi * spec.m * spec.k
    return spec.amp * rho * np.cos(2.0 * np.pi * spec.m * z + phase) \
        * (1.0 + spec.a * np.cos(2.0 * np.pi * o))


def contractivity_ratio(m: int, k: int) -> float:
    """||T f||^2 / ||f||^2 for f(x, o) = trig(2 pi m x) h(o) on the circle."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    return (10.0 / (math.pi * m)) ** (2 * k) * math.sin(0.1 * math.pi * m) ** (2 * k)


def circle_dataset(spec: CircleDgpSpec, n: int, n_tilde: int, seed: int,
                   eval_points: int = 0) -> Dataset:
    """Independent stage draws (streams 1 and 2) plus an optional eval block."""
    s1 = circle_sample(spec, n_tilde, seed, stream=1)
    s2 = circle_sample(spec, n, seed, stream=2)
    ev = None
    if eval_points:
        rng = make_rng(seed, stream=3)
        xe = rng.uniform(0.0, 1.0, eval_points)
        oe = rng.uniform(0.0, 1.0, eval_points)
        ev = EvalData(x=xe[:, None], o=oe[:, None], f_true=spec.f_star(xe, oe))
    return Dataset(stage1=Stage1Data(z=s1.z[:, None], o=s1.o[:, None], x=s1.x[:, None]),
                   stage2=Stage2Data(z=s2.z[:, None], o=s2.o[:, None], y=s2.y),
                   eval=ev)


# ---------------------------------------------------------------------------
# bump density and the exogenous (nonparametric-regression) process
# ---------------------------------------------------------------------------

def _bump_unnormalized(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 0.5
    xi = x[inside]
    out[inside] = np.exp(-2.0 / (1.0 - 4.0 * xi * xi))
    return out


@lru_cache(maxsize=1)
def bump_normalizer() -> float:
    val, err = quad(lambda t: math.exp(-2.0 / (1.0 - 4.0 * t * t)),
                    -0.5, 0.5, epsabs=1e-13, epsrel=1e-13)
    if err > 1e-10:
        raise RuntimeError("bump normalizer quadrature did not reach 1e-10")
    return val


@dataclass(frozen=True)
class BumpDensitySpec:
    d_x: int = 1

    def __post_init__(self):
        if self.d_x < 1:
            raise ValueError("d_x must be at least 1")

    @property
    def normalizer(self) -> float:
        return bump_normalizer()


def bump_density(spec: BumpDensitySpec, x) -> np.ndarray | float:
    """Product bump density on (-1/2, 1/2)^d, zero outside."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (x.ndim == 1 and x.shape[0] == spec.d_x)
    pts = x.reshape(-1, spec.d_x)
    vals = np.prod(_bump_unnormalized(pts), axis=1) / spec.normalizer ** spec.d_x
    return float(vals[0]) if scalar and pts.shape[0] == 1 else vals


def bump_sample(n: int, rng: np.random.Generator, d_x: int = 1) -> np.ndarray:
    """Rejection sampling from the product bump; deterministic given the rng."""
    peak = math.exp(-2.0)
    out = np.empty((n, d_x))
    filled = 0
    while filled < n:
        need = n - filled
        batch = max(64, int(need / 0.6) + 8)
        cand = rng.uniform(-0.5, 0.5, (batch, d_x))
        accept = np.all(rng.uniform(0.0, peak, (batch, d_x)) < _bump_unnormalized(cand), axis=1)
        take = min(int(accept.sum()), need)
        out[filled:filled + take] = cand[accept][:take]
        filled += take
    return out


def npr_sample(n: int, seed: int, f_star, sigma: float, d_x: int = 1, d_o: int = 1,
               stream: int = 0) -> SampleBlock:
    """Exogenous regime: Z equals X, bump-distributed treatment, uniform covariates."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed, stream)
    x = bump_sample(n, rng, d_x)
    o = rng.uniform(0.0, 1.0, (n, d_o)) if d_o else np.zeros((n, 0))
    f = np.asarray(f_star(x, o), dtype=float).ravel()
    y = f + (sigma * rng.standard_normal(n) if sigma > 0 else 0.0)
    return SampleBlock(z=x.copy(), o=o, x=x, y=np.asarray(y, dtype=float), f=f)


def npr_dataset(n: int, n_tilde: int, seed: int, f_star, sigma: float,
                d_x: int = 1, d_o: int = 1) -> Dataset:
    s1 = npr_sample(n_tilde, seed, f_star, sigma, d_x, d_o, stream=1)
    s2 = npr_sample(n, seed, f_star, sigma, d_x, d_o, stream=2)
    return Dataset(stage1=Stage1Data(z=s1.z, o=s1.o, x=s1.x),
                   stage2=Stage2Data(z=s2.z, o=s2.o, y=s2.y))


# ---------------------------------------------------------------------------
# CSV round-trip
# ---------------------------------------------------------------------------

class CsvFormatError(ValueError):
    pass


_FMT = "%.17g"


def _group(prefix: str, d: int) -> list[str]:
    return ["%s%d" % (prefix, i + 1) for i in range(d)]


def write_csv(data: Dataset, path) -> None:
    """Stage-tagged CSV: stage-1 rows leave y blank, stage-2 rows leave x blank."""
    d_z, d_o, d_x = data.d_z, data.d_o, data.d_x
    header = _group("z", d_z) + _group("o", d_o) + _group("x", d_x) + ["y", "stage"]
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        out.write(",".join(header) + "\n")
        s1 = data.stage1
        for i in range(data.n_tilde):
            cells = [_FMT % v for v in s1.z[i]] + [_FMT % v for v in s1.o[i]] \
                + [_FMT % v for v in s1.x[i]] + ["", "1"]
            out.write(",".join(cells) + "\n")
        s2 = data.stage2
        for i in range(data.n):
            cells = [_FMT % v for v in s2.z[i]] + [_FMT % v for v in s2.o[i]] \
                + [""] * d_x + [_FMT % s2.y[i], "2"]
            out.write(",".join(cells) + "\n")


def _parse_cell(cell: str, row: int, col: str) -> float:
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise CsvFormatError("row %d, column %s: non-numeric cell %r" % (row, col, cell))


def read_csv(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise CsvFormatError("empty file")
    header = [h.strip() for h in lines[0].split(",")]
    dims = {}
    for prefix in ("z", "o", "x"):
        cols = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
        expect = _group(prefix, len(cols))
        if cols != expect:
            raise CsvFormatError("malformed header: %s columns must be %s in order, got %s"
                                 % (prefix, expect, cols))
        dims[prefix] = len(cols)
    want = _group("z", dims["z"]) + _group("o", dims["o"]) + _group("x", dims["x"]) + ["y", "stage"]
    if header != want:
        raise CsvFormatError("malformed header: expected %s, got %s" % (want, header))
    if dims["x"] < 1:
        raise CsvFormatError("malformed header: at least one x column required")
    s1_rows, s2_rows = [], []
    for ridx, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise CsvFormatError("row %d: expected %d cells, got %d" % (ridx, len(header), len(cells)))
        stage = cells[-1].strip()
        if stage not in ("1", "2"):
            raise CsvFormatError("row %d, column stage: must be 1 or 2, got %r" % (ridx, stage))
        vals = [_parse_cell(c, ridx, name) for c, name in zip(cells[:-1], header[:-1])]
        z = vals[:dims["z"]]
        o = vals[dims["z"]:dims["z"] + dims["o"]]
        x = vals[dims["z"] + dims["o"]:dims["z"] + dims["o"] + dims["x"]]
        y = vals[-1]
        if any(math.isnan(v) for v in z) or any(math.isnan(v) for v in o):
            raise CsvFormatError("row %d: missing z or o value" % ridx)
        if stage == "1":
            if any(math.isnan(v) for v in x):
                raise CsvFormatError("row %d: stage-1 row lacking x" % ridx)
            s1_rows.append((z, o, x))
        else:
            if math.isnan(y):
                raise CsvFormatError("row %d: missing y on a stage-2 row" % ridx)
            s2_rows.append((z, o, y))
    if not s1_rows or not s2_rows:
        raise CsvFormatError("need at least one row of each stage")
    s1 = Stage1Data(z=np.array([r[0] for r in s1_rows]),
                    o=np.array([r[1] for r in s1_rows]),
                    x=np.array([r[2] for r in s1_rows]))
    s2 = Stage2Data(z=np.array([r[0] for r in s2_rows]),
                    o=np.array([r[1] for r in s2_rows]),
                    y=np.array([r[2] for r in s2_rows]))
    return Dataset(stage1=s1, stage2=s2)
