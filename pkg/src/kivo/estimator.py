"""Two-stage kernel instrumental-variable regression with observed covariates.

Stage I ridge-regresses treatment features on instrument/covariate features,
producing the transport matrix ``J``; Stage II ridge-regresses the outcomes
on the transported features times unprojected covariate features.  Closed
forms throughout:

* ``J = (K_zz1 . K_oo1 + ntilde xi I)^-1 (K_z1z2 . K_o1o2)``
* ``alpha = ((J' K_xx J) . K_oo2 + n lambda I)^-1 y``
* ``fhat(x, o) = (k_o2(o) . (J' k_x(x)))' alpha``

where ``.`` is the Hadamard product.  A naive baseline that augments the
treatment and instrument with the covariates (classic two-stage fit on the
joint variables) shares Stage I and differs only in how Stage II consumes
the covariates; it is kept for experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import solver
from .kernels import KernelFamily, KernelSpec, gram
from .solver import RegSolveRecord


class EstimatorError(ValueError):
    pass


def _columns(arr, n: int, dim: int | None, name: str) -> np.ndarray:
    if arr is None:
        arr = np.zeros((n, 0))
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] != n:
        raise EstimatorError("%s has %d rows, expected %d" % (name, arr.shape[0], n))
    if dim is not None and arr.shape[1] != dim:
        raise EstimatorError("%s has %d columns, expected %d" % (name, arr.shape[1], dim))
    if arr.size and not np.all(np.isfinite(arr)):
        raise EstimatorError("%s contains non-finite values" % name)
    return arr


@dataclass(frozen=True)
class Stage1Data:
    z: np.ndarray
    o: np.ndarray
    x: np.ndarray


@dataclass(frozen=True)
class Stage2Data:
    z: np.ndarray
    o: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class EvalData:
    x: np.ndarray
    o: np.ndarray
    f_true: np.ndarray | None = None


@dataclass(frozen=True)
class Dataset:
    """Stage-tagged samples: (z, o, x) for Stage I, (z, o, y) for Stage II."""

    stage1: Stage1Data
    stage2: Stage2Data
    eval: EvalData | None = None

    def __post_init__(self):
        s1, s2 = self.stage1, self.stage2
        n1 = np.asarray(s1.x).shape[0]
        n2 = np.asarray(s2.y).shape[0]
        x = _columns(s1.x, n1, None, "stage1.x")
        if x.shape[1] < 1:
            raise EstimatorError("treatment dimension must be at least 1")
        z1 = _columns(s1.z, n1, None, "stage1.z")
        o1 = _columns(s1.o, n1, None, "stage1.o")
        object.__setattr__(self, "stage1", Stage1Data(z1, o1, x))
        y = np.asarray(s2.y, dtype=float).ravel()
        if not np.all(np.isfinite(y)):
            raise EstimatorError("stage2.y contains non-finite values")
        z2 = _columns(s2.z, n2, z1.shape[1], "stage2.z")
        o2 = _columns(s2.o, n2, o1.shape[1], "stage2.o")
        object.__setattr__(self, "stage2", Stage2Data(z2, o2, y))

    @property
    def n_tilde(self) -> int:
        return self.stage1.x.shape[0]

    @property
    def n(self) -> int:
        return self.stage2.y.shape[0]

    @property
    def d_z(self) -> int:
        return self.stage1.z.shape[1]

    @property
    def d_o(self) -> int:
        return self.stage1.o.shape[1]

    @property
    def d_x(self) -> int:
        return self.stage1.x.shape[1]


def _zo_gram(z_rows, o_rows, z_cols, o_cols, kz: KernelSpec, ko: KernelSpec) -> np.ndarray:
    kzz = gram(z_rows, z_cols, kz).entries if z_rows.shape[1] else \
        np.ones((z_rows.shape[0], z_cols.shape[0]))
    if o_rows.shape[1]:
        kzz = kzz * gram(o_rows, o_cols, ko).entries
    return kzz


@dataclass(frozen=True)
class Stage1Map:
    """The transport matrix from Stage-I treatment features to Stage-II rows."""

    J: np.ndarray
    xi: float
    kz: KernelSpec
    ko1: KernelSpec
    record: RegSolveRecord | None = None

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if not np.all(np.isfinite(J)):
            raise EstimatorError("J contains non-finite entries")
        object.__setattr__(self, "J", J)


def fit_stage1(data: Dataset, kz: KernelSpec, ko1: KernelSpec, xi: float) -> Stage1Map:
    """Conditional-mean-embedding ridge regression in closed form."""
    if xi <= 0.0:
        raise EstimatorError("xi must be positive; pass 1e-12 for the unregularized limit")
    s1, s2 = data.stage1, data.stage2
    nt = data.n_tilde
    k11 = _zo_gram(s1.z, s1.o, s1.z, s1.o, kz, ko1)
    k12 = _zo_gram(s1.z, s1.o, s2.z, s2.o, kz, ko1)
    J, rec = solver.reg_solve(k11, nt * xi, k12, return_record=True)
    return Stage1Map(J=J, xi=float(xi), kz=kz, ko1=ko1, record=rec)


@dataclass(frozen=True)
class KivoModel:
    """Fitted dual coefficients plus everything prediction needs."""

    alpha: np.ndarray
    stage1: Stage1Map
    x_tilde: np.ndarray
    o: np.ndarray
    kx: KernelSpec
    ko2: KernelSpec
    lam: float
    fit_record: RegSolveRecord
    o_tilde: np.ndarray | None = None   # set only for the naive-augmented baseline

    def __post_init__(self):
        if self.lam <= 0.0:
            raise EstimatorError("lambda must be positive")
        if len(self.alpha) != self.o.shape[0]:
            raise EstimatorError("alpha length does not match stage-2 rows")

    @property
    def naive(self) -> bool:
        return self.o_tilde is not None

    @property
    def n(self) -> int:
        return len(self.alpha)


def fit_stage2(data: Dataset, stage1: Stage1Map, kx: KernelSpec, ko2: KernelSpec,
               lam: float) -> KivoModel:
    """Stage-II dual ridge regression on transported treatment features."""
    if lam <= 0.0:
        raise EstimatorError("lambda must be positive")
    J = stage1.J
    n = data.n
    if J.shape != (data.n_tilde, n):
        raise EstimatorError("J shape %r does not match data (%d, %d)"
                             % (J.shape, data.n_tilde, n))
    kxx = gram(data.stage1.x, data.stage1.x, kx).entries
    k2 = J.T @ kxx @ J
    if data.d_o:
        k2 = k2 * gram(data.stage2.o, data.stage2.o, ko2).entries
    alpha, rec = solver.reg_solve(k2, n * lam, data.stage2.y, return_record=True)
    return KivoModel(alpha=alpha, stage1=stage1, x_tilde=data.stage1.x,
                     o=data.stage2.o, kx=kx, ko2=ko2, lam=float(lam), fit_record=rec)


def fit_kivo(data: Dataset, kz: KernelSpec, ko1: KernelSpec, kx: KernelSpec,
             ko2: KernelSpec, xi: float, lam: float) -> KivoModel:
    """Both stages in sequence."""
    return fit_stage2(data, fit_stage1(data, kz, ko1, xi), kx, ko2, lam)


def fit_naive_augmented(data: Dataset, kz: KernelSpec, ko1: KernelSpec, kx: KernelSpec,
                        ko2: KernelSpec, xi: float, lam: float) -> KivoModel:
    """Baseline that augments treatment and instrument with the covariates.

    Stage I coincides with the structured fit (the instrument-side product
    kernel is the same); Stage II treats the covariates as part of the
    transported treatment, so covariate features are smoothed through the
    Stage-I regression instead of evaluated at the observed covariates.
    With no covariates both constructions are identical.
    """
    stage1 = fit_stage1(data, kz, ko1, xi)
    J = stage1.J
    n = data.n
    kxx = gram(data.stage1.x, data.stage1.x, kx).entries
    if data.d_o:
        kxx = kxx * gram(data.stage1.o, data.stage1.o, ko2).entries
    k2 = J.T @ kxx @ J
    alpha, rec = solver.reg_solve(k2, n * lam, data.stage2.y, return_record=True)
    return KivoModel(alpha=alpha, stage1=stage1, x_tilde=data.stage1.x,
                     o=data.stage2.o, kx=kx, ko2=ko2, lam=float(lam), fit_record=rec,
                     o_tilde=data.stage1.o)


def predict(model: KivoModel, x, o) -> np.ndarray | float:
    """Evaluate the fitted dose-response surface at query points.

    A single point (scalars, or 1-D arrays of length d_x / d_o) yields a
    float; 2-D arrays of query rows yield a vector.
    """
    d_x = model.x_tilde.shape[1]
    d_o = model.o.shape[1]
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (x.ndim == 1 and x.shape[0] == d_x)
    try:
        xq = x.reshape(-1, d_x)
    except ValueError:
        raise EstimatorError("x has %d values, not a multiple of d_x=%d" % (x.size, d_x))
    P = xq.shape[0]
    if d_o:
        oq = np.asarray(o, dtype=float)
        try:
            oq = oq.reshape(-1, d_o)
        except ValueError:
            raise EstimatorError("o has %d values, not a multiple of d_o=%d" % (oq.size, d_o))
        if oq.shape[0] == 1 and P > 1:
            oq = np.repeat(oq, P, axis=0)
        if oq.shape[0] != P:
            raise EstimatorError("query x and o row counts differ: %d vs %d" % (P, oq.shape[0]))
    else:
        oq = np.zeros((P, 0))
    kxq = gram(model.x_tilde, xq, model.kx).entries          # ntilde x P
    if model.naive:
        ko = gram(model.o_tilde, oq, model.ko2).entries if d_o else np.ones((model.x_tilde.shape[0], P))
        vals = (kxq * ko).T @ (model.stage1.J @ model.alpha)
    else:
        ko = gram(model.o, oq, model.ko2).entries if d_o else np.ones((len(model.alpha), P))
        vals = np.einsum("ip,i->p", ko * (model.stage1.J.T @ kxq), model.alpha)
    return float(vals[0]) if scalar and P == 1 else vals


def fitted_values(model: KivoModel, data: Dataset) -> np.ndarray:
    """In-sample predictions at the Stage-II design rows."""
    J = model.stage1.J
    kxx = gram(data.stage1.x, model.x_tilde, model.kx).entries
    if model.naive:
        koo = gram(data.stage1.o, model.o_tilde, model.ko2).entries if data.d_o else 1.0
        k2 = J.T @ (kxx * koo) @ J
    else:
        k2 = J.T @ kxx @ J
        if data.d_o:
            k2 = k2 * gram(data.stage2.o, model.o, model.ko2).entries
    return k2 @ model.alpha


# ---------------------------------------------------------------------------
# model persistence: line-oriented text, 17 significant digits
# ---------------------------------------------------------------------------

_FMT = "%.17g"


def _write_matrix(out, name, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    out.write("%s %d %d\n" % (name, arr.shape[0], arr.shape[1]))
    for row in arr:
        out.write(" ".join(_FMT % v for v in row))
        out.write("\n")


def _kernel_line(tag: str, spec: KernelSpec) -> str:
    ls = ",".join(_FMT % v for v in spec.lengthscales)
    dims = ",".join(str(d) for d in spec.dims)
    return "%s family=%s lengthscales=%s dims=%s\n" % (tag, spec.family.value, ls, dims)


def save_model(model: KivoModel, path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write("kivo-model v1\n")
        out.write("MODE %s\n" % ("naive" if model.naive else "kivo"))
        out.write("KERNELS 4\n")
        out.write(_kernel_line("z", model.stage1.kz))
        out.write(_kernel_line("o1", model.stage1.ko1))
        out.write(_kernel_line("x", model.kx))
        out.write(_kernel_line("o2", model.ko2))
        out.write("LAMBDA " + _FMT % model.lam + "\n")
        out.write("XI " + _FMT % model.stage1.xi + "\n")
        _write_matrix(out, "ALPHA", model.alpha.reshape(1, -1))
        _write_matrix(out, "J", model.stage1.J)
        _write_matrix(out, "XTILDE", model.x_tilde)
        _write_matrix(out, "O", model.o)
        if model.naive:
            _write_matrix(out, "OTILDE", model.o_tilde)


class ModelFormatError(ValueError):
    pass


def _parse_kernel_line(line: str) -> tuple[str, KernelSpec]:
    tag, rest = line.split(None, 1)
    fields = dict(part.split("=", 1) for part in rest.split())
    ls = tuple(float(v) for v in fields["lengthscales"].split(","))
    dims = tuple(int(v) for v in fields["dims"].split(","))
    return tag, KernelSpec(KernelFamily(fields["family"]), ls, dims)


def _read_matrix(lines, header) -> np.ndarray:
    parts = header.split()
    rows, cols = int(parts[1]), int(parts[2])
    data = np.empty((rows, cols))
    for i in range(rows):
        vals = next(lines).split()
        if len(vals) != cols:
            raise ModelFormatError("matrix %s row %d: expected %d values, got %d"
                                   % (parts[0], i, cols, len(vals)))
        data[i] = [float(v) for v in vals]
    return data


def load_model(path) -> KivoModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = iter(fh.read().splitlines())
    if next(lines, None) != "kivo-model v1":
        raise ModelFormatError("not a kivo-model v1 file")
    mode = next(lines).split()
    if mode[0] != "MODE" or mode[1] not in ("kivo", "naive"):
        raise ModelFormatError("missing or invalid MODE line")
    naive = mode[1] == "naive"
    nker = int(next(lines).split()[1])
    kernels = {}
    for _ in range(nker):
        tag, spec = _parse_kernel_line(next(lines))
        kernels[tag] = spec
    lam = float(next(lines).split()[1])
    xi = float(next(lines).split()[1])
    alpha = _read_matrix(lines, next(lines)).ravel()
    J = _read_matrix(lines, next(lines))
    x_tilde = _read_matrix(lines, next(lines))
    o = _read_matrix(lines, next(lines))
    o_tilde = _read_matrix(lines, next(lines)) if naive else None
    stage1 = Stage1Map(J=J, xi=xi, kz=kernels["z"], ko1=kernels["o1"])
    rec = RegSolveRecord(ridge=len(alpha) * lam, jitter_applied=0.0, condition_estimate=np.nan)
    return KivoModel(alpha=alpha, stage1=stage1, x_tilde=x_tilde, o=o,
                     kx=kernels["x"], ko2=kernels["o2"], lam=lam, fit_record=rec,
                     o_tilde=o_tilde)
