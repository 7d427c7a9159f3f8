"""Regularized symmetric solves and the leave-one-out shortcut.

Both estimation stages reduce to systems ``(K + ridge I) X = B`` with a
symmetric positive semidefinite ``K``.  Solves go through a Cholesky
factorization with an escalating-jitter retry for numerically
rank-deficient Grams (tiny lengthscales), and every solve can report what
it actually did via :class:`RegSolveRecord`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, get_lapack_funcs

from .kernels import GramMatrix


class SolverError(RuntimeError):
    pass


class LeverageError(SolverError):
    """A leave-one-out leverage reached 1: the deleted point is unpredictable."""


@dataclass(frozen=True)
class RegSolveRecord:
    """What a regularized solve did: the ridge used, extra jitter, conditioning."""

    ridge: float
    jitter_applied: float
    condition_estimate: float

    def __post_init__(self):
        if self.ridge <= 0.0:
            raise ValueError("ridge must be positive")
        if self.jitter_applied < 0.0:
            raise ValueError("jitter must be non-negative")


def _as_matrix(K) -> np.ndarray:
    if isinstance(K, GramMatrix):
        K = K.entries
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise SolverError("K must be square, got shape %r" % (K.shape,))
    return K


_JITTER_BASE = 1e-10
_JITTER_ESCALATIONS = 3


def _factor_with_jitter(K: np.ndarray, ridge: float):
    n = K.shape[0]
    A = K + ridge * np.eye(n)
    base = _JITTER_BASE * np.trace(K) / n if n else _JITTER_BASE
    jitter = 0.0
    for attempt in range(_JITTER_ESCALATIONS + 1):
        try:
            c, low = cho_factor(A + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            jitter = base * 10.0**attempt
            continue
        pocon = get_lapack_funcs("pocon", (c,))
        anorm = np.abs(A).sum(axis=0).max()
        rcond, _ = pocon(c, anorm, lower=True)
        cond = 1.0 / rcond if rcond > 0 else np.inf
        return (c, low), RegSolveRecord(ridge, jitter, cond)
    raise SolverError("Cholesky failed after %d jitter escalations (base %.3e); "
                      "input is severely ill-conditioned" % (_JITTER_ESCALATIONS, base))


def reg_solve(K, ridge: float, B, return_record: bool = False):
    """Solve (K + ridge I) X = B by Cholesky, escalating jitter on failure."""
    K = _as_matrix(K)
    if ridge <= 0.0:
        raise SolverError("ridge must be positive (pass 1e-12 for the unregularized limit)")
    B = np.asarray(B, dtype=float)
    if B.shape[0] != K.shape[0]:
        raise SolverError("B row count %d does not match system size %d" % (B.shape[0], K.shape[0]))
    factor, record = _factor_with_jitter(K, float(ridge))
    X = cho_solve(factor, B)
    if return_record:
        return X, record
    return X


def loo_residuals(K, ridge: float, y) -> np.ndarray:
    """Exact leave-one-out residuals of kernel ridge regression.

    With hat matrix ``H = K (K + ridge I)^-1`` the deleted residual is
    ``r_i = (y_i - yhat_i) / (1 - H_ii)``, which reduces to
    ``(A^-1 y)_i / (A^-1)_ii`` for ``A = K + ridge I``; no refits needed.
    """
    K = _as_matrix(K)
    if ridge <= 0.0:
        raise SolverError("ridge must be positive")
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != K.shape[0]:
        raise SolverError("len(y) = %d does not match system size %d" % (y.shape[0], K.shape[0]))
    factor, record = _factor_with_jitter(K, float(ridge))
    ainv_y = cho_solve(factor, y)
    trtri = get_lapack_funcs("trtri", (factor[0],))
    linv, info = trtri(factor[0], lower=True)
    if info != 0:
        raise SolverError("triangular inversion failed (info=%d)" % info)
    linv = np.tril(linv)
    ainv_diag = np.einsum("ij,ij->j", linv, linv)
    h_diag = 1.0 - (float(ridge) + record.jitter_applied) * ainv_diag
    if np.any(h_diag >= 1.0 - 1e-12):
        i = int(np.argmax(h_diag))
        raise LeverageError("degenerate leverage H[%d,%d] = %.17g" % (i, i, h_diag[i]))
    return ainv_y / ainv_diag
