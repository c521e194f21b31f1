"""Multivariate normal log densities on top of cached Cholesky factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))

_SYMMETRY_RTOL = 1e-12
_RIDGE_CAP_FRACTION = 1e-2
_RIDGE_FLOOR_FRACTION = 1e-12


class SingularCovariance(np.linalg.LinAlgError):
    """Raised when a covariance cannot be factorized even after ridge escalation."""


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Covariance:
    """A d x d covariance together with its lower Cholesky factor.

    ``matrix`` already includes ``ridge`` on its diagonal. When ``diagonal``
    is true only the diagonal of ``matrix`` is meaningful and ``factor``
    is stored as the vector of its square roots.
    """

    matrix: np.ndarray
    factor: np.ndarray
    log_det: float
    ridge: float = 0.0
    diagonal: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def whiten(self, centered: np.ndarray) -> np.ndarray:
        """Return L^{-1} (x - mu) for rows of ``centered`` (shape (n, d))."""
        if self.diagonal:
            return centered / self.factor
        return solve_triangular(self.factor, centered.T, lower=True, check_finite=False).T


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    cov: Covariance
    weight: float = 1.0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _check_symmetric(matrix: np.ndarray) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got shape {matrix.shape}")
    scale = np.max(np.abs(matrix)) if matrix.size else 0.0
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > _SYMMETRY_RTOL * max(scale, 1.0):
        raise ValueError("covariance matrix is not symmetric")


def _try_factor(matrix: np.ndarray, diagonal: bool):
    if diagonal:
        diag = np.diag(matrix)
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0.0):
            return None
        factor = np.sqrt(diag)
        return factor, 2.0 * float(np.sum(np.log(factor)))
    try:
        factor = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(factor)
    if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
        return None
    return factor, 2.0 * float(np.sum(np.log(d)))


def cholesky_regularized(matrix, ridge: float = 0.0, diagonal: bool = False) -> Covariance:
    """Factorize ``matrix + ridge * I``.

    If the factorization fails the ridge is multiplied by 10 until it
    succeeds or exceeds ``1e-2 * trace / d``; the ridge that was actually
    applied is stored on the result.
    """
    matrix = np.array(matrix, dtype=float, copy=True)
    if matrix.ndim == 0:
        matrix = matrix.reshape(1, 1)
    _check_symmetric(matrix)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if diagonal:
        matrix = np.diag(np.diag(matrix))
    else:
        matrix = 0.5 * (matrix + matrix.T)
    d = matrix.shape[0]
    scale = float(np.trace(matrix)) / d
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    cap = _RIDGE_CAP_FRACTION * scale

    applied = float(ridge)
    while True:
        ridged = matrix + applied * np.eye(d) if applied > 0 else matrix
        result = _try_factor(ridged, diagonal)
        if result is not None:
            factor, log_det = result
            return Covariance(ridged, factor, log_det, applied, diagonal)
        applied = applied * 10.0 if applied > 0 else _RIDGE_FLOOR_FRACTION * scale
        if applied > cap:
            raise SingularCovariance(
                f"covariance not positive definite even with ridge {cap:.3g}"
            )


def log_density(x, comp: GaussianComponent):
    """log N(x | mean, cov) for one point (returns float) or rows of x."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    d = comp.mean.shape[0]
    if pts.ndim != 2 or pts.shape[1] != d or comp.cov.dim != d:
        raise DimensionMismatch(
            f"point dimension {pts.shape[-1]} does not match component dimension {d}"
        )
    z = comp.cov.whiten(pts - comp.mean)
    maha = np.einsum("ij,ij->i", z, z)
    out = -0.5 * (d * LOG_2PI + comp.cov.log_det + maha)
    return float(out[0]) if single else out


def log_sum_exp(values, axis: int = -1):
    """Max-shifted log(sum(exp(values))) along ``axis``.

    A scalar is returned for 1-d input. Slices that are entirely -inf
    give -inf rather than nan.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[axis] == 0:
        raise ValueError("log_sum_exp needs at least one value")
    vmax = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out
