"""Dense linear-algebra and probability kernels shared across the package.

Everything runs in log space through explicit Cholesky factorizations.  The
importance weights downstream combine densities whose log values differ by
thousands, so linear-space shortcuts would underflow long before the sampler
misbehaves in any other way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

# Eigenvalues of a covariance matrix are floored at this fraction of the
# largest eigenvalue (or of 1.0 when no eigenvalue is positive).
PD_FLOOR_SCALE = 1e-8

# Log likelihood assigned to numerically failed evaluations (domain flags,
# singular covariances).  Finite on purpose: flooded particles stay rankable
# and carry exactly zero normalized weight, while -inf is reserved for prior
# support violations.
FLOOD_LOG_LIK = -1e12

# Relative step used for finite-difference Hessians.
FD_STEP_SCALE = 1e-4

_LOG_2PI = float(np.log(2.0 * np.pi))


class ProbeFailureError(RuntimeError):
    """A finite-difference probe stayed non-finite after step shrinking."""

    def __init__(self, coordinates, message=None):
        self.coordinates = tuple(coordinates)
        if message is None:
            message = "non-finite probe for coordinate(s) %s" % (self.coordinates,)
        super().__init__(message)


def _pd_floor(eigenvalues: np.ndarray) -> float:
    top = float(np.max(eigenvalues)) if eigenvalues.size else 0.0
    return PD_FLOOR_SCALE * (top if top > 0.0 else 1.0)


def _symmetry_gap(m: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 0.0)
    return float(np.max(np.abs(m - m.T))) / scale if m.size else 0.0


def repair_pd(entries: np.ndarray) -> np.ndarray:
    """Clip the eigenvalues of a symmetric matrix up to the positive floor.

    The floor is ``PD_FLOOR_SCALE`` times the largest eigenvalue, or
    ``PD_FLOOR_SCALE`` itself when no eigenvalue is positive.  A matrix that
    already satisfies the floor is returned unchanged, which makes the repair
    idempotent entry for entry.

    Parameters
    ----------
    entries : ndarray, shape (d, d)
        Symmetric (to rounding) square matrix.

    Returns
    -------
    ndarray, shape (d, d)
        The input itself when no repair was needed, otherwise the
        eigenvalue-clipped reconstruction.
    """
    m = np.asarray(entries, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix, got shape %s" % (m.shape,))
    sym = 0.5 * (m + m.T)
    eigval, eigvec = np.linalg.eigh(sym)
    floor = _pd_floor(eigval)
    # Tolerate rounding in the eigenvalues of an already-repaired matrix so
    # that repairing twice changes nothing.
    if _symmetry_gap(m) <= 1e-12 and np.min(eigval) >= floor * (1.0 - 1e-8):
        return m
    clipped = np.maximum(eigval, floor)
    out = (eigvec * clipped) @ eigvec.T
    return 0.5 * (out + out.T)


class CovarianceMatrix:
    """A validated SPD matrix with a cached Cholesky factor.

    Construction fails on non-square, asymmetric (beyond 1e-12 relative) or
    non-positive-definite input; use :func:`make_covariance` to repair first.

    Parameters
    ----------
    entries : ndarray, shape (d, d)
        Symmetric positive-definite matrix.
    degenerate : bool
        Set when the matrix came out of a degenerate estimate (for example a
        weighted covariance of identical points) and carries no directional
        information beyond the floor.
    """

    def __init__(self, entries: np.ndarray, degenerate: bool = False):
        m = np.asarray(entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("covariance must be square, got shape %s" % (m.shape,))
        if not np.all(np.isfinite(m)):
            raise ValueError("covariance entries must be finite")
        if _symmetry_gap(m) > 1e-12:
            raise ValueError("covariance is not symmetric within 1e-12 relative")
        self.entries = 0.5 * (m + m.T)
        self.dim = m.shape[0]
        self.degenerate = bool(degenerate)
        try:
            self.chol = np.linalg.cholesky(self.entries)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def __repr__(self):
        return "CovarianceMatrix(dim=%d, degenerate=%s)" % (self.dim, self.degenerate)


def make_covariance(entries: np.ndarray, degenerate: bool = False) -> CovarianceMatrix:
    """PD-repair ``entries`` and wrap them in a :class:`CovarianceMatrix`."""
    return CovarianceMatrix(repair_pd(entries), degenerate=degenerate)


@dataclass
class GaussianComponent:
    """One multivariate normal mixture component.

    ``provenance`` records which stage produced the component; ``method`` and
    ``context_value`` carry optional bookkeeping (the optimizer label, and the
    discrete coordinate a conditional component repopulates).
    """

    mean: np.ndarray
    cov: CovarianceMatrix
    provenance: str = "optimizer-found"
    method: Optional[str] = None
    context_value: Optional[float] = None

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if self.mean.ndim != 1:
            raise ValueError("component mean must be a vector")
        if self.mean.shape[0] != self.cov.dim:
            raise ValueError(
                "mean has length %d but covariance has dim %d"
                % (self.mean.shape[0], self.cov.dim)
            )
        if self.provenance not in ("optimizer-found", "importance-stage"):
            raise ValueError("unknown provenance %r" % (self.provenance,))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _solve_whitened(diff: np.ndarray, cov: CovarianceMatrix) -> np.ndarray:
    """Return L^{-1} diff^T for row-vector differences ``diff``."""
    return solve_triangular(cov.chol, diff.T, lower=True, check_finite=False)


def mvn_logpdf(x: np.ndarray, component: GaussianComponent) -> np.ndarray:
    """Log density of ``component`` at one point or a batch of points.

    Parameters
    ----------
    x : ndarray, shape (d,) or (n, d)
    component : GaussianComponent

    Returns
    -------
    float or ndarray, shape (n,)
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != component.dim:
        raise ValueError(
            "points have dim %d, component has dim %d" % (pts.shape[1], component.dim)
        )
    z = _solve_whitened(pts - component.mean, component.cov)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * (component.dim * _LOG_2PI + component.cov.log_det + quad)
    return float(out[0]) if single else out


def mvn_sample(component: GaussianComponent, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows from ``component`` using the cached Cholesky factor."""
    if n < 1:
        raise ValueError("need n >= 1 draws")
    z = rng.standard_normal((n, component.dim))
    return component.mean + z @ component.cov.chol.T


def mahalanobis_sq(x: np.ndarray, center: np.ndarray, cov: CovarianceMatrix) -> np.ndarray:
    """Squared Mahalanobis distance of point(s) ``x`` from ``center``."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if pts.shape[1] != cov.dim or center.shape[0] != cov.dim:
        raise ValueError("dimension mismatch against covariance of dim %d" % cov.dim)
    z = _solve_whitened(pts - center, cov)
    out = np.sum(z * z, axis=0)
    return float(out[0]) if single else out


def weighted_covariance(
    points: np.ndarray,
    weights: np.ndarray,
    center: np.ndarray,
) -> CovarianceMatrix:
    """Weighted scatter of ``points`` about a fixed ``center``, PD-repaired.

    The estimate is ``sum_i w_i (x_i - c)(x_i - c)^T`` with normalized
    weights; no mean-centering beyond the supplied ``center`` is applied.
    Identical points yield the floored identity with ``degenerate`` set.

    Parameters
    ----------
    points : ndarray, shape (n, d)
    weights : ndarray, shape (n,)
        Non-negative, summing to one (validated to 1e-8).
    center : ndarray, shape (d,)

    Returns
    -------
    CovarianceMatrix
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(weights, dtype=float)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 points")
    if w.shape != (pts.shape[0],):
        raise ValueError("weights length %s does not match %d points" % (w.shape, pts.shape[0]))
    if np.any(w < 0.0):
        raise ValueError("weights must be non-negative")
    if abs(float(np.sum(w)) - 1.0) > 1e-8:
        raise ValueError("weights must sum to 1 within 1e-8")
    if center.shape[0] != pts.shape[1]:
        raise ValueError("center dimension mismatch")
    diff = pts - center
    raw = diff.T @ (diff * w[:, None])
    degenerate = bool(np.all(pts == pts[0]))
    return make_covariance(raw, degenerate=degenerate)


def _probe_pair(f: Callable, x0: np.ndarray, i: int, h: float):
    xp = x0.copy()
    xp[i] += h
    xm = x0.copy()
    xm[i] -= h
    return f(xp), f(xm)


def numeric_hessian(
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
    steps: Optional[Sequence[float]] = None,
) -> CovarianceMatrix:
    """Inverse negated central-difference Hessian of a log density.

    The Hessian of ``f`` at ``x0`` is estimated with central differences
    (step ``FD_STEP_SCALE * max(|x0_i|, 1)`` per coordinate unless ``steps``
    overrides it), negated, eigenvalue-floored to positive definiteness, and
    inverted.  Directions in which ``f`` is locally convex therefore come out
    with very large variances rather than failing, which is what lets the
    sampler spray wide along unidentified coordinates.

    Non-finite probes shrink the step by halving up to 8 times before raising
    :class:`ProbeFailureError` naming the offending coordinate(s).

    Parameters
    ----------
    f : callable
        Maps a parameter vector to a float log density.
    x0 : ndarray, shape (d,)
        Point of evaluation; ``f(x0)`` must be finite.
    steps : sequence of float, optional
        Per-coordinate override of the finite-difference steps.

    Returns
    -------
    CovarianceMatrix, shape (d, d)
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.shape[0]
    f0 = float(f(x0))
    if not np.isfinite(f0):
        raise ProbeFailureError((), "f is not finite at the expansion point")
    if steps is None:
        h = FD_STEP_SCALE * np.maximum(np.abs(x0), 1.0)
    else:
        h = np.asarray(steps, dtype=float).copy()
        if h.shape != (d,) or np.any(h <= 0.0):
            raise ValueError("steps must be %d positive floats" % d)

    hess = np.empty((d, d))
    axis_plus = np.empty(d)
    axis_minus = np.empty(d)
    for i in range(d):
        fp, fm = _probe_pair(f, x0, i, h[i])
        tries = 0
        while not (np.isfinite(fp) and np.isfinite(fm)):
            if tries >= 8:
                raise ProbeFailureError((i,))
            h[i] *= 0.5
            fp, fm = _probe_pair(f, x0, i, h[i])
            tries += 1
        axis_plus[i] = fp
        axis_minus[i] = fm
        hess[i, i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i])

    for i in range(d):
        for j in range(i + 1, d):
            hi, hj = h[i], h[j]
            tries = 0
            while True:
                corners = []
                for si in (1.0, -1.0):
                    for sj in (1.0, -1.0):
                        xp = x0.copy()
                        xp[i] += si * hi
                        xp[j] += sj * hj
                        corners.append(float(f(xp)))
                if np.all(np.isfinite(corners)):
                    break
                if tries >= 8:
                    raise ProbeFailureError((i, j))
                hi *= 0.5
                hj *= 0.5
                tries += 1
            fpp, fpm, fmp, fmm = corners
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj)

    neg = -0.5 * (hess + hess.T)
    eigval, eigvec = np.linalg.eigh(neg)
    floor = _pd_floor(eigval)
    clipped = np.maximum(eigval, floor)
    inv = (eigvec / clipped) @ eigvec.T
    return CovarianceMatrix(0.5 * (inv + inv.T))


def normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    """Shift log weights so that their exponentials sum to one."""
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0:
        raise ValueError("cannot normalize an empty weight vector")
    total = log_sum_exp(log_w)
    if not np.isfinite(total):
        raise ValueError("log weights sum to zero mass, cannot normalize")
    return log_w - total


def log_sum_exp(log_values: np.ndarray, axis=None):
    """Numerically safe log-sum-exp that tolerates -inf entries."""
    out = logsumexp(np.asarray(log_values, dtype=float), axis=axis)
    return float(out) if axis is None else out
