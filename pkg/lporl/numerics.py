"""Shared numerical kernels: PSD matrix powers, projections and softmax."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .exceptions import NearSingular, NonFinite, NotSymmetric

SYMMETRY_TOL = 1e-10
EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class BallDomain:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive, got %r" % (self.radius,))

    def contains(self, v, tol=0.0):
        return float(np.linalg.norm(v)) <= self.radius + tol


def symmetrize(matrix):
    return (matrix + matrix.T) / 2


def psd_power(matrix, p, floor=EIG_FLOOR):
    """
    Return M^p for a symmetric PSD matrix M.

    Negative eigenvalues are clamped to zero. A negative exponent requires
    every eigenvalue to be at least `floor`.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NotSymmetric("expected a square matrix, got shape %s" % (matrix.shape,))
    if not np.all(np.isfinite(matrix)):
        raise NonFinite("matrix has non-finite entries")
    asymmetry = np.max(np.abs(matrix - matrix.T)) if matrix.size else 0.0
    if asymmetry > SYMMETRY_TOL:
        raise NotSymmetric("matrix asymmetry %.3g exceeds %.1g" % (asymmetry, SYMMETRY_TOL))
    dim = matrix.shape[0]
    if p == 0:
        return np.eye(dim)
    eigvals, eigvecs = scipy.linalg.eigh(symmetrize(matrix))
    eigvals = np.clip(eigvals, 0.0, None)
    if p < 0 and eigvals.min() < floor:
        raise NearSingular(
            "smallest eigenvalue %.3g is below the floor %.1g; use c=1 or regularize"
            % (eigvals.min(), floor))
    if p == 1:
        return symmetrize(matrix)
    powered = eigvecs @ np.diag(eigvals ** p) @ eigvecs.T
    return symmetrize(powered)


def project_ball(v, domain):
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= domain.radius:
        return v
    return v * (domain.radius / norm)


def clamp_interval(x, lo, hi):
    return min(hi, max(lo, x))


def softmax_rows(logits):
    """Row-wise stabilized softmax. Returns a plain probability matrix."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise NonFinite("softmax logits must be finite")
    return scipy.special.softmax(logits, axis=-1)


def projected_path(start, steps, radius):
    """
    Run x_{k+1} = Π(x_k + steps[k]) over the ball of `radius`.

    Returns every iterate, the start included, as an array of shape
    (len(steps) + 1, d).
    """
    path = np.empty((len(steps) + 1, len(start)))
    current = np.array(start, dtype=float)
    path[0] = current
    radius_sq = radius * radius
    for k, step in enumerate(steps):
        current = current + step
        norm_sq = current.dot(current)
        if norm_sq > radius_sq:
            current = current * (radius / np.sqrt(norm_sq))
        path[k + 1] = current
    return path


def clamped_path(start, steps, lo=0.0, hi=1.0):
    path = np.empty(len(steps) + 1)
    current = float(start)
    path[0] = current
    for k, step in enumerate(steps):
        current = clamp_interval(current + float(step), lo, hi)
        path[k + 1] = current
    return path
