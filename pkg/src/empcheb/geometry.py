"""Mahalanobis geometry: Cholesky factors, confidence ellipsoids, whitening.

Also verifies the closed-form optimum of the moment SDP behind the
known-moments bound min{1, n / lambda^2} by building the block LMIs for the
optimal multipliers and checking their eigenvalues.  Nothing here solves an
SDP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import solve_triangular

from . import bounds
from .errors import (
    InfeasibleEpsilonError,
    InvalidCovarianceError,
    InvalidRadiusError,
    ShapeError,
    SingularCovarianceError,
)
from .stats import SampleStats

# Cholesky pivots at or below PIVOT_RTOL * trace / dim count as singular.
PIVOT_RTOL = 1e-12
SYMMETRY_RTOL = 1e-10


def cholesky(matrix) -> np.ndarray:
    """Lower-triangular L with L L^T = matrix, or SingularCovarianceError."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise InvalidCovarianceError("matrix is not symmetric")
    dim = a.shape[0]
    tr = np.trace(a)
    if not np.all(np.isfinite(a)) or tr <= 0:
        raise SingularCovarianceError("covariance is singular (nonpositive trace)")
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc
    pivots = np.diag(L) ** 2
    if np.min(pivots) <= PIVOT_RTOL * tr / dim:
        raise SingularCovarianceError(
            f"covariance is numerically singular (smallest pivot {np.min(pivots):.3g}, "
            f"trace/dim {tr / dim:.3g})"
        )
    return L


def _whitened(L, center, point):
    x = np.asarray(point, dtype=float)
    if x.shape[-1] != center.shape[0]:
        raise ShapeError(f"expected points of length {center.shape[0]}, got {x.shape[-1]}")
    dev = (x - center).T
    return solve_triangular(L, dev, lower=True, check_finite=False)


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    """Open ellipsoid {x : (x - center)^T (L L^T)^{-1} (x - center) < radius_sq}.

    ``coverage_bound`` bounds the probability that the next i.i.d. sample falls
    outside it (on or beyond the boundary).
    """

    center: np.ndarray
    chol_factor: np.ndarray
    radius_sq: float
    source_count: int
    coverage_bound: float
    coverage_bound_exact: object = field(default=None, compare=False)

    def mahalanobis_sq(self, point):
        z = _whitened(self.chol_factor, self.center, point)
        return np.sum(z * z, axis=0) if z.ndim > 1 else float(z @ z)

    def contains(self, point):
        return self.mahalanobis_sq(point) < self.radius_sq

    @property
    def dim(self):
        return self.center.shape[0]

    def to_record(self) -> dict:
        rec = {
            "center": [float(v) for v in self.center],
            "chol_factor": [float(v) for v in self.chol_factor.reshape(-1)],
            "dim": self.dim,
            "radius_sq": float(self.radius_sq),
            "source_count": int(self.source_count),
            "coverage_bound": float(self.coverage_bound),
        }
        if self.coverage_bound_exact is not None:
            rec["coverage_bound_exact"] = str(self.coverage_bound_exact)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ConfidenceEllipsoid":
        center = np.asarray(rec["center"], dtype=float)
        dim = center.shape[0]
        L = np.asarray(rec["chol_factor"], dtype=float).reshape(dim, dim)
        return cls(center, L, float(rec["radius_sq"]), int(rec["source_count"]),
                   float(rec["coverage_bound"]), rec.get("coverage_bound_exact"))


def mahalanobis_sq(source: Union[ConfidenceEllipsoid, SampleStats], point):
    """Squared Mahalanobis distance by triangular solve.

    With a SampleStats source the distance is measured from its mean under its
    unbiased covariance, i.e. the q_N statistic of the empirical bound.
    """
    if isinstance(source, ConfidenceEllipsoid):
        return source.mahalanobis_sq(point)
    L = cholesky(source.covariance("unbiased"))
    z = _whitened(L, source.mean, point)
    return np.sum(z * z, axis=0) if z.ndim > 1 else float(z @ z)


def confidence_ellipsoid(stats: SampleStats, epsilon=None, lambda_sq=None) -> ConfidenceEllipsoid:
    """Ellipsoid around the sample mean whose complement has probability <= epsilon.

    Exactly one of ``epsilon`` (radius chosen by inverting the empirical bound)
    or ``lambda_sq`` (radius given) must be set.
    """
    if (epsilon is None) == (lambda_sq is None):
        raise ValueError("give exactly one of epsilon or lambda_sq")
    if stats.count < stats.dim + 1:
        raise SingularCovarianceError(
            f"need at least dim + 1 = {stats.dim + 1} samples for a nonsingular covariance, "
            f"have {stats.count}"
        )
    L = cholesky(stats.covariance("unbiased"))
    if epsilon is not None:
        r2 = bounds.safe_lambda_sq(stats.dim, stats.count, epsilon)
        if r2 is None:
            floor = bounds.min_achievable(stats.dim, stats.count)
            raise InfeasibleEpsilonError(
                f"epsilon={epsilon} is below the smallest achievable bound {float(floor):.6g} "
                f"at N={stats.count}, dim={stats.dim}",
                min_epsilon=floor,
            )
    else:
        r2 = float(lambda_sq)
        if not (math.isfinite(r2) and r2 > 0):
            raise InvalidRadiusError(f"lambda^2 must be positive, got {lambda_sq}")
    cov = bounds.empirical_bound(stats.dim, stats.count, r2)
    return ConfidenceEllipsoid(stats.mean.copy(), L, r2, stats.count, float(cov.value), cov.value)


def whiten(samples) -> np.ndarray:
    """Map samples to u_i = L^{-1}(x_i - mean) with L L^T the biased covariance.

    The result has zero sum and sum of outer products equal to count * I.  A
    Cholesky factor stands in for the symmetric square root; both give these
    two properties, which is all the counting argument uses.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    m = x.shape[0]
    dev = x - x.mean(axis=0)
    L = cholesky(dev.T @ dev / m)
    return solve_triangular(L, dev.T, lower=True).T


def whitened_tail_count(u, k_sq) -> int:
    """Number of rows of ``u`` with squared norm >= k^2."""
    return int(np.count_nonzero(np.sum(np.asarray(u) ** 2, axis=1) >= k_sq))


def sherman_morrison_quadratic(q_n: float, count: int) -> float:
    """Squared whitened norm of the newest of N+1 samples, given q_N.

    q_N is the newest sample's squared Mahalanobis distance from the first N
    samples (unbiased covariance).  The biased covariance of all N+1 samples is
    a rank-one update of the first N samples' covariance, so its inverse
    quadratic form follows from Sherman-Morrison without any matrix work.
    """
    N = count
    q_next = (N / (N + 1)) ** 2 * q_n  # same point, mean moved to the N+1 mean
    a = (N + 1) / (N - 1) * q_next  # form under ((N-1)/(N+1)) * Lambda_N
    return a - (a * a / N) / (1 + a / N)


def event_statistics(samples):
    """(||u_{N+1}||^2, q_N) for a set of N+1 samples, both computed directly."""
    x = np.asarray(samples, dtype=float)
    u = whiten(x)
    first = SampleStats.from_samples(x[:-1])
    return float(u[-1] @ u[-1]), mahalanobis_sq(first, x[-1])


@dataclass
class CertificateReport:
    """Closed-form optimum of the moment SDP and its LMI feasibility check.

    f(eta) = eta^T P eta + r majorizes the indicator of the complement of the
    ellipsoid {eta^T Sigma^{-1} eta < lambda^2}; E f = tr(Sigma P) + r.
    """

    branch: str
    objective: float
    min_lmi_eigenvalue: float
    feasible: bool
    P: np.ndarray
    q: np.ndarray
    r: float
    tau: float

    def majorant(self, eta):
        eta = np.asarray(eta, dtype=float)
        return np.einsum("...i,ij,...j->...", eta, self.P, eta) + 2 * eta @ self.q + self.r


def lmi_blocks(P, q, r, tau, sigma_inv, lambda_sq):
    """The two block matrices that must be PSD for (P, q, r, tau) to be feasible.

    The first encodes f >= 0 everywhere; the second is the S-procedure form of
    f >= 1 outside the ellipsoid.
    """
    n = P.shape[0]
    q = q.reshape(n, 1)
    nonneg = np.block([[P, q], [q.T, np.array([[r]])]])
    shape = np.block([[sigma_inv / lambda_sq, np.zeros((n, 1))],
                      [np.zeros((1, n)), -np.ones((1, 1))]])
    outside = np.block([[P, q], [q.T, np.array([[r - 1.0]])]]) - tau * shape
    return nonneg, outside


def theoretical_certificate(sigma, lambda_sq, tol: float = 1e-9) -> CertificateReport:
    """Check the optimal (P, q=0, r, tau) for the known-moments bound.

    Interior branch (n / lambda^2 <= 1): tau = 1, r = 0, P = Sigma^{-1}/lambda^2,
    objective n / lambda^2.  Saturated branch: tau = 0, r = 1, P = 0, objective 1.
    """
    s = np.asarray(sigma, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InvalidCovarianceError(f"sigma must be square, got shape {s.shape}")
    try:
        L = cholesky(s)
    except SingularCovarianceError as exc:
        raise InvalidCovarianceError(f"sigma is not positive definite: {exc}") from exc
    lam = float(lambda_sq)
    if not (math.isfinite(lam) and lam > 0):
        raise InvalidRadiusError(f"lambda^2 must be positive, got {lambda_sq}")
    n = s.shape[0]
    eye = np.eye(n)
    linv = solve_triangular(L, eye, lower=True)
    sigma_inv = linv.T @ linv
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)

    if n / lam <= 1:
        branch, P, r, tau = "interior", sigma_inv / lam, 0.0, 1.0
    else:
        branch, P, r, tau = "saturated", np.zeros((n, n)), 1.0, 0.0
    q = np.zeros(n)

    nonneg, outside = lmi_blocks(P, q, r, tau, sigma_inv, lam)
    eigs = np.concatenate([
        np.linalg.eigvalsh(nonneg),
        np.linalg.eigvalsh(0.5 * (outside + outside.T)),
        [tau, r],
    ])
    min_eig = float(np.min(eigs))
    objective = float(np.sum(s * P)) + r  # tr(Sigma P) + r, both symmetric
    return CertificateReport(branch, objective, min_eig, min_eig >= -tol, P, q, r, tau)
