"""Streaming outlier detection with a distribution-free false-alarm bound.

Each post-warmup sample is tested against the mean and unbiased covariance of
the samples kept so far.  It is flagged when its squared Mahalanobis distance
reaches the threshold lambda^2.  For i.i.d. data the probability of flagging
that single sample is at most the empirical bound at (dim, N, lambda^2).  The
guarantee is per test: repeated testing along a stream is a sequence of
marginal guarantees, not a joint one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable, Iterator

import numpy as np
from scipy.linalg import solve_triangular

from . import bounds
from .errors import (
    InfeasibleEpsilonError,
    InvalidDimensionError,
    InvalidProbabilityError,
    InvalidRadiusError,
    InvalidSampleError,
    ShapeError,
    SingularCovarianceError,
)
from .geometry import cholesky
from .stats import SampleStats


class UpdatePolicy(str, Enum):
    ALWAYS = "always"
    # Conditioning on "not flagged" biases the moments: the bound no longer applies.
    INLIERS_ONLY = "inliers_only"
    FROZEN_AFTER_WARMUP = "frozen_after_warmup"


@dataclass(frozen=True)
class DetectorConfig:
    epsilon: float | None = None
    lambda_sq: float | None = None
    warmup: int | None = None
    update_policy: UpdatePolicy = UpdatePolicy.ALWAYS
    dim: int | None = None

    def __post_init__(self):
        if (self.epsilon is None) == (self.lambda_sq is None):
            raise ValueError("set exactly one of epsilon or lambda_sq")
        if self.epsilon is not None and not (0 < float(self.epsilon) < 1):
            raise InvalidProbabilityError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.lambda_sq is not None:
            lam = float(self.lambda_sq)
            if not (math.isfinite(lam) and lam > 0):
                raise InvalidRadiusError(f"lambda^2 must be positive, got {self.lambda_sq}")
        object.__setattr__(self, "update_policy", UpdatePolicy(self.update_policy))
        if self.dim is not None:
            if int(self.dim) != self.dim or self.dim < 1:
                raise InvalidDimensionError(f"dimension must be a positive integer, got {self.dim}")
            self.min_warmup_check(self.dim)

    def resolved_warmup(self, dim: int) -> int:
        return self.warmup if self.warmup is not None else dim + 1

    def min_warmup_check(self, dim: int):
        if self.warmup is not None and self.warmup < dim + 1:
            raise ValueError(f"warmup must be at least dim + 1 = {dim + 1}, got {self.warmup}")


@dataclass(frozen=True)
class OutlierVerdict:
    index: int
    distance_sq: float
    threshold_sq: float
    flagged: bool
    stats_count: int
    bound_at_threshold: float
    bound_exact: str | None = None
    formula: str = bounds.Formula.EMPIRICAL.value

    def as_dict(self):
        return asdict(self)


def threshold_for(dim: int, count: int, config: DetectorConfig) -> tuple[float, bounds.BoundValue]:
    """Threshold lambda^2 in force at sample count N, with the bound it achieves."""
    if config.lambda_sq is not None:
        lam = float(config.lambda_sq)
    else:
        lam = bounds.safe_lambda_sq(dim, count, config.epsilon)
        if lam is None:
            floor = bounds.min_achievable(dim, count)
            raise InfeasibleEpsilonError(
                f"epsilon={config.epsilon} is not achievable with N={count} samples in {dim} "
                f"dimensions; the smallest feasible epsilon is {floor} ({float(floor):.6g}), "
                f"or use a longer warmup",
                min_epsilon=floor,
            )
    return lam, bounds.empirical_bound(dim, count, lam)


def detect_stream(stream: Iterable, config: DetectorConfig) -> Iterator[OutlierVerdict]:
    """Yield one verdict per sample after the warmup.

    The first ``warmup`` samples only feed the estimates.  Afterwards each
    sample is tested against the current estimates, then folded in according
    to the update policy.  Deterministic: the same stream and config give the
    same verdicts.
    """
    stats = None
    warmup = None
    L = None
    policy = config.update_policy
    for index, raw in enumerate(stream):
        x = np.asarray(raw, dtype=float).reshape(-1)
        if stats is None:
            dim = config.dim or x.size
            config.min_warmup_check(dim)
            warmup = config.resolved_warmup(dim)
            stats = SampleStats(dim)
        if stats.count < warmup:
            stats.update(x)
            continue
        if L is None or policy is not UpdatePolicy.FROZEN_AFTER_WARMUP:
            try:
                L = cholesky(stats.covariance("unbiased"))
            except SingularCovarianceError as exc:
                raise SingularCovarianceError(
                    f"sample covariance is singular after a warmup of {warmup} samples "
                    f"(dim {stats.dim}); the stream may be degenerate or the warmup too short"
                ) from exc
            lam, bound = threshold_for(stats.dim, stats.count, config)
        d2 = _distance_sq(L, stats.mean, x, stats.dim)
        flagged = d2 >= lam
        yield OutlierVerdict(index, d2, lam, bool(flagged), stats.count, float(bound.value),
                             str(bound.value))
        if policy is UpdatePolicy.ALWAYS or (policy is UpdatePolicy.INLIERS_ONLY and not flagged):
            stats.update(x)


def _distance_sq(L, mean, x, dim):
    if x.size != dim:
        raise ShapeError(f"expected a sample of length {dim}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidSampleError(f"sample contains non-finite entries: {x.tolist()}")
    z = solve_triangular(L, x - mean, lower=True, check_finite=False)
    return float(z @ z)


GUARANTEE = (
    "If the stream is i.i.d. and its covariance is nonsingular, a fresh sample is "
    "flagged with probability at most {bound:.6g} at this step. The statement "
    "covers this single test, not the whole stream."
)


def explain_verdict(verdict: OutlierVerdict, policy: UpdatePolicy | str = UpdatePolicy.ALWAYS) -> dict:
    """Human-oriented record of a verdict, including the scope of its guarantee."""
    policy = UpdatePolicy(policy)
    rec = verdict.as_dict()
    rec["distance"] = math.sqrt(verdict.distance_sq)
    rec["threshold"] = math.sqrt(verdict.threshold_sq)
    rec["guarantee"] = GUARANTEE.format(bound=verdict.bound_at_threshold)
    if policy is UpdatePolicy.INLIERS_ONLY:
        rec["guarantee"] += (" Estimates exclude flagged samples, which voids the "
                             "i.i.d. premise; treat the bound as heuristic.")
    return rec


__all__ = [
    "DetectorConfig",
    "OutlierVerdict",
    "UpdatePolicy",
    "detect_stream",
    "explain_verdict",
    "threshold_for",
]
