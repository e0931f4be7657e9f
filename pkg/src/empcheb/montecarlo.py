"""Reproducible sampling and Monte Carlo certification of the bounds.

Random streams are keyed by ``(seed, stream_index)`` through numpy's
``SeedSequence`` spawn keys, so a stream never depends on how many other
streams were drawn or in what order.  ``validate_bound`` runs its trials in
fixed-size blocks; block ``b`` always reads stream ``b``, which makes the event
count independent of the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import bounds, geometry
from .errors import DegenerateSpecError, SingularCovarianceError, SpecValidationError

FAMILIES = ("gaussian", "uniform_box", "student_t", "two_point", "mixture")


@dataclass(frozen=True, eq=False)
class DistributionSpec:
    family: str
    dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecValidationError(f"unknown family {self.family!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise SpecValidationError(f"dimension must be a positive integer, got {self.dim!r}")

    def mean(self) -> np.ndarray:
        p = self.params
        if self.family == "gaussian":
            return p["mean"].copy()
        if self.family == "uniform_box":
            return (p["lo"] + p["hi"]) / 2
        if self.family == "student_t":
            return p["loc"].copy()
        if self.family == "two_point":
            return p["p"] * p["a"] + (1 - p["p"]) * p["b"]
        return sum(w * c.mean() for c, w in zip(p["components"], p["weights"]))

    def covariance(self) -> np.ndarray:
        p = self.params
        if self.family == "gaussian":
            return p["cov"].copy()
        if self.family == "uniform_box":
            return np.diag((p["hi"] - p["lo"]) ** 2 / 12)
        if self.family == "student_t":
            nu = p["dof"]
            return nu / (nu - 2) * p["scale"]
        if self.family == "two_point":
            return np.diag(p["p"] * (1 - p["p"]) * (p["a"] - p["b"]) ** 2)
        mu = self.mean()
        second = sum(w * (c.covariance() + np.outer(c.mean(), c.mean()))
                     for c, w in zip(p["components"], p["weights"]))
        return second - np.outer(mu, mu)

    def describe(self) -> dict:
        def enc(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, DistributionSpec):
                return v.describe()
            if isinstance(v, (list, tuple)):
                return [enc(x) for x in v]
            return v

        return {"family": self.family, "dim": self.dim,
                **{k: enc(v) for k, v in self.params.items()}}


def _vec(x, dim, name):
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.size == 1 and dim > 1:
        v = np.full(dim, float(v[0]))
    if v.size != dim or not np.all(np.isfinite(v)):
        raise SpecValidationError(f"{name} must be a finite vector of length {dim}")
    return v


def _spd(m, dim, name):
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.shape != (dim, dim):
        raise SpecValidationError(f"{name} must be {dim}x{dim}, got {a.shape}")
    try:
        L = geometry.cholesky(a)
    except (SingularCovarianceError, ValueError) as exc:
        raise SpecValidationError(f"{name} must be symmetric positive definite: {exc}") from exc
    return a, L


def gaussian(mean=None, cov=None, dim: int | None = None) -> DistributionSpec:
    if dim is None:
        dim = len(mean) if mean is not None else (np.atleast_2d(cov).shape[0] if cov is not None else 1)
    mean = np.zeros(dim) if mean is None else _vec(mean, dim, "mean")
    cov, L = _spd(np.eye(dim) if cov is None else cov, dim, "covariance")
    return DistributionSpec("gaussian", dim, {"mean": mean, "cov": cov, "chol": L})


def uniform_box(lo, hi, dim: int | None = None) -> DistributionSpec:
    dim = dim or np.asarray(lo).size
    lo, hi = _vec(lo, dim, "lo"), _vec(hi, dim, "hi")
    if np.any(hi <= lo):
        raise SpecValidationError("uniform_box needs hi > lo on every axis")
    return DistributionSpec("uniform_box", dim, {"lo": lo, "hi": hi})


def student_t(dof, scale=None, loc=None, dim: int | None = None) -> DistributionSpec:
    if dim is None:
        dim = np.atleast_2d(scale).shape[0] if scale is not None else (len(loc) if loc is not None else 1)
    if not (math.isfinite(dof) and dof > 2):
        raise SpecValidationError(f"student_t needs dof > 2 for a finite covariance, got {dof}")
    scale, L = _spd(np.eye(dim) if scale is None else scale, dim, "scale")
    loc = np.zeros(dim) if loc is None else _vec(loc, dim, "loc")
    return DistributionSpec("student_t", dim, {"dof": float(dof), "scale": scale, "chol": L, "loc": loc})


def two_point(a, b, p: float, dim: int | None = None) -> DistributionSpec:
    """Each coordinate independently equals a[j] with probability p, else b[j]."""
    dim = dim or np.asarray(a).size
    a, b = _vec(a, dim, "a"), _vec(b, dim, "b")
    if not (0 <= p <= 1):
        raise SpecValidationError(f"two_point weight must lie in [0, 1], got {p}")
    return DistributionSpec("two_point", dim, {"a": a, "b": b, "p": float(p)})


def mixture(components: Sequence[DistributionSpec], weights: Sequence[float]) -> DistributionSpec:
    if not components or len(components) != len(weights):
        raise SpecValidationError("mixture needs one weight per component")
    dims = {c.dim for c in components}
    if len(dims) != 1:
        raise SpecValidationError(f"mixture components disagree on dimension: {sorted(dims)}")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise SpecValidationError("mixture weights must be nonnegative and sum to 1")
    return DistributionSpec("mixture", dims.pop(), {"components": list(components), "weights": w})


def rng_for(seed: int, stream_index: int) -> np.random.Generator:
    if int(seed) != seed or not (0 <= seed < 2**64):
        raise SpecValidationError(f"seed must be a 64-bit nonnegative integer, got {seed!r}")
    if int(stream_index) != stream_index or stream_index < 0:
        raise SpecValidationError(f"stream index must be a nonnegative integer, got {stream_index!r}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream_index),)))


def _sample(spec: DistributionSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    p, d = spec.params, spec.dim
    if spec.family == "gaussian":
        return p["mean"] + rng.standard_normal((count, d)) @ p["chol"].T
    if spec.family == "uniform_box":
        return p["lo"] + (p["hi"] - p["lo"]) * rng.random((count, d))
    if spec.family == "student_t":
        z = rng.standard_normal((count, d)) @ p["chol"].T
        w = rng.chisquare(p["dof"], size=count)
        return p["loc"] + z / np.sqrt(w / p["dof"])[:, None]
    if spec.family == "two_point":
        return np.where(rng.random((count, d)) < p["p"], p["a"], p["b"])
    which = rng.choice(len(p["components"]), size=count, p=p["weights"])
    out = np.empty((count, d))
    for i, comp in enumerate(p["components"]):
        mask = which == i
        out[mask] = _sample(comp, rng, int(mask.sum()))
    return out


def draw(spec: DistributionSpec, seed: int, stream_index: int, count: int) -> np.ndarray:
    """``count`` i.i.d. samples as a (count, dim) array, determined by (seed, stream_index)."""
    if int(count) != count or count < 0:
        raise SpecValidationError(f"count must be a nonnegative integer, got {count!r}")
    return _sample(spec, rng_for(seed, stream_index), int(count))


@dataclass
class SimulationReport:
    spec: dict
    dim: int
    count: int
    lambda_sq: float
    trials: int
    events: int
    empirical_frequency: float
    bound: bounds.BoundValue
    mc_stderr: float
    passed: bool
    rejected: int = 0
    seed: int = 0
    slack_sigmas: float = 3.0

    def as_dict(self) -> dict:
        return {
            "spec": self.spec,
            "dim": self.dim,
            "count": self.count,
            "lambda_sq": self.lambda_sq,
            "trials": self.trials,
            "events": self.events,
            "empirical_frequency": self.empirical_frequency,
            "bound": self.bound.as_dict(),
            "mc_stderr": self.mc_stderr,
            "slack_sigmas": self.slack_sigmas,
            "pass": self.passed,
            "rejected_trials": self.rejected,
            "seed": self.seed,
        }


def _trial_block(spec, count, lambda_sq, seed, block, size):
    """Events and singular flags for one block of trials, in trial order.

    Each trial draws count + 1 samples and tests the last one against the
    moments of the first ``count``.
    """
    d = spec.dim
    x = draw(spec, seed, block, size * (count + 1)).reshape(size, count + 1, d)
    first, new = x[:, :count], x[:, count]
    mean = first.mean(axis=1)
    dev = first - mean[:, None, :]
    cov = np.einsum("bni,bnj->bij", dev, dev) / (count - 1)
    tr = np.trace(cov, axis1=1, axis2=2)
    ok = tr > 0
    ok[ok] = np.linalg.eigvalsh(cov[ok])[:, 0] > geometry.PIVOT_RTOL * tr[ok] / d
    events = np.zeros(size, dtype=bool)
    if ok.any():
        L = np.linalg.cholesky(cov[ok])
        ok_idx = np.flatnonzero(ok)
        pivots = np.diagonal(L, axis1=1, axis2=2) ** 2
        good = pivots.min(axis=1) > geometry.PIVOT_RTOL * tr[ok] / d
        ok[ok_idx[~good]] = False
        z = np.linalg.solve(L[good], (new[ok] - mean[ok])[..., None])[..., 0]
        events[ok] = np.sum(z * z, axis=1) >= lambda_sq
    return events, ok


def validate_bound(spec: DistributionSpec, count: int, lambda_sq, trials: int = 100_000,
                   seed: int = 0, block_size: int = 8192, workers: int = 1,
                   max_reject_rate: float = 1e-3, slack_sigmas: float = 3.0) -> SimulationReport:
    """Estimate P(q_N >= lambda^2) by simulation and compare with the empirical bound.

    Trials whose first ``count`` samples have a singular covariance are
    discarded (the bound conditions on nonsingularity) and replaced by later
    trials; if more than ``max_reject_rate`` of them are singular the spec is
    declared degenerate.  Passing means frequency <= bound + 3 standard errors.
    """
    bound = bounds.empirical_bound(spec.dim, count, lambda_sq)
    lam = float(lambda_sq)
    if trials < 1:
        raise SpecValidationError("need at least one trial")
    events = accepted = examined = 0
    block = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while accepted < trials:
            ids = list(range(block, block + max(1, workers)))
            block += len(ids)
            if pool is None:
                results = [_trial_block(spec, count, lam, seed, b, block_size) for b in ids]
            else:
                results = list(pool.map(lambda b: _trial_block(spec, count, lam, seed, b, block_size), ids))
            for ev, ok in results:
                need = trials - accepted
                if need <= 0:
                    break
                cum = np.cumsum(ok)
                if cum[-1] > need:
                    stop = int(np.searchsorted(cum, need)) + 1
                    ev, ok = ev[:stop], ok[:stop]
                examined += ok.size
                accepted += int(ok.sum())
                events += int(ev.sum())
            rejected = examined - accepted
            if rejected > max_reject_rate * max(examined, trials):
                raise DegenerateSpecError(
                    f"{rejected} of {examined} trials had a singular sample covariance "
                    f"(limit {max_reject_rate:.1%}); the spec is too degenerate for N={count}"
                )
    finally:
        if pool is not None:
            pool.shutdown()
    f = events / trials
    se = math.sqrt(f * (1 - f) / trials)
    return SimulationReport(spec.describe(), spec.dim, count, lam, trials, events, f, bound, se,
                            f <= float(bound.value) + slack_sigmas * se, examined - accepted, seed,
                            slack_sigmas)


@dataclass(frozen=True)
class SweepRow:
    count: int
    bound: Fraction
    limit: Fraction
    gap: Fraction


def convergence_sweep(dim: int, lambda_sq, counts: Sequence[int]) -> list[SweepRow]:
    """Exact empirical bound against its large-N limit for each N in ``counts``."""
    counts = [int(c) for c in counts]
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("counts must be strictly increasing")
    limit = bounds.asymptotic_bound(dim, lambda_sq).value
    rows = []
    for N in counts:
        b = bounds.empirical_bound(dim, N, lambda_sq).value
        rows.append(SweepRow(N, b, limit, abs(b - limit)))
    return rows


def lemma1_trial(dim: int, size: int, k_sq_grid, seed: int, spec: DistributionSpec | None = None,
                 trials: int = 1, max_redraws: int = 100) -> int:
    """Count violations of the whitened-set counting bound.

    Each trial draws ``size`` (= N+1) samples, whitens them, and for every k^2
    in the grid compares the number of vectors with ||u||^2 >= k^2 against
    floor(dim * size / k^2).  Singular draws are redrawn from the next stream.
    The return value must be 0.
    """
    spec = spec or gaussian(dim=dim)
    if spec.dim != dim:
        raise SpecValidationError(f"spec has dimension {spec.dim}, expected {dim}")
    violations = 0
    stream = 0
    for _ in range(trials):
        for _attempt in range(max_redraws):
            x = draw(spec, seed, stream, size)
            stream += 1
            try:
                u = geometry.whiten(x)
                break
            except SingularCovarianceError:
                continue
        else:
            raise DegenerateSpecError(f"{max_redraws} consecutive singular draws")
        sq = np.sum(u * u, axis=1)
        for k_sq in k_sq_grid:
            if np.count_nonzero(sq >= k_sq) > bounds.counting_bound(dim, size, k_sq):
                violations += 1
    return violations
