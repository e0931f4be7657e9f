"""Streaming empirical mean and covariance.

The state is the triple (count, mean, scatter) where scatter is the sum of
outer products of deviations from the current mean.  Both the biased
(``scatter / N``) and unbiased (``scatter / (N - 1)``) covariances are derived
from it, and two states merge exactly.
"""

from __future__ import annotations

from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import (
    InsufficientSamplesError,
    InvalidDimensionError,
    InvalidSampleError,
    ShapeError,
)

Mode = Literal["biased", "unbiased"]


def _as_sample(sample, dim: int) -> np.ndarray:
    x = np.asarray(sample, dtype=float).reshape(-1)
    if x.size != dim:
        raise ShapeError(f"expected a sample of length {dim}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidSampleError(f"sample contains non-finite entries: {x.tolist()}")
    return x


class SampleStats:
    """Running count, mean vector and scatter matrix of a sample stream.

    ``update`` mutates in place and returns ``self``; ``merge`` and ``copy``
    return new objects.  Non-finite samples are rejected rather than skipped,
    because a skipped sample would silently change N.
    """

    __slots__ = ("dim", "count", "mean", "scatter")

    def __init__(self, dim: int):
        if int(dim) != dim or dim < 1:
            raise InvalidDimensionError(f"dimension must be a positive integer, got {dim!r}")
        self.dim = int(dim)
        self.count = 0
        self.mean = np.zeros(self.dim)
        self.scatter = np.zeros((self.dim, self.dim))

    @classmethod
    def from_samples(cls, samples, dim: int | None = None) -> "SampleStats":
        arr = np.asarray(samples, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1) if dim in (None, 1) else arr.reshape(1, -1)
        if dim is None:
            if arr.size == 0:
                raise InvalidDimensionError("cannot infer dimension from an empty sample set")
            dim = arr.shape[1]
        stats = cls(dim)
        for row in arr:
            stats.update(row)
        return stats

    def copy(self) -> "SampleStats":
        out = SampleStats(self.dim)
        out.count = self.count
        out.mean = self.mean.copy()
        out.scatter = self.scatter.copy()
        return out

    def update(self, sample) -> "SampleStats":
        x = _as_sample(sample, self.dim)
        n = self.count
        delta = x - self.mean
        self.count = n + 1
        self.mean = self.mean + delta / (n + 1)
        # S_{N+1} = S_N + N/(N+1) * delta delta^T, delta taken against the old mean
        self.scatter = self.scatter + (n / (n + 1)) * np.outer(delta, delta)
        self.scatter = 0.5 * (self.scatter + self.scatter.T)
        return self

    def update_many(self, samples: Iterable) -> "SampleStats":
        for x in samples:
            self.update(x)
        return self

    def merge(self, other: "SampleStats") -> "SampleStats":
        if other.dim != self.dim:
            raise ShapeError(f"cannot merge stats of dimension {self.dim} and {other.dim}")
        if other.count == 0:
            return self.copy()
        if self.count == 0:
            return other.copy()
        na, nb = self.count, other.count
        n = na + nb
        delta = other.mean - self.mean
        out = SampleStats(self.dim)
        out.count = n
        out.mean = self.mean + delta * (nb / n)
        scatter = self.scatter + other.scatter + (na * nb / n) * np.outer(delta, delta)
        out.scatter = 0.5 * (scatter + scatter.T)
        return out

    def covariance(self, mode: Mode = "unbiased") -> np.ndarray:
        if mode == "unbiased":
            if self.count < 2:
                raise InsufficientSamplesError(
                    f"unbiased covariance needs at least 2 samples, have {self.count}"
                )
            return self.scatter / (self.count - 1)
        if mode == "biased":
            if self.count < 1:
                raise InsufficientSamplesError("biased covariance needs at least 1 sample")
            return self.scatter / self.count
        raise ValueError(f"unknown covariance mode {mode!r}")

    def __repr__(self):
        return f"SampleStats(dim={self.dim}, count={self.count})"


def init(dim: int) -> SampleStats:
    return SampleStats(dim)


def update(stats: SampleStats, sample) -> SampleStats:
    """Return a new state with ``sample`` appended; ``stats`` is left untouched."""
    return stats.copy().update(sample)


def merge(a: SampleStats, b: SampleStats) -> SampleStats:
    return a.merge(b)


def covariance(stats: SampleStats, mode: Mode = "unbiased") -> np.ndarray:
    return stats.covariance(mode)


def two_pass_covariance(samples: Sequence, mode: Mode = "unbiased"):
    """Mean and covariance straight from the definitions (non-streaming).

    Used as the reference the streaming state is checked against.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise InsufficientSamplesError("no samples")
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    n = arr.shape[0]
    mean = arr.sum(axis=0) / n
    dev = arr - mean
    scatter = np.zeros((arr.shape[1], arr.shape[1]))
    for d in dev:
        scatter += np.outer(d, d)
    if mode == "unbiased":
        if n < 2:
            raise InsufficientSamplesError(f"unbiased covariance needs at least 2 samples, have {n}")
        return mean, scatter / (n - 1)
    if mode == "biased":
        return mean, scatter / n
    raise ValueError(f"unknown covariance mode {mode!r}")
