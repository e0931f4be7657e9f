"""Closed-form Chebyshev-type bounds with estimated mean and covariance.

All bounds take the squared radius ``lambda_sq`` rather than the radius, so a
rational radius stays rational and floors are evaluated on integers.  Any
finite float is itself a rational number, so the exact path accepts floats
too; ``exact=False`` selects a pure floating-point evaluation that rounds
ambiguous floor arguments upward (a larger floor is still a valid bound).

Notation: ``dim`` is the dimension n of the random vector, ``count`` the
number N of samples used to estimate the moments, and the guarantee concerns
the (N+1)-th sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from numbers import Rational
from typing import Union

import numpy as np

from .errors import (
    InsufficientSamplesError,
    InvalidDimensionError,
    InvalidKError,
    InvalidProbabilityError,
    InvalidRadiusError,
)

Number = Union[int, float, Fraction, str]

# Floating path: floor arguments this close below an integer are rounded up.
FLOAT_FLOOR_TOL = 1e-9
# invert_bound contract: bound(returned_lambda * (1 + SAFETY)) <= epsilon.
SAFETY = 1e-12


class Formula(str, Enum):
    EMPIRICAL = "empirical"
    SIMPLIFIED = "simplified"
    ASYMPTOTIC = "asymptotic"
    UNIVARIATE_SAW = "univariate_saw"


@dataclass(frozen=True)
class BoundValue:
    value: Union[Fraction, float]
    formula: Formula
    exact: bool

    def __float__(self):
        return float(self.value)

    def __le__(self, other):
        return _value(self) <= _value(other)

    def __lt__(self, other):
        return _value(self) < _value(other)

    def __ge__(self, other):
        return _value(self) >= _value(other)

    def __gt__(self, other):
        return _value(self) > _value(other)

    def as_dict(self):
        out = {"value": float(self.value), "formula": self.formula.value, "exact": self.exact}
        if isinstance(self.value, Fraction):
            out["value_exact"] = f"{self.value.numerator}/{self.value.denominator}"
        return out


def _value(x):
    return x.value if isinstance(x, BoundValue) else x


def to_rational(x: Number) -> Fraction:
    """Exact rational value of ``x``.

    Strings may be integers, decimals (``"2.9"`` is 29/10, not the nearest
    double) or ``"p/q"``.  Floats convert to their exact binary value.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (bool, np.bool_)):
        raise TypeError("boolean is not a number")
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, Rational):
        return Fraction(x.numerator, x.denominator)
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidRadiusError(f"not a rational number: {x!r}") from exc
    if isinstance(x, Decimal):
        if not x.is_finite():
            raise InvalidRadiusError(f"non-finite value {x}")
        return Fraction(x)
    xf = float(x)
    if not math.isfinite(xf):
        raise InvalidRadiusError(f"non-finite value {x}")
    return Fraction(xf)


def _check_dim(dim):
    if int(dim) != dim or dim < 1:
        raise InvalidDimensionError(f"dimension must be a positive integer, got {dim!r}")
    return int(dim)


def _check_count(count):
    if int(count) != count or count < 2:
        raise InsufficientSamplesError(f"sample count must be an integer >= 2, got {count!r}")
    return int(count)


def _check_lambda_sq(lambda_sq, exact=True):
    if exact:
        lam = to_rational(lambda_sq)
        if lam <= 0:
            raise InvalidRadiusError(f"lambda^2 must be positive, got {lambda_sq}")
        return lam
    lam = float(lambda_sq)
    if not (math.isfinite(lam) and lam > 0):
        raise InvalidRadiusError(f"lambda^2 must be positive and finite, got {lambda_sq}")
    return lam


def _check_epsilon(epsilon) -> Fraction:
    try:
        eps = to_rational(epsilon)
    except InvalidRadiusError as exc:
        raise InvalidProbabilityError(str(exc)) from exc
    if not (0 < eps < 1):
        raise InvalidProbabilityError(f"epsilon must lie in (0, 1), got {epsilon}")
    return eps


@dataclass(frozen=True)
class BoundQuery:
    """Validated (dim, count, lambda^2) triple."""

    dim: int
    count: int
    lambda_sq: Union[Fraction, float]

    def __post_init__(self):
        object.__setattr__(self, "dim", _check_dim(self.dim))
        object.__setattr__(self, "count", _check_count(self.count))
        if isinstance(self.lambda_sq, float):
            _check_lambda_sq(self.lambda_sq, exact=False)
        else:
            object.__setattr__(self, "lambda_sq", _check_lambda_sq(self.lambda_sq))

    @classmethod
    def from_lambda(cls, dim, count, lam: Number):
        """Build a query from the radius itself; rational radii square exactly."""
        if isinstance(lam, float):
            if not lam > 0:
                raise InvalidRadiusError(f"lambda must be positive, got {lam}")
            return cls(dim, count, Fraction(lam) ** 2)
        r = to_rational(lam)
        if r <= 0:
            raise InvalidRadiusError(f"lambda must be positive, got {lam}")
        return cls(dim, count, r * r)

    def evaluate(self, formula: Formula = Formula.EMPIRICAL, exact: bool = True) -> BoundValue:
        formula = Formula(formula)
        if formula is Formula.EMPIRICAL:
            return empirical_bound(self.dim, self.count, self.lambda_sq, exact=exact)
        if formula is Formula.SIMPLIFIED:
            return simplified_bound(self.dim, self.count, self.lambda_sq, exact=exact)
        if formula is Formula.ASYMPTOTIC:
            return asymptotic_bound(self.dim, self.lambda_sq, exact=exact)
        if self.dim != 1:
            raise InvalidDimensionError("the univariate bound needs dim == 1")
        return saw_bound(self.count, self.lambda_sq, exact=exact)


def _float_floor(arg: float) -> int:
    fl = math.floor(arg)
    if arg - fl >= 1.0 - FLOAT_FLOOR_TOL * max(1.0, arg):
        fl += 1
    return fl


def empirical_floor(dim: int, count: int, lambda_sq) -> int:
    """floor(n (N+1) (N^2 - 1 + N lambda^2) / (N^2 lambda^2)), exactly."""
    lam = _check_lambda_sq(lambda_sq)
    p, q = lam.numerator, lam.denominator
    n, N = dim, count
    return (n * (N + 1) * (q * (N * N - 1) + N * p)) // (N * N * p)


def empirical_bound(dim: int, count: int, lambda_sq: Number, exact: bool = True) -> BoundValue:
    """min{1, floor(n (N+1) (N^2-1+N lambda^2) / (N^2 lambda^2)) / (N+1)}.

    Upper bound on the probability that the (N+1)-th i.i.d. sample has squared
    Mahalanobis distance >= lambda^2 from the first N samples' mean, measured
    with their unbiased covariance.  Requires that covariance to be nonsingular.
    """
    n, N = _check_dim(dim), _check_count(count)
    if exact:
        fl = empirical_floor(n, N, lambda_sq)
        return BoundValue(min(Fraction(1), Fraction(fl, N + 1)), Formula.EMPIRICAL, True)
    lam = _check_lambda_sq(lambda_sq, exact=False)
    arg = n * (N + 1) * (N * N - 1 + N * lam) / (N * N * lam)
    return BoundValue(min(1.0, _float_floor(arg) / (N + 1)), Formula.EMPIRICAL, False)


def simplified_bound(dim: int, count: int, lambda_sq: Number, exact: bool = True) -> BoundValue:
    """The empirical bound with the floor replaced by its argument."""
    n, N = _check_dim(dim), _check_count(count)
    lam = _check_lambda_sq(lambda_sq, exact)
    one = Fraction(1) if exact else 1.0
    val = one * n * (N * N - 1 + N * lam) / (N * N * lam)
    return BoundValue(min(one, val), Formula.SIMPLIFIED, exact)


def asymptotic_bound(dim: int, lambda_sq: Number, exact: bool = True) -> BoundValue:
    """min{1, n / lambda^2}: the known-moments multivariate Chebyshev bound."""
    n = _check_dim(dim)
    lam = _check_lambda_sq(lambda_sq, exact)
    one = Fraction(1) if exact else 1.0
    return BoundValue(min(one, n / lam), Formula.ASYMPTOTIC, exact)


def classical_bound(lam: Number) -> Fraction:
    """Scalar Chebyshev: P(|x - mu| >= lam * sigma) <= min{1, 1/lam^2}."""
    r = to_rational(lam)
    if r <= 0:
        raise InvalidRadiusError(f"lambda must be positive, got {lam}")
    return min(Fraction(1), 1 / (r * r))


def saw_bound(count: int, lambda_sq: Number, exact: bool = True) -> BoundValue:
    """Univariate empirical Chebyshev bound for the (N+1)-th sample.

    Evaluated by plain Fraction arithmetic rather than the integer
    numerator/denominator route of :func:`empirical_bound`, so the two can be
    compared against each other.
    """
    N = _check_count(count)
    if not exact:
        lam = _check_lambda_sq(lambda_sq, exact=False)
        arg = (N + 1) * (N**2 - 1 + N * lam) / (N**2 * lam)
        return BoundValue(min(1.0, _float_floor(arg) / (N + 1)), Formula.UNIVARIATE_SAW, False)
    lam = _check_lambda_sq(lambda_sq)
    arg = Fraction(N + 1) * (N**2 - 1 + N * lam) / (N**2 * lam)
    return BoundValue(min(Fraction(1), Fraction(math.floor(arg), N + 1)), Formula.UNIVARIATE_SAW, True)


def lambda_to_k(count: int, lambda_sq):
    """k^2 = N^2 lambda^2 / (N^2 - 1 + N lambda^2).

    Maps a Mahalanobis radius on the first N samples to the equivalent radius
    on the whitened N+1 samples.  Floats stay floats, rationals stay exact.
    """
    N = int(count)
    if isinstance(lambda_sq, float):
        lam = _check_lambda_sq(lambda_sq, exact=False)
    else:
        lam = _check_lambda_sq(lambda_sq)
    return N * N * lam / (N * N - 1 + N * lam)


def k_to_lambda(count: int, k_sq):
    """Inverse of :func:`lambda_to_k`; needs 0 < k^2 < N."""
    N = int(count)
    k = k_sq if isinstance(k_sq, float) else to_rational(k_sq)
    if not (0 < k < N):
        raise InvalidKError(f"k^2 must lie in (0, N={N}), got {k_sq}")
    return (N * N - 1) * k / (N * (N - k))


def counting_bound(dim: int, count: int, k_sq) -> int:
    """floor(n N / k^2): how many of N whitened vectors can have norm >= k.

    Not clipped to N.
    """
    n = _check_dim(dim)
    k = to_rational(k_sq)
    if k <= 0:
        raise InvalidKError(f"k^2 must be positive, got {k_sq}")
    return math.floor(Fraction(n * int(count)) / k)


def min_achievable(dim: int, count: int) -> Fraction:
    """Limit of the empirical bound as lambda -> infinity at fixed N."""
    n, N = _check_dim(dim), _check_count(count)
    return Fraction((n * (N + 1)) // N, N + 1)


def threshold_sq(dim: int, count: int, epsilon: Number) -> Fraction | None:
    """Exact infimum of the lambda^2 values whose empirical bound is <= epsilon.

    The bound is a right-continuous, nonincreasing step function of lambda^2,
    and steps down past value F/(N+1) exactly where the floor argument equals
    F + 1.  The feasible set is therefore the open ray beyond the returned
    value.  Returns None when no radius reaches epsilon.
    """
    n, N = _check_dim(dim), _check_count(count)
    eps = _check_epsilon(epsilon)
    allowed = math.floor(eps * (N + 1))  # largest admissible floor value
    denom = N * N * (allowed + 1) - n * N * (N + 1)
    if denom <= 0:
        return None
    return Fraction(n * (N + 1) * (N * N - 1), denom)


def _safe_radius_sq(boundary: Fraction) -> float:
    """(sqrt(boundary) * (1 + SAFETY))^2, nudged up until strictly beyond boundary."""
    lam = math.sqrt(boundary)
    r = (lam * (1 + SAFETY)) ** 2
    while Fraction(r) <= boundary:
        r = math.nextafter(r, math.inf)
    return r


def invert_bound(dim: int, count: int, epsilon: Number) -> float | None:
    """Infimal lambda with empirical bound <= epsilon, or None if infeasible.

    The bound at the returned lambda itself exceeds epsilon (the feasible set
    is open); any radius at least ``lambda * (1 + 1e-12)`` satisfies it.
    """
    boundary = threshold_sq(dim, count, epsilon)
    if boundary is None:
        return None
    return math.sqrt(boundary)


def safe_lambda_sq(dim: int, count: int, epsilon: Number) -> float | None:
    """Squared radius ``(invert_bound(...) * (1 + 1e-12))**2``, verified feasible."""
    boundary = threshold_sq(dim, count, epsilon)
    if boundary is None:
        return None
    return _safe_radius_sq(boundary)


def _simplified_exact(n, N, lam: Fraction) -> Fraction:
    return Fraction(n * (N * N - 1 + N * lam), 1) / (N * N * lam)


def min_sample_size(dim: int, lambda_sq: Number, epsilon: Number, sustained: bool = False) -> int | None:
    """Smallest N >= dim + 1 whose empirical bound at lambda^2 is <= epsilon.

    Returns None when the large-N limit n / lambda^2 is not below epsilon.

    The empirical bound is not monotone in N: the floor makes it saw-tooth, so
    a feasible N can be followed by an infeasible N + 1.  With
    ``sustained=True`` the result is instead the smallest N from which every
    larger sample count is feasible.
    """
    n = _check_dim(dim)
    lam = _check_lambda_sq(lambda_sq)
    eps = _check_epsilon(epsilon)
    if Fraction(n) / lam >= eps:
        return None
    start = max(2, n + 1)

    # The floor-free bound decreases strictly in N once N > 2 / lambda^2 and
    # dominates the empirical bound, so everything past its crossing is feasible.
    lo = max(start, math.floor(2 / lam) + 1)
    hi = lo
    while _simplified_exact(n, hi, lam) > eps:
        lo, hi = hi, hi * 2
    while lo < hi:
        mid = (lo + hi) // 2
        if _simplified_exact(n, mid, lam) <= eps:
            hi = mid
        else:
            lo = mid + 1
    upper = hi

    def feasible(N):
        return empirical_bound(n, N, lam).value <= eps

    if sustained:
        N = upper
        while N - 1 >= start and feasible(N - 1):
            N -= 1
        return N

    # empirical > simplified - 1/(N+1); only N passing that cheap float test
    # can be feasible, so prefilter with numpy and confirm exactly.
    lam_f, eps_f = float(lam), float(eps)
    chunk = 1 << 16
    for a in range(start, upper, chunk):
        Ns = np.arange(a, min(upper, a + chunk), dtype=float)
        simp = n * (Ns * Ns - 1 + Ns * lam_f) / (Ns * Ns * lam_f)
        cand = Ns[simp - 1.0 / (Ns + 1) <= eps_f + 1e-9]
        for N in cand:
            if feasible(int(N)):
                return int(N)
    return upper
