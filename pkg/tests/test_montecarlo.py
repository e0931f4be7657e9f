from fractions import Fraction as F

import numpy as np
import pytest

from empcheb import montecarlo as mc
from empcheb.errors import DegenerateSpecError, SpecValidationError


def test_gaussian_moments():
    x = mc.draw(mc.gaussian(dim=2), seed=1, stream_index=0, count=100_000)
    # 3-sigma: mean se = 1/sqrt(1e5) ~ 0.0032; covariance entries se ~ 0.0045
    assert np.max(np.abs(x.mean(axis=0))) <= 0.02
    assert np.linalg.norm(np.cov(x.T) - np.eye(2)) <= 0.03


@pytest.mark.parametrize("spec", [
    mc.uniform_box([0, -1], [1, 3]),
    mc.student_t(5, scale=[[2.0, 0.5], [0.5, 1.0]], loc=[1, 2]),
    mc.two_point([0, 1], [3, -1], 0.3),
    mc.mixture([mc.gaussian([0, 0], np.eye(2)), mc.gaussian([4, 0], 0.5 * np.eye(2))], [0.7, 0.3]),
])
def test_family_moments(spec):
    x = mc.draw(spec, seed=2, stream_index=5, count=400_000)
    cov = spec.covariance()
    se_mean = np.sqrt(np.diag(cov) / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - spec.mean()) <= 5 * se_mean)
    assert np.allclose(np.cov(x.T), cov, rtol=0.05, atol=0.02)


def test_degenerate_two_point_draws():
    x = mc.draw(mc.two_point([1.5, -2], [1.5, -2], 0.3), seed=0, stream_index=0, count=50)
    assert np.all(x == [1.5, -2])


@pytest.mark.parametrize("make", [
    lambda: mc.student_t(2, dim=2),
    lambda: mc.gaussian([0, 0], [[1, 2], [2, 1]]),
    lambda: mc.uniform_box([0, 1], [1, 1]),
    lambda: mc.two_point([0], [1], 1.5),
    lambda: mc.mixture([mc.gaussian(dim=1)], [0.5]),
    lambda: mc.mixture([mc.gaussian(dim=1), mc.gaussian(dim=2)], [0.5, 0.5]),
])
def test_spec_validation(make):
    with pytest.raises(SpecValidationError):
        make()


def test_reproducible_and_independent_streams():
    spec = mc.student_t(3, dim=3)
    a = mc.draw(spec, 42, 7, 1000)
    b = mc.draw(spec, 42, 7, 1000)
    c = mc.draw(spec, 42, 8, 1000)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    # drawing other streams in between does not disturb a stream
    mc.draw(spec, 42, 3, 500)
    np.testing.assert_array_equal(mc.draw(spec, 42, 7, 1000), a)


def test_validate_bound_gaussian_example():
    rep = mc.validate_bound(mc.gaussian(dim=2), 20, 4, trials=100_000, seed=3)
    assert rep.bound.value == F(12, 21)
    assert rep.passed
    assert rep.events <= rep.trials
    assert rep.mc_stderr == pytest.approx(np.sqrt(rep.empirical_frequency * (1 - rep.empirical_frequency) / rep.trials))


def test_validate_bound_large_radius():
    rep = mc.validate_bound(mc.gaussian(dim=2), 100, 10**6, trials=20_000, seed=4)
    assert rep.events == 0 and rep.passed
    assert rep.bound.value == F(2, 101)


def test_validate_bound_degenerate():
    with pytest.raises(DegenerateSpecError):
        mc.validate_bound(mc.two_point([0], [1], 1.0), 10, 4, trials=1000, seed=0)


def test_validate_bound_worker_count_invariant():
    spec = mc.two_point([0, 0], [1, 2], 0.4)
    a = mc.validate_bound(spec, 25, 3, trials=30_000, seed=9, block_size=4096, workers=1)
    b = mc.validate_bound(spec, 25, 3, trials=30_000, seed=9, block_size=4096, workers=3)
    assert (a.events, a.rejected) == (b.events, b.rejected)


def test_harness_matches_direct_computation():
    # the vectorized trial block agrees with the scalar Mahalanobis route
    from empcheb.geometry import mahalanobis_sq
    from empcheb.stats import SampleStats

    spec = mc.uniform_box([0, 0, 0], [1, 2, 3])
    events, ok = mc._trial_block(spec, 12, 5.0, 11, 0, 200)
    x = mc.draw(spec, 11, 0, 200 * 13).reshape(200, 13, 3)
    direct = np.array([mahalanobis_sq(SampleStats.from_samples(t[:12]), t[12]) >= 5.0 for t in x])
    assert ok.all()
    np.testing.assert_array_equal(events, direct)


def test_convergence_sweep():
    rows = mc.convergence_sweep(2, 4, [10**2, 10**3, 10**4, 10**5, 10**6])
    gaps = [r.gap for r in rows]
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))
    assert rows[-1].gap <= F(1, 10**5)
    assert rows[-1].limit == F(1, 2)
    rows = mc.convergence_sweep(1, 9, [10, 100, 1000, 10000])
    assert rows[0].limit == F(1, 9)
    assert rows[-1].gap < rows[0].gap
    rows = mc.convergence_sweep(3, 2, [10, 100, 1000])
    assert all(r.bound == 1 and r.gap == 0 for r in rows)
    with pytest.raises(ValueError):
        mc.convergence_sweep(2, 4, [100, 10])


def test_lemma1_trial():
    assert mc.lemma1_trial(3, 31, np.linspace(0.5, 40, 20), seed=5, trials=100) == 0
    # k^2 = n (N+1): the counting bound is 1 and at most one vector qualifies
    assert mc.lemma1_trial(2, 21, [2 * 21], seed=6, trials=50) == 0
    # k^2 beyond n (N+1): bound 0, and no vector can reach it
    assert mc.lemma1_trial(2, 21, [2 * 21 + 0.5], seed=6, trials=50) == 0
