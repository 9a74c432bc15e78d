"""Gaussian KL divergence and the Monte Carlo expected-utility estimator."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oded import (ConfigError, EstimationError, GaussianApprox, GrowthModelSpec, PriorEntry,
                  PriorSpec, TimeDesign, dry_matter_2021, expected_utility, kld_mvn)
from oded.toy import LinearGaussianModel, polynomial_basis
from oracles import kl_quadrature


def g1(m, v):
    return GaussianApprox(np.array([m]), np.array([[v]]))


def test_kld_identical_is_zero():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 4))
    g = GaussianApprox(rng.standard_normal(4), a @ a.T + np.eye(4))
    assert abs(kld_mvn(g, g)) <= 1e-12


def test_kld_unit_shift():
    assert kld_mvn(g1(0, 1), g1(1, 1)) == pytest.approx(0.5, abs=1e-15)


def test_kld_shrunk_variance():
    assert kld_mvn(g1(0, 1), g1(0, np.exp(-1))) == pytest.approx(1 / (2 * np.e), abs=1e-15)
    assert 1 / (2 * np.e) == pytest.approx(0.183940, abs=1e-6)


def test_kld_direction_is_posterior_to_prior():
    prior, post = g1(0.0, 4.0), g1(0.5, 0.25)
    assert kld_mvn(prior, post) == pytest.approx(kl_quadrature(0.5, 0.5, 0.0, 2.0), abs=1e-9)
    assert kld_mvn(prior, post) != pytest.approx(kl_quadrature(0.0, 2.0, 0.5, 0.5), abs=1e-3)


def test_kld_dimension_mismatch():
    with pytest.raises(ConfigError):
        kld_mvn(g1(0, 1), GaussianApprox(np.zeros(2), np.eye(2)))


@given(st.floats(-3, 3), st.floats(0.2, 3), st.floats(-3, 3), st.floats(0.2, 3))
def test_kld_matches_quadrature(m1, s1, m0, s0):
    assert kld_mvn(g1(m0, s0 ** 2), g1(m1, s1 ** 2)) == pytest.approx(kl_quadrature(m1, s1, m0, s0), abs=1e-6)


@given(st.integers(1, 5), st.integers(0, 10_000))
def test_kld_non_negative(d, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, d, d))
    p = GaussianApprox(rng.standard_normal(d), a @ a.T + 0.1 * np.eye(d))
    q = GaussianApprox(rng.standard_normal(d), b @ b.T + 0.1 * np.eye(d))
    assert kld_mvn(p, q) >= -1e-12


# -- expected utility -------------------------------------------------------

def normal_mean_toy(prior_sd=1.0, sigma_e=1.0):
    toy = LinearGaussianModel(polynomial_basis(0), 1, sigma_e_=sigma_e)
    return toy, PriorSpec((PriorEntry("theta0", "identity", 0.0, prior_sd),))


def very_low():
    spec = GrowthModelSpec.with_knot_counts("FlexGompertz", 30.0, K=3)
    return spec, dry_matter_2021(spec, 0.01)


def test_toy_closed_form():
    toy, prior = normal_mean_toy(prior_sd=2.0, sigma_e=0.7)
    n = 5
    u = expected_utility(TimeDesign(np.zeros(n)), toy, prior, L=500, seed=3)
    assert abs(u.estimate - toy.expected_information_gain(n, 2.0)) < 3 * u.std_error
    assert u.failures == 0 and u.L == 500


def test_per_sample_non_negative():
    spec, prior = very_low()
    u = expected_utility(TimeDesign([4.0, 11.0, 19.0, 26.0], t_max=30), spec, prior, L=48, seed=1,
                         keep_samples=True)
    good = u.per_sample[np.isfinite(u.per_sample)]
    assert good.size == 48 - u.failures
    assert np.all(good >= -1e-9)
    assert u.std_error >= 0


def linearised_gain(spec, prior, times):
    """Expected KL gain of the model linearised at the prior mean (conjugate formula)."""
    from oded.growth_models import GrowthModel
    m = GrowthModel(spec)
    rows = m.rows(np.asarray(times, float))
    d = len(prior.entries)
    x0 = np.concatenate([prior.means, np.zeros(spec.effect_dim)])
    s0 = np.concatenate([prior.sds, prior.effect_scales(spec.effect_groups)])
    J = np.empty((rows.n, x0.size))
    for j in range(x0.size):
        e = np.zeros(x0.size)
        e[j] = 1e-7
        J[:, j] = (m.mean((x0 + e)[:d], (x0 + e)[d:], rows) - m.mean((x0 - e)[:d], (x0 - e)[d:], rows)) / 2e-7
    sigma_e = float(np.exp(prior.means[spec.theta_names.index("log_sigma_e")]))
    info = s0[:, None] * (J.T @ J) * s0[None, :] / sigma_e ** 2
    # Fisher information of log sigma_e is 2 per observation
    k = spec.theta_names.index("log_sigma_e")
    info[k, k] += 2 * rows.n * s0[k] ** 2
    return 0.5 * np.linalg.slogdet(np.eye(x0.size) + info)[1]


def test_near_degenerate_prior():
    spec = GrowthModelSpec.with_knot_counts("FlexGompertz", 30.0, K=3)
    base = dry_matter_2021(spec, 1e-6)
    prior = PriorSpec(tuple(PriorEntry(e.name, e.transform, e.mean, 1e-6) for e in base.entries),
                      base.effect_sd)
    times = [4.0, 11.0, 19.0, 26.0]
    u = expected_utility(TimeDesign(times, t_max=30), spec, prior, L=32, seed=2)
    assert u.estimate <= 0.05
    # a point-mass prior makes the model effectively linear over its support
    oracle = linearised_gain(spec, prior, times)
    assert abs(u.estimate - oracle) < 0.5 * oracle


def test_deterministic_across_workers():
    spec, prior = very_low()
    d = TimeDesign([3.0, 9.0, 21.0, 27.0], t_max=30)
    a = expected_utility(d, spec, prior, L=40, seed=5, workers=1, keep_samples=True)
    b = expected_utility(d, spec, prior, L=40, seed=5, workers=3, keep_samples=True)
    assert a.estimate == b.estimate and a.std_error == b.std_error
    np.testing.assert_array_equal(a.per_sample, b.per_sample)


def test_samples_are_prefix_stable():
    # sample l depends only on (seed, l), so a longer run extends a shorter one
    toy, prior = normal_mean_toy()
    d = TimeDesign(np.zeros(3))
    a = expected_utility(d, toy, prior, L=20, seed=1, keep_samples=True)
    b = expected_utility(d, toy, prior, L=37, seed=1, keep_samples=True)
    np.testing.assert_array_equal(a.per_sample, b.per_sample[:20])


def test_nested_designs_gain_information():
    spec, prior = very_low()
    rng = np.random.default_rng(12)
    for k in range(5):
        small = np.sort(rng.uniform(0, 30, 3))
        big = np.concatenate([small, rng.uniform(0, 30, 2)])
        u = expected_utility(TimeDesign(small, t_max=30), spec, prior, L=160, seed=k)
        v = expected_utility(TimeDesign(big, t_max=30), spec, prior, L=160, seed=k)
        assert v.estimate >= u.estimate - 2 * np.hypot(u.std_error, v.std_error)


def test_L_must_be_at_least_two():
    toy, prior = normal_mean_toy()
    with pytest.raises(ConfigError):
        expected_utility(TimeDesign([0.0]), toy, prior, L=1)


class BrokenToy(LinearGaussianModel):
    def mean(self, theta, b, rows):
        return np.full(np.shape(theta)[:-1] + (rows.n,), np.nan)


def test_all_failures_raise():
    toy = BrokenToy(polynomial_basis(0), 1)
    prior = PriorSpec((PriorEntry("theta0", "identity", 0.0, 1.0),))
    with pytest.raises(EstimationError):
        expected_utility(TimeDesign([0.0, 1.0]), toy, prior, L=4)
