"""Prior presets, draws, densities and Gaussian moments."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oded import (ConfigError, EvaluationError, GaussianApprox, GrowthModelSpec, ParamVector,
                  PriorEntry, PriorSpec, dry_matter_2021, fruit_weight, log_prior_density,
                  preset_prior, prior_moments, sample_prior)

LOG_2PI = np.log(2 * np.pi)


def flex_gompertz(K=3):
    return GrowthModelSpec.with_knot_counts("FlexGompertz", 30.0, K=K)


def test_dry_matter_preset_values():
    prior = dry_matter_2021(flex_gompertz(), 0.01)
    want = {"log_r": (np.log(0.1), 0.1), "log_lambda": (np.log(0.3), 0.1), "beta0": (0.1, 0.1),
            "beta1": (0.1, 0.1), "log_sigma_e": (0.0, 0.05), "log_sigma_b": (np.log(0.01), 0.4)}
    got = {e.name: (e.mean, e.sd) for e in prior.entries}
    assert got.keys() == want.keys()
    for k, (m, s) in want.items():
        assert got[k] == pytest.approx((m, s), abs=1e-15)


def test_fruit_weight_preset_values():
    spec = GrowthModelSpec.with_knot_counts("FlexDoubleGompertz", 350.0, K=3, K2=3, y0=1.0, fruit_count=5)
    got = {e.name: (e.mean, e.sd) for e in fruit_weight(spec).entries}
    want = {"log_r": (np.log(0.02), 0.1), "log_lambda1": (np.log(150), 0.1),
            "log_lambda2": (np.log(200), 0.1), "log_eta": (np.log(200), 0.1),
            "beta01": (1.0, 0.1), "beta02": (1.0, 0.1), "beta11": (0.01, 0.1), "beta12": (0.01, 0.1),
            "log_sigma_e": (np.log(20), 0.1), "log_sigma_bg": (np.log(0.2), 0.1)}
    for k, v in want.items():
        assert got[k] == pytest.approx(v, abs=1e-15)


def test_prior_moments_very_low():
    spec = flex_gompertz(3)
    g = prior_moments(dry_matter_2021(spec, 0.01), spec)
    mu = [np.log(0.1), np.log(0.3), 0.1, 0.1, 0.0, np.log(0.01), 0, 0, 0]
    var = [0.01, 0.01, 0.01, 0.01, 0.0025, 0.16, 1e-4, 1e-4, 1e-4]
    np.testing.assert_allclose(g.mean, mu, atol=1e-15)
    np.testing.assert_allclose(g.cov, np.diag(var), atol=1e-15)


@pytest.mark.parametrize("K,fruit", [(0, None), (3, None), (12, None), (4, 5)])
def test_moment_dimension(K, fruit):
    kind = "FlexGompertz" if K else "Gompertz"
    spec = GrowthModelSpec.with_knot_counts(kind, 30.0, K=K, fruit_count=fruit)
    g = prior_moments(dry_matter_2021(spec), spec)
    assert g.dim == len(spec.theta_names) + K + (fruit or 0)
    L = np.linalg.cholesky(g.cov)
    sds = np.concatenate([dry_matter_2021(spec).sds, np.sqrt(np.diag(g.cov))[len(spec.theta_names):]])
    np.testing.assert_allclose(np.diag(L), sds, atol=1e-12)
    assert np.count_nonzero(g.cov - np.diag(np.diag(g.cov))) == 0


def test_standard_normal_mode_density():
    prior = PriorSpec((PriorEntry("x", "identity", 0.0, 1.0),))
    assert log_prior_density(prior, ParamVector(("x",), [0.0])) == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)
    assert log_prior_density(prior, ParamVector(("x",), [1.0])) == pytest.approx(-0.5 * LOG_2PI - 0.5, abs=1e-15)


def test_dry_matter_density_at_mean():
    spec = flex_gompertz()
    prior = dry_matter_2021(spec)
    want = sum(-0.5 * np.log(2 * np.pi * s ** 2) for s in (0.1, 0.1, 0.1, 0.1, 0.05, 0.4))
    assert log_prior_density(prior, ParamVector(spec.theta_names, prior.means)) == pytest.approx(want, abs=1e-12)


def test_density_maximised_at_mean():
    spec = flex_gompertz()
    prior = dry_matter_2021(spec)
    rng = np.random.default_rng(3)
    at_mean = log_prior_density(prior, ParamVector(spec.theta_names, prior.means))
    probes = prior.means + prior.sds * rng.standard_normal((100, prior.means.size))
    assert all(log_prior_density(prior, ParamVector(spec.theta_names, p)) < at_mean for p in probes)


def test_density_rejects_non_finite():
    spec = flex_gompertz()
    prior = dry_matter_2021(spec)
    vals = prior.means.copy()
    vals[0] = np.nan
    with pytest.raises((EvaluationError, ConfigError)):
        log_prior_density(prior, ParamVector(spec.theta_names, vals))


def test_sample_moments():
    spec = GrowthModelSpec.with_knot_counts("FlexGompertz", 30.0, K=3, fruit_count=2)
    prior = dry_matter_2021(spec, 0.3)
    rng = np.random.default_rng(11)
    N = 100_000
    draws = [sample_prior(prior, spec, rng) for _ in range(N)]
    theta = np.array([d[0].values for d in draws])
    b = np.array([d[1].flat() for d in draws])
    sds = np.concatenate([prior.sds, [0.3] * 3, [0.2] * 2])
    means = np.concatenate([prior.means, np.zeros(5)])
    x = np.hstack([theta, b])
    assert np.all(np.abs(x.mean(0) - means) < 3 * sds / np.sqrt(N))
    # the sd of a sample sd is about sd / sqrt(2N)
    assert np.all(np.abs(x.std(0, ddof=1) - sds) < 3 * sds / np.sqrt(2 * N))


def test_tiny_sd_draws_hug_mean():
    spec = GrowthModelSpec("Gompertz", 30.0)
    prior = PriorSpec(tuple(PriorEntry(n, "identity", 0.5, 1e-9) for n in spec.theta_names))
    theta, _ = sample_prior(prior, spec, np.random.default_rng(0))
    assert np.all(np.abs(theta.values - 0.5) < 1e-6)


@pytest.mark.parametrize("sd", [0.0, -1.0, np.inf])
def test_entry_needs_positive_sd(sd):
    with pytest.raises(ConfigError):
        PriorEntry("x", "identity", 0.0, sd)


def test_prior_spec_mismatch():
    prior = dry_matter_2021(GrowthModelSpec("Gompertz", 30.0))
    with pytest.raises(ConfigError):
        sample_prior(prior, flex_gompertz(), np.random.default_rng(0))


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset_prior("nope", flex_gompertz())


def test_gaussian_approx_rejects_indefinite():
    with pytest.raises(EvaluationError):
        GaussianApprox(np.zeros(2), np.diag([1.0, -1.0]))
    with pytest.raises(EvaluationError):
        GaussianApprox(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=6))
def test_with_overrides_roundtrip(sds):
    entries = tuple(PriorEntry(f"p{i}", "identity", 0.0, 1.0) for i in range(len(sds)))
    prior = PriorSpec(entries).with_overrides(**{f"p{i}": (1.0, s) for i, s in enumerate(sds)})
    np.testing.assert_array_equal(prior.sds, sds)
    np.testing.assert_array_equal(prior.means, np.ones(len(sds)))
