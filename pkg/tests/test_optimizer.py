"""Coordinate exchange, the emulator-based variant and the multi-start protocol."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oded import (ConfigError, GrowthModelSpec, SearchSettings, TimeDesign, ace_optimize,
                  coordinate_exchange, dry_matter_2021, emulator_argmax, gp_fit_1d, multi_start)
from oded.optimizer import SCAN_POINTS, derive_seed

T = 30.0


def quadratic(target=7.0):
    return lambda times, seed: (-float(np.sum((np.asarray(times) - target) ** 2)), 0.0)


def noisy(f, se=0.1):
    """``f`` plus noise that is a fixed function of (seed, times)."""
    def objective(times, seed):
        key = np.round(np.sort(times) * 1e6).astype(np.int64) % (2 ** 31)
        z = np.random.default_rng([seed % (2 ** 63), *key.tolist()]).standard_normal()
        return f(times) + se * z, se
    return objective


def design(times):
    return TimeDesign(times, t_max=T)


# -- coordinate exchange ----------------------------------------------------

def test_ce_separable_quadratic():
    s = SearchSettings(algorithm="ce", grid_step=1.0, passes=1)
    d, trace = coordinate_exchange(design([0.0, 15.0, 30.0]), quadratic(), s)
    assert d.times.tolist() == [7.0, 7.0, 7.0]


def test_ce_optimal_start_unchanged():
    s = SearchSettings(algorithm="ce", grid_step=1.0)
    d, trace = coordinate_exchange(design([7.0, 7.0]), quadratic(), s)
    assert d.times.tolist() == [7.0, 7.0]
    assert not [r for r in trace.records if r.kind == "candidate" and r.accepted]


@given(st.lists(st.floats(0, 30), min_size=1, max_size=4), st.floats(0, 30), st.integers(0, 1000))
def test_ce_monotone_and_bounded(start, target, seed):
    s = SearchSettings(algorithm="ce", grid_step=2.5, passes=2, seed=seed)
    f = noisy(lambda t: -float(np.sum((np.asarray(t) - target) ** 2)))
    d0 = design(np.round(np.asarray(start) / 2.5) * 2.5)
    d, trace = coordinate_exchange(d0, f, s)
    acc = [r.estimate for r in trace.accepted()]
    assert all(b >= a for a, b in zip(acc, acc[1:]))
    assert f(d.times, seed)[0] >= f(d0.times, seed)[0]
    assert np.all((d.times >= 0) & (d.times <= T))


def test_ce_skips_failed_candidates():
    from oded import EstimationError

    def f(times, seed):
        if np.any(np.asarray(times) == 3.0):
            raise EstimationError("boom")
        return quadratic()(times, seed)
    s = SearchSettings(algorithm="ce", grid_step=1.0, passes=1)
    d, trace = coordinate_exchange(design([0.0]), f, s)
    assert d.times.tolist() == [7.0]
    assert any(r.kind == "failed" and r.time == 3.0 for r in trace.records)


# -- emulator ---------------------------------------------------------------

def test_gp_interpolates_linear():
    xs = np.linspace(0, 30, 8)
    ys = 2.0 * xs - 3.0
    e = gp_fit_1d(xs, ys)
    np.testing.assert_allclose(e.predict(xs), ys, atol=1e-3)


def test_gp_constant_argmax_lower_bound():
    e = gp_fit_1d(np.linspace(0, 30, 6), np.full(6, 2.5))
    np.testing.assert_array_equal(e.predict(np.linspace(0, 30, 11)), 2.5)
    assert emulator_argmax(e, (0.0, 30.0)) == 0.0


def test_gp_symmetric_peak():
    xs = np.linspace(0, 30, 13)
    e = gp_fit_1d(xs, -((xs - 15.0) / 5) ** 2)
    assert abs(emulator_argmax(e, (0.0, 30.0)) - 15.0) <= 30.0 / (SCAN_POINTS - 1)


def test_gp_input_checks():
    with pytest.raises(ConfigError):
        gp_fit_1d([0, 1, 2, 3], [0, 1, 2, 3])
    with pytest.warns(RuntimeWarning, match="duplicate"):
        e = gp_fit_1d([0.0, 1.0, 1.0, 2.0, 3.0], [0.0, 1.0, 1.0, 2.0, 3.0])
    assert np.all(np.isfinite(e.predict([0.5, 1.5])))


def test_gp_nugget_from_standard_errors():
    xs = np.linspace(0, 30, 10)
    ys = np.sin(xs / 5)
    e = gp_fit_1d(xs, ys, std_errors=np.full(10, 0.3))
    assert e.nugget == pytest.approx(0.09 / np.var(ys, ddof=1))
    assert gp_fit_1d(xs, ys).nugget == 1e-6
    with pytest.raises(ConfigError, match="standard errors"):
        gp_fit_1d(xs, ys, std_errors=np.r_[np.full(9, 0.3), np.inf])


# -- approximate coordinate exchange ----------------------------------------

def test_ace_concave_quadratic():
    s = SearchSettings(Q=21, passes=2)
    d, _ = ace_optimize(design([25.0, 3.0]), quadratic(), s)
    assert np.all(np.abs(d.times - 7.0) <= 0.5)


def test_ace_ignores_points_with_infinite_standard_error():
    base = quadratic()

    def f(times, seed):
        value, _ = base(times, seed)
        return value, (np.inf if seed % 3 == 0 else 0.0)

    s = SearchSettings(Q=21, passes=2)
    d, trace = ace_optimize(design([25.0, 3.0]), f, s)
    assert np.all(np.abs(d.times - 7.0) <= 0.5)
    assert any(r.kind == "failed" for r in trace.records)


def test_ace_constant_keeps_incumbent():
    s = SearchSettings(Q=6, passes=1)
    d, trace = ace_optimize(design([4.0, 22.0]), lambda t, seed: (1.0, 0.0), s)
    assert d.times.tolist() == [4.0, 22.0]
    assert not any(r.accepted for r in trace.records)


def test_ace_pure_noise_null():
    hits = 0
    for k in range(20):
        s = SearchSettings(Q=6, passes=1, seed=k)
        f = noisy(lambda t: 0.0, se=0.2)
        d0 = design(np.random.default_rng(k).uniform(0, 30, 3))
        d, _ = ace_optimize(d0, f, s)
        final = derive_seed(1000, k)
        a, b = f(d0.times, final), f(d.times, final)
        hits += abs(b[0] - a[0]) <= 2 * np.hypot(a[1], b[1])
    assert hits >= 18


def test_ace_reproducible_and_bounded():
    s = SearchSettings(Q=7, passes=2, seed=4)
    f = noisy(lambda t: -float(np.sum((np.asarray(t) - 20) ** 2)))
    d1, t1 = ace_optimize(design([1.0, 2.0, 3.0]), f, s)
    d2, t2 = ace_optimize(design([1.0, 2.0, 3.0]), f, s)
    assert t1.to_csv() == t2.to_csv()
    assert np.array_equal(d1.times, d2.times)
    assert np.all((d1.times >= 0) & (d1.times <= T))
    steps = [r.step for r in t1.records]
    assert steps == sorted(steps)


# -- multi-start ------------------------------------------------------------

def fake_objective(target=7.0):
    return lambda times, seed, L: (-float(np.sum((np.asarray(times) - target) ** 2)) + 1e-3 * (seed % 7), 0.0)


def test_multi_start_single_equals_one_run():
    spec = GrowthModelSpec("Gompertz", T)
    s = SearchSettings(algorithm="ce", grid_step=1.0, passes=2, starts=1, seed=3)
    res = multi_start(spec, None, 2, s, objective=fake_objective())
    from oded.optimizer import _TAG_RUN, random_design
    from dataclasses import replace
    d0 = random_design(TimeDesign(np.zeros(0), t_max=T), 2, s, (0.0, T), 0)
    d, _ = coordinate_exchange(d0, lambda t, seed: fake_objective()(t, seed, 0),
                               replace(s, seed=derive_seed(3, _TAG_RUN, 0)))
    assert np.array_equal(res.design.times, d.times)


def test_multi_start_returns_argmax():
    spec = GrowthModelSpec("Gompertz", T)
    s = SearchSettings(Q=5, passes=1, starts=4, seed=1)
    res = multi_start(spec, None, 3, s, objective=fake_objective(12.0))
    assert len(res.starts) == 4
    assert all(res.estimate >= r.estimate for r in res.starts)
    assert res.trace_csv().splitlines()[0].startswith("start,step,pass,coordinate")


def test_multi_start_all_fail():
    from oded import EstimationError

    def bad(times, seed, L):
        raise EstimationError("always")
    with pytest.raises(EstimationError):
        multi_start(GrowthModelSpec("Gompertz", T), None, 2, SearchSettings(Q=5, passes=1, starts=2),
                    objective=bad)


@pytest.mark.xfail(strict=True, reason="with the raw-time spline basis the very-low optimum sits at "
                                       "24-30 weeks, where the t^4 term makes the random effects most visible")
def test_multi_start_dry_matter_mid_horizon():
    spec = GrowthModelSpec.with_knot_counts("FlexGompertz", T, K=3)
    prior = dry_matter_2021(spec, 0.01)
    s = SearchSettings(Q=10, passes=1, acceptance_reps=1, starts=1, L_search=64, L_final=128, seed=2)
    res = multi_start(spec, prior, 4, s)
    assert np.sum((res.design.times >= 5) & (res.design.times <= 25)) >= 3


def test_dry_matter_late_designs_beat_mid_horizon():
    # the landscape behind the xfail above, at common seeds
    spec = GrowthModelSpec.with_knot_counts("FlexGompertz", T, K=3)
    prior = dry_matter_2021(spec, 0.01)
    from oded import expected_utility
    late = expected_utility(design([25.0, 27.0, 29.0, 30.0]), spec, prior, L=200, seed=1)
    mid = expected_utility(design([10.0, 15.0, 20.0, 25.0]), spec, prior, L=200, seed=1)
    assert late.estimate - mid.estimate > 2 * np.hypot(late.std_error, mid.std_error)


# -- settings and seeds -----------------------------------------------------

@pytest.mark.parametrize("kw", [dict(grid_step=0), dict(Q=4), dict(starts=0), dict(L_search=100, L_final=50),
                                dict(algorithm="sa")])
def test_settings_validation(kw):
    with pytest.raises(ConfigError):
        SearchSettings(**kw)


@given(st.integers(0, 2 ** 32), st.lists(st.integers(0, 1000), max_size=4))
def test_derive_seed_deterministic(root, key):
    assert derive_seed(root, *key) == derive_seed(root, *key)
    assert derive_seed(root, *key, 0) != derive_seed(root, *key, 1)
