import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ybtweezer import loading as ld

SAT = 1e4  # long enough that every multiply-occupied site has resolved


def poisson_params(lam, **kw):
    base = dict(mean_initial_occupancy=lam, initial_distribution="poisson", enhancement_duration=SAT, trials=100_000)
    base.update(kw)
    return ld.LoadingParams(**base)


def within_3sigma(est, p):
    sigma = math.sqrt(p * (1 - p) / est.trials)
    return abs(est.p_single - p) <= 3 * sigma


def test_params_validation():
    with pytest.raises(ValueError):
        ld.LoadingParams(mean_initial_occupancy=-1)
    with pytest.raises(ValueError):
        ld.LoadingParams(red_pa_prob=1.5)
    with pytest.raises(ValueError):
        ld.LoadingParams(initial_distribution="binomial")
    with pytest.raises(ValueError):
        ld.loading_efficiency(ld.LoadingParams(trials=10), 0.5)


@given(st.integers(0, 500), st.integers(1, 500))
def test_wilson_interval_contains_estimate(k, extra):
    n = k + extra
    lo, hi = ld.wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_blue_loss_count_rule():
    assert [ld.blue_loss_count(x) for x in (0.5, 1.0, 1.5, 1.99, 2.0, 3.0)] == [0, 1, 1, 1, 2, 2]


# ---- initial occupancy ----------------------------------------------------


def test_initial_zero_mean():
    rng = np.random.default_rng(1)
    assert np.all(ld.sample_initial_occupancy(0.0, rng, 1000) == 0)


def test_initial_poisson_statistics():
    rng = np.random.default_rng(2)
    n = ld.sample_initial_occupancy(2.0, rng, 1_000_000)
    assert abs(n.mean() - 2.0) <= 3 * math.sqrt(2.0 / n.size)
    p0 = math.exp(-2.0)
    assert abs(np.mean(n == 0) - p0) <= 3 * math.sqrt(p0 * (1 - p0) / n.size)


def test_initial_truncated_support():
    rng = np.random.default_rng(3)
    n = ld.sample_initial_occupancy(3.5, rng, 10_000, max_initial=3)
    assert n.max() <= 3
    p = ld.initial_distribution(ld.LoadingParams(3.5))
    assert p.sum() == pytest.approx(1.0)
    assert len(p) == 4


# ---- red-detuned pair loss -------------------------------------------------


def test_red_pa_keeps_zero_and_one():
    rng = np.random.default_rng(0)
    assert ld.simulate_red_pa(0, SAT, 10.0, rng) == 0
    assert ld.simulate_red_pa(1, SAT, 10.0, rng) == 1
    assert np.array_equal(ld.simulate_red_pa([0, 1, 1, 0], SAT, 10.0, rng), [0, 1, 1, 0])


@pytest.mark.parametrize("lam", [0.7, 2.0])
def test_red_pa_parity_oracle(lam):
    rng = np.random.default_rng(4)
    n = ld.simulate_red_pa(rng.poisson(lam, 100_000), SAT, 10.0, rng)
    p = (1 - math.exp(-2 * lam)) / 2
    assert abs(np.mean(n == 1) - p) <= 3 * math.sqrt(p * (1 - p) / n.size)


# ---- enhancement stage ----------------------------------------------------


def test_enhanced_funnels_to_one():
    lam = 2.0
    est = ld.loading_efficiency(poisson_params(lam, red_pa_prob=0.0), 1.0)
    assert within_3sigma(est, 1 - math.exp(-lam))


def test_enhanced_red_only_reduces_to_parity():
    lam = 2.0
    est = ld.loading_efficiency(poisson_params(lam, red_pa_prob=0.3, parity_readout=False), 0.0)
    assert within_3sigma(est, (1 - math.exp(-2 * lam)) / 2)


def test_enhanced_far_blue_is_pair_loss():
    lam = 2.0
    est = ld.loading_efficiency(poisson_params(lam, red_pa_prob=0.0, detuning_energy_over_trap=2.5, parity_readout=False), 1.0)
    assert within_3sigma(est, (1 - math.exp(-2 * lam)) / 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 12), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31), st.floats(0.0, 3.0))
def test_occupancy_never_increases(n0, pic, p20, seed, ratio):
    p = ld.LoadingParams(red_pa_prob=p20, detuning_energy_over_trap=ratio, single_atom_loss_rate=0.5)
    tr = ld.simulate_enhanced(n0, pic, p, np.random.default_rng(seed))
    assert tr.counts[0] == n0
    assert all(b <= a for a, b in zip(tr.counts, tr.counts[1:]))
    assert all(c >= 0 for c in tr.counts)
    assert all(t <= p.enhancement_duration for t in tr.times)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 15), st.floats(1.0, 1.999), st.integers(0, 2**31))
def test_absorbing_single_atom(n0, ratio, seed):
    p = ld.LoadingParams(red_pa_prob=0.0, detuning_energy_over_trap=ratio, enhancement_duration=1e6)
    assert ld.simulate_enhanced(n0, 1.0, p, np.random.default_rng(seed)).final == 1


def test_trace_determinism():
    p = ld.LoadingParams()
    a = ld.simulate_enhanced(9, 0.5, p, np.random.default_rng(11))
    b = ld.simulate_enhanced(9, 0.5, p, np.random.default_rng(11))
    assert a.times == b.times and a.counts == b.counts


def test_efficiency_determinism_and_seed_reproducibility():
    p = ld.LoadingParams(trials=30_000)
    a = ld.loading_efficiency(p, 0.4)
    assert a == ld.loading_efficiency(p, 0.4)
    np.testing.assert_array_equal(ld.final_occupancy(p, 0.4), ld.final_occupancy(p, 0.4))
    b = ld.loading_efficiency(replace(p, rng_seed=99), 0.4)
    assert max(a.low, b.low) <= min(a.high, b.high)


def test_zero_pic_matches_red_baseline():
    p = ld.LoadingParams()
    est = ld.loading_efficiency(p, 0.0)
    base = ld.red_only_baseline(p)
    assert est.low <= base <= est.high


def test_zero_duration_gives_initial_statistics():
    p = ld.LoadingParams(enhancement_duration=0.0)
    np.testing.assert_allclose(ld.exact_final_distribution(p, 0.7), ld.initial_distribution(p))
    est = ld.loading_efficiency(replace(p, parity_readout=False), 0.7)
    p1 = ld.initial_distribution(p)[1]
    assert abs(est.p_single - p1) <= 3 * math.sqrt(p1 * (1 - p1) / est.trials)


@pytest.mark.parametrize("pic", [0.0, 0.2, 0.52, 1.0])
def test_exact_matches_monte_carlo(pic):
    p = ld.LoadingParams()
    est = ld.loading_efficiency(p, pic)
    assert within_3sigma(est, ld.exact_efficiency(p, pic))


def test_generator_rows_sum_to_zero():
    q = ld.generator_matrix(ld.LoadingParams(single_atom_loss_rate=0.3), 0.6, 8)
    np.testing.assert_allclose(q.sum(axis=1), 0.0, atol=1e-12)
    assert np.all(q[:2] == 0)


# ---- calibration ----------------------------------------------------------


def test_calibrated_defaults():
    p = ld.LoadingParams()
    assert ld.red_only_baseline(p) == pytest.approx(0.60, abs=1e-6)
    assert ld.solve_initial_occupancy(0.6) == pytest.approx(p.mean_initial_occupancy, rel=1e-4)


def test_calibrate_recovers_constants():
    target = ld.LoadingParams()
    start = replace(target, pair_event_rate=5.0, red_pa_prob=0.2)
    hi = ld.exact_efficiency(target, 0.52)
    lo = ld.exact_efficiency(target, 0.34)
    fit = ld.calibrate(0.52, hi, 0.34, lo, start)
    assert fit.pair_event_rate == pytest.approx(target.pair_event_rate, rel=1e-6)
    assert fit.red_pa_prob == pytest.approx(target.red_pa_prob, rel=1e-6)


# ---- efficiency maps ------------------------------------------------------


def test_sweep_loading_properties():
    pic = np.array([[0.0, 0.0], [0.06, 0.08], [0.2, 0.1], [0.52, 0.5]])
    eff = ld.sweep_loading(pic, ld.LoadingParams(), [1.5, 1.8])
    assert np.all((eff >= 0) & (eff <= 1))
    assert np.all(np.diff(eff[1:], axis=0) > 0)
    assert eff.max() >= eff[0].max() + 0.15


def test_sweep_loading_nan_and_methods():
    pic = np.array([[np.nan], [0.3]])
    eff = ld.sweep_loading(pic, ld.LoadingParams())
    assert math.isnan(eff[0, 0])
    with pytest.raises(ValueError):
        ld.sweep_loading(pic, ld.LoadingParams(), method="guess")


def test_sweep_loading_seed_reproducibility():
    pic = np.array([[0.1, 0.3], [0.45, 0.52]])
    p = ld.LoadingParams(trials=20_000)
    a, alo, ahi = ld.sweep_loading(pic, p, method="monte_carlo")
    b, blo, bhi = ld.sweep_loading(pic, replace(p, rng_seed=5), method="monte_carlo")
    assert np.all(np.maximum(alo, blo) <= np.minimum(ahi, bhi))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.056, 1), st.floats(0.056, 1))
def test_exact_monotone_in_pic(a, b):
    # increasing beyond the weak-blue minimum at P_ic ~ 0.0559
    lo_, hi_ = sorted((a, b))
    p = ld.LoadingParams()
    assert ld.exact_efficiency(p, hi_) >= ld.exact_efficiency(p, lo_) - 1e-12


def test_weak_blue_dip():
    # a rare blue event can turn an odd pair-loss cascade (3 -> 1) into an
    # even one (3 -> 2 -> 0), so tiny P_ic sits slightly below the baseline
    p = ld.LoadingParams()
    e = [ld.exact_efficiency(p, x) for x in (0.0, 0.05, 0.0559, 0.15)]
    assert e[2] < e[1] < e[0] < e[3]


# ---- MOT overlap ----------------------------------------------------------


def test_mot_degenerate_rotation():
    sites = ld.grid_sites(5, 7)
    np.testing.assert_array_equal(
        ld.mot_overlap_profile(sites, "rotating", 10.0, 0.0, 3.0), ld.mot_overlap_profile(sites, "fixed", 10.0, 0.0, 3.0)
    )


def test_mot_rotation_flattens():
    sites = ld.grid_sites(49, 61)
    fixed = ld.mot_overlap_profile(sites, "fixed", 40.0, peak=3.5)
    rot = ld.mot_overlap_profile(sites, "rotating", 40.0, 30.0, peak=3.5)
    assert ld.coefficient_of_variation(rot) < ld.coefficient_of_variation(fixed)
    c_fixed = ld.mot_overlap_profile([[0, 0]], "fixed", 40.0, peak=3.5)[0]
    c_rot = ld.mot_overlap_profile([[0, 0]], "rotating", 40.0, 30.0, peak=3.5)[0]
    assert c_fixed == 3.5
    assert c_rot < c_fixed


def test_mot_validation():
    with pytest.raises(ValueError):
        ld.mot_overlap_profile([[0, 0]], "fixed", 0.0)
    with pytest.raises(ValueError):
        ld.mot_overlap_profile([[0, 0]], "spinning", 1.0)


def test_grid_sites_centred():
    s = ld.grid_sites(3, 4, 2.0)
    assert s.shape == (12, 2)
    np.testing.assert_allclose(s.mean(axis=0), 0.0)
