"""
Kernel densities, test statistics, tail fractions and LOO-PIT.
"""
import math

import numpy as np
import pytest
from scipy import stats

from data_pipeline import SynthConfig, synth_generate
from distributions import RngStream
from errors import KdeError, ValidationError
from metrics import WorkflowMetrics
from models import make_model, pointwise_log_lik, simulate_replicates
from ppc_diagnostics import (CurveRole, StatKind, density_overlay, kde, loo_pit, pit_uniformity, ppc_stat_check,
                             replicate_rows, silverman_bandwidth, uniform_reference_curves)
from ppc_diagnostics import test_stat as stat_value
from psis_loo import elpd_loo
from sampler import SamplerConfig, run_chains

# one mid-sized region sits far above the common regression line
SHIFTED_REGION = ((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (3.0, 0.0), (0.0, 0.0), (0.0, 0.0))
# well separated regions with little noise
SEPARATED_REGIONS = ((2.0, 0.0), (-2.0, 0.0), (2.0, 0.0), (-2.0, 0.0), (2.0, 0.0), (-2.0, 0.0), (0.0, 0.0))


def test_kde_matches_scipy_with_same_bandwidth():
    values = np.random.default_rng(0).gamma(2.0, size=300)
    h = silverman_bandwidth(values)
    curve = kde(values, n_grid=200)
    oracle = stats.gaussian_kde(values, bw_method=h / np.std(values, ddof=1))
    np.testing.assert_allclose(curve.density, oracle(curve.grid), rtol=1e-8, atol=1e-12)
    assert curve.bandwidth == h
    assert curve.integral() == pytest.approx(1.0, abs=0.01)


def test_kde_ignores_value_order():
    values = np.random.default_rng(6).normal(size=250)
    shuffled = np.random.default_rng(7).permutation(values)
    a, b = kde(values), kde(shuffled)
    np.testing.assert_allclose(a.grid, b.grid, rtol=1e-12)
    np.testing.assert_allclose(a.density, b.density, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_kde_integrates_to_one(seed):
    values = np.random.default_rng(seed).standard_t(4, size=200)
    assert kde(values).integral() == pytest.approx(1.0, abs=0.02)


def test_silverman_rule():
    values = np.random.default_rng(1).normal(size=500)
    sd = np.std(values, ddof=1)
    iqr = np.subtract(*np.percentile(values, [75, 25]))
    assert silverman_bandwidth(values) == pytest.approx(0.9 * min(sd, iqr / 1.34) * 500 ** -0.2)


def test_constant_input_has_no_density():
    with pytest.raises(KdeError):
        kde(np.full(20, 2.0))
    with pytest.raises(KdeError):
        kde([1.0])


def test_statistics():
    values = np.array([1.0, 2.0, 3.0, 4.0, 10.0, 0.5])
    assert stat_value(values, "skew") == pytest.approx(stats.skew(values, bias=True))
    assert stat_value([1.0, 2.0, 3.0, 4.0], StatKind.MEDIAN) == 2.0
    assert stat_value(values, "mean") == pytest.approx(values.mean())
    assert stat_value(values, "sd") == pytest.approx(values.std(ddof=0))


def test_statistic_preconditions():
    with pytest.raises(ValidationError):
        stat_value([1.0, 2.0], "skew")
    with pytest.raises(ValidationError):
        stat_value([3.0, 3.0, 3.0], "skew")
    with pytest.raises(ValueError):
        stat_value([1.0, 2.0, 3.0], "kurtosis")


def test_tail_fractions():
    y = np.array([0.0, 1.0, 2.0, 3.0])
    yrep = np.array([[0.0, 1.0, 2.0, 3.0], [1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 1.0, 2.0], [5.0, 5.0, 5.0, 5.0]])
    (check,) = ppc_stat_check(y, yrep, "mean")
    assert check.observed == 1.5
    assert check.p_upper == 0.75
    assert check.p_lower == 0.5
    assert check.p_upper + check.p_lower >= 1.0
    assert check.min_tail == 0.5


def test_grouped_checks_skip_small_groups():
    rng = np.random.default_rng(2)
    y = rng.normal(size=12)
    yrep = rng.normal(size=(50, 12))
    groups = np.array([0] * 10 + [1] * 2)
    checks = ppc_stat_check(y, yrep, "skew", groups, ["big", "small"])
    assert [c.group for c in checks] == ["big"]
    medians = ppc_stat_check(y, yrep, "median", groups, ["big", "small"])
    assert [c.group for c in medians] == ["big", "small"]
    assert medians[1].observed == min(y[10:])


def test_replicate_shape_must_match():
    with pytest.raises(ValidationError):
        ppc_stat_check(np.zeros(3), np.zeros((4, 5)), "mean")


def test_loo_pit_with_equal_weights():
    y = np.array([0.5, 2.5])
    yrep = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0], [3.0, 4.0]])
    pits = loo_pit(y, yrep, np.zeros_like(yrep))
    np.testing.assert_allclose(pits, [0.25, 0.5])


def test_loo_pit_respects_weights():
    y = np.array([0.5])
    yrep = np.array([[0.0], [1.0]])
    pits = loo_pit(y, yrep, np.log(np.array([[3.0], [1.0]])))
    assert pits[0] == pytest.approx(0.75)


def test_uniformity_check():
    rng = np.random.default_rng(3)
    good = pit_uniformity(rng.uniform(size=400))
    assert good.passed
    assert good.critical_value == pytest.approx(1.63 / 20.0)
    bad = pit_uniformity(np.clip(rng.normal(0.5, 0.05, size=400), 0, 1))
    assert not bad.passed


def test_reference_curves():
    curves = uniform_reference_curves(50, RngStream(4), n_sims=7, n_grid=64)
    assert len(curves) == 7
    assert all(c.label == CurveRole.UNIFORM_REFERENCE for c in curves)
    assert all(c.grid[0] == 0.0 and c.grid[-1] == 1.0 for c in curves)
    again = uniform_reference_curves(50, RngStream(4), n_sims=7, n_grid=64)
    np.testing.assert_array_equal(curves[3].density, again[3].density)


def test_density_overlay_layout():
    rng = np.random.default_rng(5)
    y = rng.normal(size=40)
    yrep = rng.normal(size=(400, 40))
    curves = density_overlay(y, yrep, n_curves=100, n_grid=128)
    assert len(curves) == 101
    assert curves[0].label == CurveRole.OBSERVED
    assert all(c.label == CurveRole.REPLICATE for c in curves[1:])
    assert all(np.array_equal(c.grid, curves[0].grid) for c in curves)


def test_replicate_rows():
    assert list(replicate_rows(5, 100)) == [0, 1, 2, 3, 4]
    rows = replicate_rows(1000, 100)
    assert rows.size == 100 and rows[0] == 0 and rows[-1] == 999


def fit_pair(cfg: SynthConfig, seed: int):
    data, _ = synth_generate(cfg)
    config = SamplerConfig(n_chains=2, n_warmup=400, n_keep=400, seed=seed)
    fits = {}
    for kind in ("pooled", "hier-who"):
        model = make_model(kind, "weak")
        fits[kind] = (model, run_chains(model, data, config, WorkflowMetrics()))
    return data, fits


@pytest.mark.slow
def test_skew_check_separates_pooled_and_hierarchical():
    data, fits = fit_pair(SynthConfig(offsets=SHIFTED_REGION, seed=12), 12)
    tails = {}
    for kind, (model, draws) in fits.items():
        yrep = simulate_replicates(model, data, draws, RngStream(12, 2))
        (check,) = ppc_stat_check(data.y, yrep, "skew")
        tails[kind] = check.min_tail
    assert tails["pooled"] <= 0.01
    assert 0.05 <= tails["hier-who"]


@pytest.mark.slow
def test_loo_pit_calibration_over_seeds():
    passed = {"pooled": 0, "hier-who": 0}
    for seed in range(20):
        cfg = SynthConfig(offsets=SEPARATED_REGIONS, sigma=0.3, discretize_low=False, seed=seed)
        data, fits = fit_pair(cfg, seed)
        for kind, (model, draws) in fits.items():
            loo = elpd_loo(pointwise_log_lik(model, data, draws))
            yrep = simulate_replicates(model, data, draws, RngStream(seed, 2))
            passed[kind] += pit_uniformity(loo_pit(data.y, yrep, loo.smoothed_log_weights)).passed
    assert passed["hier-who"] >= 18
    assert passed["pooled"] <= 2


def test_integral_of_tiny_curve_is_finite():
    curve = kde([0.0, 1.0, 2.0], n_grid=50)
    assert math.isfinite(curve.integral())


@pytest.mark.slow
def test_grouped_median_check_flags_only_the_pooled_fit():
    cfg = SynthConfig(points_per_group=(60, 60, 60, 60, 60, 60, 20), offsets=SEPARATED_REGIONS, sigma=0.3,
                      discretize_low=False, seed=21)
    data, fits = fit_pair(cfg, 21)
    failing = {}
    for kind, (model, draws) in fits.items():
        yrep = simulate_replicates(model, data, draws, RngStream(21, 2))
        checks = ppc_stat_check(data.y, yrep, "median", data.group, data.group_names)
        assert len(checks) == 7
        failing[kind] = sum(check.min_tail < 0.05 for check in checks)
    assert failing["hier-who"] <= 1
    assert failing["pooled"] >= 3
