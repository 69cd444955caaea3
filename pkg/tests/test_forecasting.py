"""Forecast checks: ensembles, bands, error metrics, panel evaluation."""

import numpy as np
import pytest

from conftest import build_model, rng
from profnet.basis import Curve, Grid
from profnet.errors import ConfigError, ContractError
from profnet.forecasting import (
    ForecastEnsemble,
    IntervalBand,
    association_graph,
    coverage_probability,
    evaluate_delta,
    forecast_ensemble,
    mean_forecast,
    msfe,
    point_forecast,
    quantile_band,
)
from profnet.synthgen import rollout_panel
from profnet.rng import rng_for


def _ens(samples, grid=None, **kw):
    samples = np.asarray(samples, dtype=np.float64)
    if grid is None:
        grid = Grid.regular(0.0, 1.0, samples.shape[1])
    fields = dict(source_region=0, target_region=1, source_time=0.0,
                  target_time=1.0)
    fields.update(kw)
    return ForecastEnsemble(grid=grid, samples=samples, **fields)


# -- quantile bands ---------------------------------------------------------

def test_band_quantiles_on_permuted_integer_samples():
    gen = rng(0)
    cols = [gen.permutation(101).astype(float) for _ in range(7)]
    ens = _ens(np.stack(cols, axis=1))
    band = quantile_band(ens, alpha=0.1)
    assert np.allclose(band.lower, 5.0, rtol=0, atol=1e-12)
    assert np.allclose(band.upper, 95.0, rtol=0, atol=1e-12)
    assert np.allclose(band.mean, 50.0, rtol=0, atol=1e-12)


def test_band_over_constant_samples_collapses_onto_it():
    ens = _ens(np.full((40, 5), 2.5))
    band = quantile_band(ens, alpha=0.05)
    assert np.array_equal(band.lower, np.full(5, 2.5))
    assert np.array_equal(band.upper, np.full(5, 2.5))


def test_wider_miss_level_gives_a_nested_band():
    ens = _ens(rng(1).standard_normal((500, 9)))
    outer = quantile_band(ens, alpha=0.05)
    inner = quantile_band(ens, alpha=0.2)
    assert np.all(inner.lower >= outer.lower)
    assert np.all(inner.upper <= outer.upper)
    assert np.all(outer.upper >= outer.lower)


def test_band_is_invariant_to_sample_order():
    samples = rng(2).standard_normal((200, 6))
    a = quantile_band(_ens(samples), alpha=0.1)
    b = quantile_band(_ens(samples[rng(3).permutation(200)]), alpha=0.1)
    assert np.array_equal(a.lower, b.lower)
    assert np.array_equal(a.upper, b.upper)
    assert np.allclose(a.mean, b.mean, rtol=0, atol=1e-12)


def test_band_rejects_bad_miss_levels_and_tiny_ensembles():
    ens = _ens(np.zeros((10, 4)))
    for alpha in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ContractError):
            quantile_band(ens, alpha)
    with pytest.raises(ContractError):
        quantile_band(_ens(np.zeros((1, 4))), alpha=0.1)


# -- coverage ---------------------------------------------------------------

def _band(lower, upper, grid=None):
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if grid is None:
        grid = Grid.regular(0.0, 1.0, len(lower))
    return IntervalBand(grid=grid, lower=lower, upper=upper,
                        mean=(lower + upper) / 2, alpha=0.1,
                        target_region=0, target_time=1.0)


def test_coverage_counts_the_fraction_inside():
    g = Grid.regular(0.0, 1.0, 4)
    band = _band(np.zeros(4), np.ones(4), g)
    assert coverage_probability(band, Curve(g, np.full(4, 0.5))) == 1.0
    assert coverage_probability(band, Curve(g, np.full(4, 2.0))) == 0.0
    assert coverage_probability(band, Curve(g, np.array([0.5, 2.0, -1.0, 0.9]))) == 0.5


def test_coverage_treats_band_edges_as_inside():
    g = Grid.regular(0.0, 1.0, 3)
    band = _band(np.zeros(3), np.ones(3), g)
    assert coverage_probability(band, Curve(g, np.array([0.0, 1.0, 0.5]))) == 1.0


def test_coverage_grows_with_band_width():
    g = Grid.regular(0.0, 1.0, 50)
    y = Curve(g, 2.0 * rng(4).standard_normal(50))
    widths = [0.5, 1.0, 2.0, 4.0]
    cov = [coverage_probability(_band(-np.full(50, w), np.full(50, w), g), y)
           for w in widths]
    assert all(b >= a for a, b in zip(cov, cov[1:]))


def test_coverage_rejects_mismatched_grids():
    band = _band(np.zeros(5), np.ones(5))
    other = Grid.regular(0.0, 2.0, 5)
    with pytest.raises(ContractError):
        coverage_probability(band, Curve(other, np.zeros(5)))


# -- integrated squared error ----------------------------------------------

def test_msfe_is_zero_on_perfect_forecasts():
    g = Grid.regular(0.0, 1.0, 21)
    y = Curve(g, np.sin(g.points))
    assert msfe([y], [Curve(g, y.values.copy())]) == 0.0


def test_msfe_of_a_constant_offset_is_its_square():
    g = Grid.regular(0.0, 1.0, 51)
    a = Curve(g, np.linspace(0, 1, 51))
    b = Curve(g, np.linspace(0, 1, 51) + 0.1)
    assert msfe([a], [b]) == pytest.approx(0.01, abs=1e-15)


def test_msfe_uses_the_grid_quadrature():
    g = Grid.from_points([0.0, 0.5, 2.0])
    # trapezoid weights: 0.25, 1.0, 0.75; diff (1, 2, 3)
    p = Curve(g, np.array([1.0, 2.0, 3.0]))
    a = Curve(g, np.zeros(3))
    assert msfe([p], [a]) == pytest.approx(0.25 * 1 + 1.0 * 4 + 0.75 * 9, abs=1e-12)


def test_msfe_averages_over_pairs():
    g = Grid.regular(0.0, 1.0, 11)
    zero = Curve(g, np.zeros(11))
    one = Curve(g, np.ones(11))
    assert msfe([one, zero], [zero, zero]) == pytest.approx(0.5, abs=1e-15)


def test_msfe_rejects_mismatched_inputs():
    g = Grid.regular(0.0, 1.0, 11)
    y = Curve(g, np.zeros(11))
    with pytest.raises(ContractError):
        msfe([y], [y, y])
    with pytest.raises(ContractError):
        msfe([], [])
    other = Curve(Grid.regular(0.0, 2.0, 11), np.zeros(11))
    with pytest.raises(ContractError):
        msfe([y], [other])


# -- ensembles --------------------------------------------------------------

def test_ensemble_carries_its_pair_and_shape():
    m = build_model(n_regions=3, time_span=9)
    x = Curve(m.basis.grid, np.sin(2 * np.pi * m.basis.grid.points))
    ens = forecast_ensemble(m, x, 1, 2, 4, 7, 25, rng_for(0, "forecast"))
    assert ens.samples.shape == (25, 21)
    assert ens.n_samples == 25
    assert (ens.source_region, ens.target_region) == (1, 2)
    assert (ens.source_time, ens.target_time) == (4.0, 7.0)


def test_ensemble_is_deterministic_given_the_stream():
    m = build_model(time_span=9)
    x = Curve(m.basis.grid, np.zeros(21))
    a = forecast_ensemble(m, x, 0, 1, 2, 5, 10, rng_for(3, "forecast"))
    b = forecast_ensemble(m, x, 0, 1, 2, 5, 10, rng_for(3, "forecast"))
    assert np.array_equal(a.samples, b.samples)


def test_single_sample_ensemble_equals_the_point_forecast():
    m = build_model(time_span=9)
    x = Curve(m.basis.grid, np.cos(np.pi * m.basis.grid.points))
    ens = forecast_ensemble(m, x, 0, 1, 1, 6, 1, rng_for(5, "forecast"))
    point = point_forecast(m, x, 0, 1, 1, 6, rng_for(5, "forecast"))
    assert np.array_equal(ens.samples[0], point.values)


def test_ensemble_rejects_bad_sizes_and_grids():
    m = build_model(time_span=9)
    x = Curve(m.basis.grid, np.zeros(21))
    with pytest.raises(ConfigError):
        forecast_ensemble(m, x, 0, 1, 0, 1, 0, rng_for(0, "forecast"))
    foreign = Curve(Grid.regular(0.0, 2.0, 21), np.zeros(21))
    with pytest.raises(ContractError):
        forecast_ensemble(m, foreign, 0, 1, 0, 1, 5, rng_for(0, "forecast"))


def test_mean_forecast_averages_the_samples():
    ens = _ens(np.array([[0.0, 2.0], [2.0, 4.0]]))
    mean = mean_forecast(ens)
    assert np.array_equal(mean.values, np.array([1.0, 3.0]))


def test_degenerate_same_time_forecast_has_no_spread():
    m = build_model(time_span=9, deterministic_source=True)
    x = Curve(m.basis.grid, np.sin(2 * np.pi * m.basis.grid.points))
    ens = forecast_ensemble(m, x, 0, 1, 4, 4, 50, rng_for(7, "forecast"))
    spread = ens.samples.max(axis=0) - ens.samples.min(axis=0)
    assert np.all(spread <= 1e-12)


def test_mean_forecast_error_shrinks_like_one_over_s():
    m = build_model(time_span=9, seed=3)
    g = m.basis.grid
    x = Curve(g, np.sin(2 * np.pi * g.points))
    truth = mean_forecast(
        forecast_ensemble(m, x, 0, 1, 2, 6, 80_000, rng_for(100, "forecast")))
    sizes = [100, 400, 1600, 6400]
    errs = []
    for s in sizes:
        acc = 0.0
        for rep in range(3):
            mean = mean_forecast(
                forecast_ensemble(m, x, 0, 1, 2, 6, s,
                                  rng_for(10 * s + rep, "forecast")))
            acc += msfe([mean], [truth])
        errs.append(acc / 3)
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    # integrated squared error of the sample mean decays like 1/S
    assert -1.35 < slope < -0.65


# -- panel evaluation -------------------------------------------------------

def _self_generated(n_regions=2, n_times=20, seed=0, **kw):
    m = build_model(n_regions=n_regions, time_span=n_times - 1, seed=seed, **kw)
    ds = rollout_panel(m, n_times, rng_for(seed, "sim"), burn_in=5)
    return m, ds


def test_delta_report_counts_every_region_and_test_time():
    m, ds = _self_generated(n_regions=3, n_times=15)
    rep = evaluate_delta(m, ds.values, ds.times, n_train=10, delta=2,
                         n_samples=20, alpha=0.1, rng=rng_for(1, "forecast"))
    assert rep.delta == 2
    assert rep.n_cases == (15 - 10) * 3
    assert rep.msfe_mean >= 0 and rep.msfe_single >= 0
    assert 0.0 <= rep.coverage <= 1.0


def test_delta_evaluation_is_deterministic():
    m, ds = _self_generated(n_times=12)
    kw = dict(n_train=8, delta=1, n_samples=15, alpha=0.1)
    a = evaluate_delta(m, ds.values, ds.times, rng=rng_for(2, "forecast"), **kw)
    b = evaluate_delta(m, ds.values, ds.times, rng=rng_for(2, "forecast"), **kw)
    assert a == b


def test_single_sample_mean_and_single_scores_coincide():
    m, ds = _self_generated(n_times=12)
    rep = evaluate_delta(m, ds.values, ds.times, n_train=8, delta=1,
                         n_samples=1, alpha=0.1, rng=rng_for(3, "forecast"))
    assert rep.msfe_mean == rep.msfe_single


def test_delta_evaluation_rejects_bad_splits():
    m, ds = _self_generated(n_times=12)
    gen = rng_for(0, "forecast")
    with pytest.raises(ConfigError):
        evaluate_delta(m, ds.values, ds.times, 8, 0, 5, 0.1, gen)
    with pytest.raises(ConfigError):
        evaluate_delta(m, ds.values, ds.times, 0, 1, 5, 0.1, gen)
    with pytest.raises(ConfigError):
        evaluate_delta(m, ds.values, ds.times, 12, 1, 5, 0.1, gen)
    with pytest.raises(ConfigError):
        evaluate_delta(m, ds.values, ds.times, 8, 12, 5, 0.1, gen)


def test_ensemble_mean_beats_one_draw_against_the_model_mean():
    m = build_model(time_span=9, seed=8)
    g = m.basis.grid
    x = Curve(g, np.sin(2 * np.pi * g.points))
    truth = mean_forecast(
        forecast_ensemble(m, x, 0, 0, 2, 6, 40_000, rng_for(50, "forecast")))
    ens = forecast_ensemble(m, x, 0, 0, 2, 6, 500, rng_for(51, "forecast"))
    err_mean = msfe([mean_forecast(ens)], [truth])
    err_single = msfe([Curve(g, ens.samples[0])], [truth])
    assert err_mean < err_single


# -- association graph ------------------------------------------------------

def test_zero_threshold_keeps_every_cross_edge():
    m, ds = _self_generated(n_regions=3, n_times=15)
    graph = association_graph(m, ds.values, ds.times, n_train=10,
                              threshold=0.0, n_samples=40, alpha=0.1,
                              rng=rng_for(4, "forecast"))
    assert graph.coverage.shape == (3, 3)
    assert len(graph.edges) == 3 * 2
    assert np.all((graph.coverage >= 0) & (graph.coverage <= 1))


def test_unreachable_threshold_gives_an_empty_graph():
    m, ds = _self_generated(n_regions=2, n_times=12)
    graph = association_graph(m, ds.values, ds.times, n_train=9,
                              threshold=1.1, n_samples=30, alpha=0.1,
                              rng=rng_for(5, "forecast"))
    assert graph.edges == []
    assert graph.threshold == 1.1


def test_best_source_maximizes_each_coverage_column():
    m, ds = _self_generated(n_regions=3, n_times=15, seed=2)
    graph = association_graph(m, ds.values, ds.times, n_train=10,
                              threshold=0.5, n_samples=40, alpha=0.1,
                              rng=rng_for(6, "forecast"))
    assert np.array_equal(graph.best_coverage(), graph.coverage.max(axis=0))
    for hp in range(3):
        assert graph.coverage[graph.best_source[hp], hp] == graph.coverage[:, hp].max()


def test_association_rejects_bad_inputs():
    m, ds = _self_generated(n_times=12)
    gen = rng_for(0, "forecast")
    with pytest.raises(ConfigError):
        association_graph(m, ds.values, ds.times, 0, 0.9, 5, 0.1, gen)
    with pytest.raises(ConfigError):
        association_graph(m, ds.values, ds.times, 12, 0.9, 5, 0.1, gen)
    with pytest.raises(ConfigError):
        association_graph(m, ds.values, ds.times, 8, np.nan, 5, 0.1, gen)


def test_duplicated_region_inherits_its_twin_coverage():
    m = build_model(n_regions=3, time_span=23, seed=9)
    table = m.params["spa.table"].data
    table[1] = table[0]                      # regions 0 and 1 share a code
    table[2] += 3.0
    ds = rollout_panel(m, 24, rng_for(9, "sim"), burn_in=5)
    values = ds.values.copy()
    values[:, 1] = values[:, 0]              # and the same observed curves
    graph = association_graph(m, values, ds.times, n_train=18, threshold=0.85,
                              n_samples=400, alpha=0.05,
                              rng=rng_for(10, "forecast"))
    assert np.array_equal(graph.coverage[:, 0], graph.coverage[:, 1])
    assert graph.coverage[0, 0] >= 0.85      # self-generated data is calibrated
    assert (0, 1, graph.coverage[0, 1]) in [tuple(e) for e in graph.edges]


# -- CSV output -------------------------------------------------------------

def test_ensemble_csv_layout(tmp_path):
    ens = _ens(rng(6).standard_normal((3, 4)))
    p = tmp_path / "ens.csv"
    ens.to_csv(p)
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "region_src,region_tgt,t_src,t_tgt,u,sample_id,value"
    assert len(lines) == 1 + 3 * 4
    parts = lines[1].split(",")
    assert len(parts) == 7
    assert float(parts[6]) == ens.samples[0, 0]


def test_band_csv_layout(tmp_path):
    band = _band(np.zeros(5), np.ones(5))
    p = tmp_path / "band.csv"
    band.to_csv(p)
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "region_tgt,t_tgt,u,lower,upper,mean"
    assert len(lines) == 6
    assert all(len(ln.split(",")) == 6 for ln in lines[1:])


def test_association_csv_keeps_only_edges(tmp_path):
    graph_cov = np.array([[0.9, 0.95], [0.2, 0.9]])
    from profnet.forecasting import AssociationGraph
    graph = AssociationGraph(coverage=graph_cov,
                             best_source=np.array([0, 0]),
                             edges=[(0, 1, 0.95)], threshold=0.9, alpha=0.05,
                             n_samples=10)
    p = tmp_path / "assoc.csv"
    graph.to_csv(p)
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "src,tgt,coverage"
    assert len(lines) == 2
    src, tgt, cov = lines[1].split(",")
    assert (int(src), int(tgt)) == (0, 1)
    assert float(cov) == 0.95
