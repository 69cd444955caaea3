"""Monte Carlo forecasting utilities.

An ensemble is S generated curves for one (source, target) pair; point and
mean forecasts, quantile bands, coverage, and integrated squared forecast
error are all derived from it.  The cross-region association graph scores
every source region against every target region by the coverage its
prediction bands achieve over the test horizon, keeping edges above a
threshold.

Because the output layer is linear in the concatenated representation, an
ensemble for one source splits into a stochastic part shared by all target
regions plus a deterministic per-region shift.  Per-grid-point quantiles
commute with that shift, so the full source x target coverage matrix costs
one ensemble per source and time, not one per pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .basis import Curve, Grid
from .errors import ConfigError, ContractError
from .model import ProfnetModel, draw_noise

_FMT = "%.17g"


@dataclass
class ForecastEnsemble:
    """S sampled curves for one source/target pair."""

    grid: Grid
    samples: np.ndarray          # S x M
    source_region: int
    target_region: int
    source_time: float
    target_time: float

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def to_csv(self, path):
        from .training import _atomic_write_text
        rows = ["region_src,region_tgt,t_src,t_tgt,u,sample_id,value"]
        head = "%d,%d,%s,%s" % (self.source_region, self.target_region,
                                _FMT % self.source_time, _FMT % self.target_time)
        for s in range(self.n_samples):
            for j in range(self.grid.m):
                rows.append("%s,%s,%d,%s" % (head, _FMT % self.grid.points[j],
                                             s, _FMT % self.samples[s, j]))
        _atomic_write_text(path, "\n".join(rows) + "\n")


@dataclass
class IntervalBand:
    """Pointwise (1 - alpha) prediction band with the ensemble mean."""

    grid: Grid
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray
    alpha: float
    target_region: int
    target_time: float

    def to_csv(self, path):
        from .training import _atomic_write_text
        rows = ["region_tgt,t_tgt,u,lower,upper,mean"]
        head = "%d,%s" % (self.target_region, _FMT % self.target_time)
        for j in range(self.grid.m):
            rows.append("%s,%s,%s,%s,%s" % (head, _FMT % self.grid.points[j],
                                            _FMT % self.lower[j],
                                            _FMT % self.upper[j],
                                            _FMT % self.mean[j]))
        _atomic_write_text(path, "\n".join(rows) + "\n")


@dataclass
class AssociationGraph:
    """Coverage of every source region's bands over every target region.

    ``coverage[h, hp]`` is the mean coverage, over the evaluation times, of
    the band built from source h for target hp.  ``best_source[hp]`` is the
    row maximizing column hp (self allowed); ``edges`` keeps (h, hp,
    coverage) pairs at or above the threshold with h != hp.
    """

    coverage: np.ndarray         # H x H
    best_source: np.ndarray      # H
    edges: list
    threshold: float
    alpha: float
    n_samples: int

    @property
    def n_regions(self) -> int:
        return self.coverage.shape[0]

    def best_coverage(self) -> np.ndarray:
        """Per-target coverage achieved by its best source."""
        return self.coverage[self.best_source, np.arange(self.n_regions)]

    def to_csv(self, path):
        """Write the thresholded edge list."""
        from .training import _atomic_write_text
        rows = ["src,tgt,coverage"]
        for i, j, c in self.edges:
            rows.append("%d,%d,%s" % (i, j, _FMT % c))
        _atomic_write_text(path, "\n".join(rows) + "\n")


def forecast_ensemble(model: ProfnetModel, x: Curve, h: int, hp: int,
                      t, tp, n_samples: int,
                      rng: np.random.Generator) -> ForecastEnsemble:
    """Sample ``n_samples`` curves for region hp at time tp, conditioning
    on region h's curve observed at time t."""
    if n_samples < 1:
        raise ConfigError("forecast_ensemble: n_samples must be >= 1")
    if not x.grid.same_as(model.basis.grid):
        raise ContractError("forecast_ensemble: curve grid does not match model grid")
    eps = draw_noise(rng, model.config.n_processes, n_samples)
    samples = model.sample_curves(x.values, h, t, tp, eps, hp=hp)
    return ForecastEnsemble(grid=model.basis.grid, samples=samples,
                            source_region=int(h), target_region=int(hp),
                            source_time=float(t), target_time=float(tp))


def point_forecast(model: ProfnetModel, x: Curve, h: int, hp: int,
                   t, tp, rng: np.random.Generator) -> Curve:
    """A single stochastic forecast (one noise draw)."""
    ens = forecast_ensemble(model, x, h, hp, t, tp, 1, rng)
    return Curve(ens.grid, ens.samples[0])


def mean_forecast(ensemble: ForecastEnsemble) -> Curve:
    """Pointwise ensemble mean."""
    return Curve(ensemble.grid, ensemble.samples.mean(axis=0))


def quantile_band(ensemble: ForecastEnsemble, alpha: float) -> IntervalBand:
    """Central (1 - alpha) band from pointwise empirical quantiles."""
    if not (0.0 < alpha < 1.0):
        raise ContractError(f"quantile_band: alpha must lie in (0, 1), got {alpha}")
    if ensemble.n_samples < 2:
        raise ContractError("quantile_band: need at least 2 samples for quantiles")
    lo, hi = np.quantile(ensemble.samples, [alpha / 2, 1 - alpha / 2], axis=0)
    return IntervalBand(grid=ensemble.grid, lower=lo, upper=hi,
                        mean=ensemble.samples.mean(axis=0), alpha=float(alpha),
                        target_region=ensemble.target_region,
                        target_time=ensemble.target_time)


def coverage_probability(band: IntervalBand, actual: Curve) -> float:
    """Fraction of grid points where the curve falls inside the closed band."""
    if not band.grid.same_as(actual.grid):
        raise ContractError("coverage_probability: band and curve grids differ")
    return K.coverage_count(actual.values, band.lower, band.upper) / band.grid.m


def msfe(predicted, actual) -> float:
    """Mean integrated squared error over forecast/actual curve pairs,
    with the integral taken by the grid's quadrature weights."""
    if len(predicted) != len(actual):
        raise ContractError("msfe: forecast and actual lists differ in length")
    if len(predicted) == 0:
        raise ContractError("msfe: need at least one pair")
    acc = 0.0
    for p, a in zip(predicted, actual):
        if not p.grid.same_as(a.grid):
            raise ContractError("msfe: curve pair lives on different grids")
        d = p.values - a.values
        acc += K.wdot(p.grid.weights, d, d)
    return acc / len(predicted)


# ---------------------------------------------------------------------------
# panel evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeltaReport:
    """Forecast quality at one lead time over the test block."""

    delta: int
    n_cases: int
    msfe_mean: float
    msfe_single: float
    coverage: float


def evaluate_delta(model: ProfnetModel, values: np.ndarray, times: np.ndarray,
                   n_train: int, delta: int, n_samples: int, alpha: float,
                   rng: np.random.Generator) -> DeltaReport:
    """Score delta-step-ahead forecasts for every region and test time.

    For each test time tp the source is the same region's curve observed
    delta steps earlier (which may itself lie in the test block, as in a
    rolling forecast).  Reports the integrated squared error of the
    ensemble mean, the same for a single draw, and mean band coverage.
    """
    values = np.asarray(values, dtype=np.float64)
    n_times, n_regions, m = values.shape
    if delta < 1:
        raise ConfigError("evaluate_delta: delta must be >= 1")
    if not (0 < n_train < n_times):
        raise ConfigError("evaluate_delta: n_train must split the panel")
    grid = model.basis.grid
    w = grid.weights
    start = max(n_train, delta)
    if start >= n_times:
        raise ConfigError(f"evaluate_delta: no test case reachable at delta={delta}")

    sq_mean = 0.0
    sq_single = 0.0
    cov = 0.0
    n_cases = 0
    for tp in range(start, n_times):
        t = tp - delta
        for h in range(n_regions):
            eps = draw_noise(rng, model.config.n_processes, n_samples)
            samples = model.sample_curves(values[t, h], h, times[t], times[tp],
                                          eps, hp=h)
            actual = values[tp, h]
            d = samples.mean(axis=0) - actual
            sq_mean += float(np.dot(w * d, d))
            d1 = samples[0] - actual
            sq_single += float(np.dot(w * d1, d1))
            lo, hi = np.quantile(samples, [alpha / 2, 1 - alpha / 2], axis=0)
            cov += K.coverage_count(actual, lo, hi) / m
            n_cases += 1
    return DeltaReport(delta=int(delta), n_cases=n_cases,
                       msfe_mean=sq_mean / n_cases,
                       msfe_single=sq_single / n_cases,
                       coverage=cov / n_cases)


def association_graph(model: ProfnetModel, values: np.ndarray,
                      times: np.ndarray, n_train: int, threshold: float,
                      n_samples: int, alpha: float,
                      rng: np.random.Generator) -> AssociationGraph:
    """Build the cross-region coverage matrix over the test block.

    Every source region conditions on its last training-block curve; its
    band for each test time is shifted per target region (the output layer
    is linear in the region representation, so quantiles shift exactly).
    Coverage is averaged over test times, and edges keep source/target
    pairs whose mean coverage clears the threshold.
    """
    values = np.asarray(values, dtype=np.float64)
    n_times, n_regions, m = values.shape
    if not (0 < n_train < n_times):
        raise ConfigError("association_graph: n_train must split the panel")
    if not np.isfinite(threshold):
        raise ConfigError("association_graph: threshold must be finite")
    t_src = n_train - 1
    test_times = range(n_train, n_times)
    coverage = np.zeros((n_regions, n_regions))
    for h in range(n_regions):
        for tp in test_times:
            eps = draw_noise(rng, model.config.n_processes, n_samples)
            stoch, shifts = model.sample_curves(values[t_src, h], h,
                                                times[t_src], times[tp], eps)
            lo, hi = np.quantile(stoch, [alpha / 2, 1 - alpha / 2], axis=0)
            for hp in range(n_regions):
                coverage[h, hp] += K.coverage_count(
                    values[tp, hp], lo + shifts[hp], hi + shifts[hp]) / m
    coverage /= len(test_times)
    best_source = np.argmax(coverage, axis=0)
    edges = [(i, j, float(coverage[i, j]))
             for i in range(n_regions) for j in range(n_regions)
             if i != j and coverage[i, j] >= threshold]
    return AssociationGraph(coverage=coverage, best_source=best_source,
                            edges=edges, threshold=float(threshold),
                            alpha=float(alpha), n_samples=int(n_samples))
