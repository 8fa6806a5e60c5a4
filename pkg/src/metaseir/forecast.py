"""Regional 14-day forecasts and their evaluation."""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .dynamics import SimulationConfig, simulate
from .errors import (
    DegenerateRanks,
    InsufficientOverlap,
    MismatchedDates,
    MismatchedRegions,
    MissingEstimates,
)
from .estimation import EstimateRecord, ModelVariant, percentile_interval
from .ingest import CaseSeries, MobilityMatrix, PrevalenceSeries, RegionTable
from .state import DAY, EpidemicParams, exposed_estimates, initialize_state, tested_fraction

HORIZON = 14
INIT_LAG = 7
AVERAGING_DAYS = 7


@dataclass(frozen=True)
class Forecast:
    """Reported cases per region over ``[issue_date, issue_date + 14)``.

    ``scenarios`` has one row per bootstrap replica. ``fractions`` is
    ``None`` when the national point forecast is zero.
    """

    issue_date: dt.date
    region_ids: tuple[str, ...]
    point: np.ndarray
    scenarios: np.ndarray
    model: str = ""

    @property
    def national(self) -> float:
        return float(self.point.sum())

    @property
    def fractions(self) -> np.ndarray | None:
        total = self.national
        return self.point / total if total > 0 else None

    @property
    def bands(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.scenarios) == 0:
            return self.point, self.point
        lo, hi = percentile_interval(self.scenarios)
        return lo, hi

    @property
    def national_scenarios(self) -> np.ndarray:
        return self.scenarios.sum(axis=1)


def averaging_window(issue_date: dt.date) -> list[dt.date]:
    """The 7 days before the initialization date ``issue_date - 7``."""
    init = issue_date - INIT_LAG * DAY
    return [init - k * DAY for k in range(AVERAGING_DAYS, 0, -1)]


def _simulate_total(state0, params, mobility, issue_date) -> np.ndarray:
    config = SimulationConfig(INIT_LAG + HORIZON, params, mobility)
    traj = simulate(state0, config)
    return traj.new_reported[INIT_LAG:].sum(axis=0)


def make_forecast(
    cases: CaseSeries,
    prevalence: PrevalenceSeries | None,
    regions: RegionTable,
    mobility: MobilityMatrix | Callable[[dt.date], MobilityMatrix],
    estimates: Mapping[dt.date, EstimateRecord],
    issue_date: dt.date,
    variant: ModelVariant | None = None,
    nu: float = 3.0,
    omega: float = 9.0,
    tested_fractions: Mapping[dt.date, float] | None = None,
) -> Forecast:
    """Forecast reported cases for the 14 days starting at ``issue_date``.

    The model is initialized at ``issue_date - 7`` and run for 21 days with
    ``beta_loc``, ``beta_mob`` and ``a`` averaged over the 7 days before the
    initialization date. Each bootstrap replica, averaged the same way,
    yields one scenario.
    """
    window = averaging_window(issue_date)
    missing = [d for d in window if d not in estimates]
    if missing:
        raise MissingEstimates(f"forecast for {issue_date} needs estimates for {missing}")
    records = [estimates[d] for d in window]
    if variant is None:
        variant = records[0].model
    use_mob = variant.mobility
    if tested_fractions is None:
        a = float(np.mean([tested_fraction(cases, prevalence, d, omega) for d in window]))
    else:
        a = float(np.mean([tested_fractions[d] for d in window]))

    state0 = initialize_state(cases, None, regions, issue_date - INIT_LAG * DAY, nu, omega, a=a)

    def params(bl, bm):
        return EpidemicParams(nu, omega, a, max(bl, 0.0), max(bm, 0.0) if use_mob else 0.0)

    beta_loc = float(np.mean([r.beta_loc for r in records]))
    beta_mob = float(np.mean([r.beta_mob for r in records]))
    point = _simulate_total(state0, params(beta_loc, beta_mob), mobility, issue_date)

    n_rep = min(len(r.replicas) for r in records)
    scenarios = np.empty((n_rep, len(regions)))
    if n_rep:
        reps = np.stack([r.replicas[:n_rep, :2] for r in records]).mean(axis=0)
        for b, (bl, bm) in enumerate(reps):
            scenarios[b] = _simulate_total(state0, params(bl, bm), mobility, issue_date)
    return Forecast(issue_date, regions.ids, point, scenarios, variant.name)


def actual_totals(cases: CaseSeries, issue_date: dt.date, horizon: int = HORIZON) -> np.ndarray:
    return cases.window(issue_date, issue_date + (horizon - 1) * DAY).sum(axis=0)


def national_validation_init(
    cases: CaseSeries,
    nu: float,
    a_series: Mapping[dt.date, float] | float,
    dates: Sequence[dt.date],
) -> np.ndarray:
    """National daily reported cases implied by initialization alone: ``sum_i a E_i / nu``."""
    out = np.empty(len(dates))
    for k, d in enumerate(dates):
        a = a_series if isinstance(a_series, (int, float)) else a_series[d]
        out[k] = a * exposed_estimates(cases, d, nu, a).sum() / nu
    return out


# --------------------------------------------------------------------------- metrics


def _aligned(forecast, actual) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(forecast, Mapping) or isinstance(actual, Mapping):
        if not (isinstance(forecast, Mapping) and isinstance(actual, Mapping)):
            raise MismatchedRegions("both inputs must be keyed by region")
        if set(forecast) != set(actual):
            raise MismatchedRegions("forecast and actual cover different regions")
        keys = sorted(forecast)
        return np.array([forecast[k] for k in keys], float), np.array([actual[k] for k in keys], float)
    f, a = np.asarray(forecast, float), np.asarray(actual, float)
    if f.shape != a.shape:
        raise MismatchedRegions(f"forecast has shape {f.shape}, actual {a.shape}")
    return f, a


def rmse(forecast, actual) -> float:
    """Root mean squared per-region error on raw counts."""
    f, a = _aligned(forecast, actual)
    return float(np.sqrt(np.mean((f - a) ** 2)))


def spearman(forecast_fractions, actual_fractions) -> float:
    """Rank correlation with average ranks for ties."""
    f, a = _aligned(forecast_fractions, actual_fractions)
    if len(f) < 2:
        raise DegenerateRanks("need at least two regions")
    if np.all(f == f[0]) or np.all(a == a[0]):
        raise DegenerateRanks("all values identical; ranks carry no order")
    rf, ra = rankdata(f), rankdata(a)
    rf -= rf.mean()
    ra -= ra.mean()
    return float(np.clip(rf @ ra / math.sqrt((rf @ rf) * (ra @ ra)), -1.0, 1.0))


@dataclass(frozen=True)
class DelayScan:
    correlations: dict[int, float]

    @property
    def best_shift(self) -> int:
        finite = {s: c for s, c in self.correlations.items() if math.isfinite(c)}
        return max(finite, key=lambda s: (finite[s], -s))

    @property
    def best_correlation(self) -> float:
        return self.correlations[self.best_shift]


def delay_scan(series_a, series_b, max_shift: int, min_overlap: int = 10) -> DelayScan:
    """Correlation of ``series_a`` delayed by ``s`` days against ``series_b``.

    For each shift ``s`` in ``0..max_shift`` compares ``a[t - s]`` with
    ``b[t]``; a series that lags another by ``s`` days peaks at ``s``.
    """
    a, b = np.asarray(series_a, float), np.asarray(series_b, float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("series must be 1-d and aligned on the same dates")
    if len(a) - max_shift < min_overlap:
        raise InsufficientOverlap(
            f"shift {max_shift} leaves {len(a) - max_shift} overlapping days, need {min_overlap}"
        )
    out = {}
    for s in range(max_shift + 1):
        x, y = a[: len(a) - s], b[s:]
        if np.std(x) == 0 or np.std(y) == 0:
            out[s] = math.nan
        else:
            out[s] = float(np.corrcoef(x, y)[0, 1])
    if not any(math.isfinite(c) for c in out.values()):
        raise InsufficientOverlap("series are constant over every shifted window")
    return DelayScan(out)


@dataclass(frozen=True)
class EvaluationReport:
    issue_date: dt.date
    model: str
    rmse: float
    spearman: float
    errors: np.ndarray


def evaluate(forecast: Forecast, actual) -> EvaluationReport:
    """RMSE of absolute counts and Spearman of regional fractions (NaN if undefined)."""
    actual = np.asarray(actual, float)
    err = forecast.point - actual
    fr = forecast.fractions
    rho = math.nan
    if fr is not None and actual.sum() > 0:
        try:
            rho = spearman(fr, actual / actual.sum())
        except DegenerateRanks:
            pass
    return EvaluationReport(forecast.issue_date, forecast.model, rmse(forecast.point, actual), rho, err)


@dataclass(frozen=True)
class ComparisonRow:
    issue_date: dt.date
    rmse_with: float
    rmse_without: float
    spearman_with: float
    spearman_without: float

    @property
    def rmse_diff(self) -> float:
        return self.rmse_with - self.rmse_without

    @property
    def spearman_diff(self) -> float:
        return self.spearman_with - self.spearman_without


def compare_models(
    forecasts_with: Sequence[Forecast],
    forecasts_without: Sequence[Forecast],
    actual: Mapping[dt.date, np.ndarray] | Callable[[dt.date], np.ndarray],
) -> list[ComparisonRow]:
    """Paired RMSE and Spearman per issue date for the two model variants."""
    dates_w = [f.issue_date for f in forecasts_with]
    dates_wo = [f.issue_date for f in forecasts_without]
    if dates_w != dates_wo:
        raise MismatchedDates("forecasts were issued on different dates")
    rows = []
    for fw, fwo in zip(forecasts_with, forecasts_without):
        act = actual(fw.issue_date) if callable(actual) else actual[fw.issue_date]
        ew, ewo = evaluate(fw, act), evaluate(fwo, act)
        rows.append(ComparisonRow(fw.issue_date, ew.rmse, ewo.rmse, ew.spearman, ewo.spearman))
    return rows
