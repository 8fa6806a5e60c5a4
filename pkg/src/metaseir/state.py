"""Compartment initialization from reported cases.

Exposed, tested-infectious and tested-recovered counts are reconstructed
from daily reports with geometric latent/infectious periods: the exposed
count looks 7 days ahead, the infectious count 14 days back, and in both
cases the tail mass of the geometric distribution beyond the window is
placed on its last day. The untested compartments are the tested ones
scaled by ``(1 - a) / a``.
"""
from __future__ import annotations

import datetime as dt
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DataWarning,
    DateOutOfCoverage,
    InsufficientLookahead,
    InvalidTestedFraction,
    NegativeSusceptible,
    NonpositivePrevalence,
)
from .ingest import CaseSeries, PrevalenceSeries, RegionTable

LOOKAHEAD_DAYS = 7
LOOKBACK_DAYS = 14
COMPARTMENTS = ("S", "E", "I_T", "I_U", "R_T", "R_U")

DAY = dt.timedelta(days=1)


@dataclass(frozen=True)
class EpidemicParams:
    nu: float = 3.0
    omega: float = 9.0
    a: float = 1.0
    beta_loc: float = 0.0
    beta_mob: float = 0.0
    r: float | None = None

    def __post_init__(self):
        if not self.nu > 0 or not self.omega > 0:
            raise ValueError("latent and infectious periods must be positive")
        if not 0 < self.a <= 1:
            raise ValueError(f"tested fraction must lie in (0, 1], got {self.a}")
        if self.beta_loc < 0 or self.beta_mob < 0:
            raise ValueError("transmission rates must be nonnegative")
        if self.r is not None and not self.r > 0:
            raise ValueError("dispersion must be positive")


@dataclass(frozen=True)
class RegionalState:
    """The six compartments of every region on one day (real-valued persons)."""

    date: dt.date
    region_ids: tuple[str, ...]
    population: np.ndarray
    S: np.ndarray
    E: np.ndarray
    I_T: np.ndarray
    I_U: np.ndarray
    R_T: np.ndarray
    R_U: np.ndarray

    def __post_init__(self):
        for name in ("population",) + COMPARTMENTS:
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (len(self.region_ids),):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({len(self.region_ids)},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def infectious(self) -> np.ndarray:
        return self.I_T + self.I_U

    def stacked(self) -> np.ndarray:
        """Array of shape (6, regions) in ``COMPARTMENTS`` order."""
        return np.stack([getattr(self, c) for c in COMPARTMENTS])

    def with_date(self, date: dt.date) -> "RegionalState":
        return replace(self, date=date)

    @classmethod
    def from_stacked(cls, date, region_ids, population, arr) -> "RegionalState":
        return cls(date, tuple(region_ids), population, *arr)


def lookahead_weights(nu: float) -> np.ndarray:
    """Weights on ``cases[t+1..t+7]`` summing to ``nu``."""
    if nu < 1:
        raise ValueError("geometric latent period needs nu >= 1")
    q = 1.0 - 1.0 / nu
    w = q ** np.arange(LOOKAHEAD_DAYS, dtype=float)
    w[-1] = nu * q ** (LOOKAHEAD_DAYS - 1)
    return w


def lookback_weights(omega: float) -> np.ndarray:
    """Weights on ``cases[t], cases[t-1], ..., cases[t-14]`` summing to ``omega``."""
    if omega < 1:
        raise ValueError("geometric infectious period needs omega >= 1")
    q = 1.0 - 1.0 / omega
    w = q ** np.arange(LOOKBACK_DAYS + 1, dtype=float)
    w[-1] = omega * q ** LOOKBACK_DAYS
    return w


def exposed_estimates(cases: CaseSeries, date: dt.date, nu: float, a: float) -> np.ndarray:
    """Exposed count per region on ``date``; needs reports up to ``date + 7``."""
    last = date + LOOKAHEAD_DAYS * DAY
    if last > cases.end:
        raise InsufficientLookahead(f"initializing {date} needs cases through {last}, data end {cases.end}")
    future = cases.window(date + DAY, last)
    return lookahead_weights(nu) @ future / a


def exposed_estimate(cases: CaseSeries, region: str, date: dt.date, nu: float, a: float) -> float:
    return float(exposed_estimates(cases, date, nu, a)[cases.region_ids.index(region)])


def tested_infectious_estimates(cases: CaseSeries, date: dt.date, omega: float) -> np.ndarray:
    past = cases.window(date - LOOKBACK_DAYS * DAY, date)[::-1]
    return lookback_weights(omega) @ past


def tested_infectious_estimate(cases: CaseSeries, region: str, date: dt.date, omega: float) -> float:
    return float(tested_infectious_estimates(cases, date, omega)[cases.region_ids.index(region)])


def tested_recovered_estimates(cases: CaseSeries, date: dt.date, omega: float) -> np.ndarray:
    if date > cases.end:
        raise DateOutOfCoverage(f"cases end on {cases.end}, need {date}")
    cumulative = cases.window(min(cases.start, date), date).sum(axis=0)
    rec = cumulative - tested_infectious_estimates(cases, date, omega)
    neg = rec < 0
    if neg.any():
        warnings.warn(
            f"tested-recovered estimate negative in {int(neg.sum())} region(s) on {date}; clamped to 0",
            DataWarning,
        )
        rec = np.where(neg, 0.0, rec)
    return rec


def tested_recovered_estimate(cases: CaseSeries, region: str, date: dt.date, omega: float) -> float:
    return float(tested_recovered_estimates(cases, date, omega)[cases.region_ids.index(region)])


def tested_fraction(cases: CaseSeries, prevalence: PrevalenceSeries, date: dt.date, omega: float) -> float:
    """National fraction of infectious people that tested positive on ``date``."""
    total = prevalence[date]
    if not total > 0:
        raise NonpositivePrevalence(f"prevalence on {date} is {total}")
    ratio = float(tested_infectious_estimates(cases, date, omega).sum()) / total
    if ratio <= 0:
        raise InvalidTestedFraction(f"no tested infectious people on {date}; tested fraction would be {ratio}")
    if ratio > 1:
        warnings.warn(f"tested fraction {ratio:.4g} on {date} exceeds 1; clamped", DataWarning)
        ratio = 1.0
    return ratio


def initialize_state(
    cases: CaseSeries,
    prevalence: PrevalenceSeries | None,
    regions: RegionTable,
    date: dt.date,
    nu: float,
    omega: float,
    a: float | None = None,
) -> RegionalState:
    """Reconstruct all compartments on ``date``.

    ``a`` defaults to the national tested fraction derived from
    ``prevalence``; pass it explicitly to override.
    """
    if a is None:
        if prevalence is None:
            raise ValueError("either prevalence or a must be given")
        a = tested_fraction(cases, prevalence, date, omega)
    if not 0 < a <= 1:
        raise InvalidTestedFraction(f"tested fraction must lie in (0, 1], got {a}")
    untested = (1.0 - a) / a
    E = exposed_estimates(cases, date, nu, a)
    I_T = tested_infectious_estimates(cases, date, omega)
    R_T = tested_recovered_estimates(cases, date, omega)
    I_U = untested * I_T
    R_U = untested * R_T
    N = regions.population
    S = N - E - I_T - I_U - R_T - R_U
    if (S < 0).any():
        bad = [regions.ids[i] for i in np.flatnonzero(S < 0)]
        raise NegativeSusceptible(f"inferred burden exceeds population on {date} in {bad[:5]}")
    return RegionalState(date, regions.ids, N, S, E, I_T, I_U, R_T, R_U)
