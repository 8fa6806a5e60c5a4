"""Daily mobility-coupled SEIR dynamics and the next-generation matrix."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import NonConvergence
from .ingest import CaseSeries, MobilityMatrix, RegionTable
from .state import DAY, EpidemicParams, RegionalState, initialize_state

MobilityInput = Union[MobilityMatrix, Sequence[MobilityMatrix], Callable[[dt.date], MobilityMatrix]]


def transmission_covariates(state: RegionalState, mobility: MobilityMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-region exposure intensities for unit local and mobility rates.

    Only untested infectious people take part in the mobility term.
    """
    s_frac = state.S / state.population
    x_loc = s_frac * (state.I_T + state.I_U)
    m = mobility.matrix
    u = state.I_U / state.population
    x_mob = s_frac * (m.T @ u + m @ u)
    return x_loc, x_mob


def _advance(state: RegionalState, params: EpidemicParams, exposures: np.ndarray):
    """Apply one day of flows given the S -> E flow; returns (state, reported)."""
    exposures = np.minimum(np.maximum(exposures, 0.0), state.S)
    leave_e = np.minimum(state.E / params.nu, state.E)
    to_it = params.a * leave_e
    to_iu = leave_e - to_it
    rec_t = np.minimum(state.I_T / params.omega, state.I_T)
    rec_u = np.minimum(state.I_U / params.omega, state.I_U)
    new = RegionalState(
        state.date + DAY,
        state.region_ids,
        state.population,
        state.S - exposures,
        state.E + exposures - leave_e,
        state.I_T + to_it - rec_t,
        state.I_U + to_iu - rec_u,
        state.R_T + rec_t,
        state.R_U + rec_u,
    )
    return new, exposures, to_it


def step(state: RegionalState, params: EpidemicParams, mobility: MobilityMatrix) -> RegionalState:
    """Advance every region by one day (forward difference, unit time step).

    Each compartment has a single outflow; outflows are capped at the size
    of their source so that no compartment turns negative.
    """
    x_loc, x_mob = transmission_covariates(state, mobility)
    exposures = params.beta_loc * x_loc + params.beta_mob * x_mob
    return _advance(state, params, exposures)[0]


@dataclass(frozen=True)
class SimulationConfig:
    horizon: int
    params: EpidemicParams | Sequence[EpidemicParams]
    mobility: MobilityInput
    reinit_dates: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one day")
        if not isinstance(self.params, EpidemicParams) and len(self.params) < self.horizon:
            raise ValueError(f"need parameters for {self.horizon} days, got {len(self.params)}")
        if isinstance(self.mobility, Sequence) and len(self.mobility) < self.horizon:
            raise ValueError(f"need mobility for {self.horizon} days, got {len(self.mobility)}")
        object.__setattr__(self, "reinit_dates", frozenset(self.reinit_dates))

    def params_for(self, k: int) -> EpidemicParams:
        if isinstance(self.params, EpidemicParams):
            return self.params
        return self.params[min(k, len(self.params) - 1)]

    def mobility_for(self, k: int, day: dt.date) -> MobilityMatrix:
        if isinstance(self.mobility, MobilityMatrix):
            return self.mobility
        if callable(self.mobility):
            return self.mobility(day)
        return self.mobility[k]


@dataclass(frozen=True)
class Trajectory:
    """States on ``horizon + 1`` consecutive days and the flows between them.

    ``new_reported[k]`` and ``new_exposures[k]`` are the flows leaving day
    ``k`` (E -> I_T and S -> E respectively).
    """

    states: tuple[RegionalState, ...]
    new_exposures: np.ndarray
    new_reported: np.ndarray

    @property
    def dates(self) -> list[dt.date]:
        return [s.date for s in self.states]

    def national_reported(self) -> np.ndarray:
        return self.new_reported.sum(axis=1)


def simulate(
    initial: RegionalState,
    config: SimulationConfig,
    cases: CaseSeries | None = None,
    regions: RegionTable | None = None,
    exposure_sampler: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> Trajectory:
    """Iterate :func:`step` over the configured horizon.

    On each date in ``config.reinit_dates`` the state is replaced by the
    case-based initialization for that date (which needs ``cases`` and
    ``regions``). ``exposure_sampler(rate, k)`` replaces the deterministic
    S -> E flow with a draw, for generating synthetic observations.
    """
    if config.reinit_dates and (cases is None or regions is None):
        raise ValueError("re-initialization needs cases and regions")
    states = [initial]
    exposures, reported = [], []
    state = initial
    for k in range(config.horizon):
        params = config.params_for(k)
        x_loc, x_mob = transmission_covariates(state, config.mobility_for(k, state.date))
        rate = params.beta_loc * x_loc + params.beta_mob * x_mob
        if exposure_sampler is not None:
            rate = exposure_sampler(rate, k)
        state, flow_in, flow_rep = _advance(state, params, rate)
        if state.date in config.reinit_dates:
            p_next = config.params_for(k + 1)
            state = initialize_state(cases, None, regions, state.date, p_next.nu, p_next.omega, a=p_next.a)
        states.append(state)
        exposures.append(flow_in)
        reported.append(flow_rep)
    return Trajectory(tuple(states), np.array(exposures), np.array(reported))


def first_of_month_dates(start: dt.date, end: dt.date) -> frozenset:
    """First days of months strictly after ``start`` up to ``end``."""
    out = set()
    day = start + DAY
    while day <= end:
        if day.day == 1:
            out.add(day)
        day += DAY
    return frozenset(out)


def next_generation_matrix(state: RegionalState, params: EpidemicParams, mobility: MobilityMatrix) -> np.ndarray:
    """``K[i, j]``: new exposures in region i caused by one new exposure in region j.

    A newly exposed person becomes infectious for ``omega`` days on average;
    with probability ``a`` they are tested and transmit locally only.
    """
    n = state.population
    s_frac = state.S / n
    m = mobility.matrix
    local = np.diag(params.beta_loc * s_frac)
    travel = (1.0 - params.a) * params.beta_mob * s_frac[:, None] * (m.T + m) / n[None, :]
    return params.omega * (local + travel)


def effective_reproduction_number(K, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Spectral radius of a nonnegative matrix by shifted power iteration.

    The shift ``c I`` (``c`` = mean row sum) removes the oscillation that
    plain power iteration shows on periodic matrices such as pure
    between-region coupling.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    if (K < 0).any():
        raise ValueError("next-generation matrix must be nonnegative")
    if not K.any():
        return 0.0
    n = K.shape[0]
    c = float(K.sum(axis=1).mean())
    x = np.full(n, 1.0 / n)
    lam = np.inf
    for _ in range(max_iter):
        y = K @ x + c * x
        new_lam = float(y.sum())
        y /= new_lam
        if np.abs(y - x).sum() <= tol and abs(new_lam - lam) <= tol * max(1.0, new_lam):
            return max(new_lam - c, 0.0)
        x, lam = y, new_lam
    raise NonConvergence(f"power iteration did not converge in {max_iter} iterations")
