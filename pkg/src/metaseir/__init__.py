"""Mobility-coupled metapopulation SEIR: initialization from reported cases,
daily transmission-rate estimation, simulation and regional forecasting."""

from .dynamics import (
    SimulationConfig,
    Trajectory,
    effective_reproduction_number,
    next_generation_matrix,
    simulate,
    step,
)
from .estimation import (
    NEGBIN,
    NEGBIN_NOMOB,
    POISSON,
    POISSON_NOMOB,
    Covariates,
    EstimateRecord,
    ModelVariant,
    aic,
    bootstrap,
    build_covariates,
    compare_aic,
    derived_params,
    fit,
    loglik_negbin,
    loglik_poisson,
)
from .forecast import (
    Forecast,
    compare_models,
    delay_scan,
    make_forecast,
    national_validation_init,
    rmse,
    spearman,
)
from .ingest import (
    CaseSeries,
    MobilityMatrix,
    MobilityReductionSeries,
    PrevalenceSeries,
    RegionTable,
    effective_mobility,
    load_cases,
    load_mobility_baseline,
    load_prevalence,
    load_reductions,
    load_regions,
)
from .state import EpidemicParams, RegionalState, initialize_state, tested_fraction

__version__ = "0.1.0"
