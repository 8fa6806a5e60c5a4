"""Daily maximum-likelihood estimation of local and mobility transmission rates.

New exposures ``y_i`` in region ``i`` between two consecutive days are
modelled as Poisson or negative binomial with mean
``beta_loc * x_loc[i] + beta_mob * x_mob[i]``. Estimates are refined by a
projected Newton method on the box ``beta >= 0``, ``r in [R_MIN, R_MAX]``;
confidence intervals come from a parametric bootstrap.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .dynamics import transmission_covariates
from .errors import (
    DataWarning,
    DegenerateDesign,
    MismatchedData,
    NonConvergence,
    UndefinedDerivedParams,
)
from .ingest import MobilityMatrix
from .state import RegionalState

R_MIN = 1e-6
R_MAX = 1e8
AIC_STRONG = 10.0

_LOG_R_MIN = math.log(R_MIN)
_LOG_R_MAX = math.log(R_MAX)


@dataclass(frozen=True)
class ModelVariant:
    family: str
    mobility: bool = True

    def __post_init__(self):
        if self.family not in ("poisson", "negbin"):
            raise ValueError(f"unknown model family {self.family!r}")

    @property
    def name(self) -> str:
        return f"{self.family}_{'mob' if self.mobility else 'nomob'}"

    @property
    def k(self) -> int:
        """Number of free parameters."""
        return 1 + int(self.mobility) + int(self.family == "negbin")

    @classmethod
    def parse(cls, name: str) -> "ModelVariant":
        family, _, mob = name.partition("_")
        if mob not in ("mob", "nomob"):
            raise ValueError(f"bad model name {name!r}")
        return cls(family, mob == "mob")


POISSON = ModelVariant("poisson", True)
POISSON_NOMOB = ModelVariant("poisson", False)
NEGBIN = ModelVariant("negbin", True)
NEGBIN_NOMOB = ModelVariant("negbin", False)
VARIANTS = (POISSON, POISSON_NOMOB, NEGBIN, NEGBIN_NOMOB)


@dataclass(frozen=True)
class Covariates:
    """Cross-section of regions for one day.

    ``mobility_total`` and ``population_total`` are carried along for the
    derived local-contact fraction.
    """

    x_loc: np.ndarray
    x_mob: np.ndarray
    y: np.ndarray
    date: dt.date | None = None
    mobility_total: float = 0.0
    population_total: float = 1.0

    def __post_init__(self):
        x_loc = np.asarray(self.x_loc, dtype=float)
        x_mob = np.asarray(self.x_mob, dtype=float)
        y = np.asarray(self.y)
        if not (x_loc.shape == x_mob.shape == y.shape) or x_loc.ndim != 1:
            raise ValueError("covariates and observations must be 1-d arrays of equal length")
        if (x_loc < 0).any() or (x_mob < 0).any():
            raise ValueError("covariates must be nonnegative")
        if (y < 0).any() or not np.all(y == np.round(y)):
            raise ValueError("observations must be nonnegative integers")
        for name, arr in (("x_loc", x_loc), ("x_mob", x_mob), ("y", y.astype(float))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.y)

    def with_y(self, y) -> "Covariates":
        return replace(self, y=y)

    def design(self, mobility: bool) -> np.ndarray:
        cols = [self.x_loc, self.x_mob] if mobility else [self.x_loc]
        return np.column_stack(cols)

    @property
    def key(self) -> str:
        h = hashlib.sha1()
        for arr in (self.x_loc, self.x_mob, self.y):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def build_covariates(state: RegionalState, next_state: RegionalState, mobility: MobilityMatrix) -> Covariates:
    """Covariates at ``state.date`` and the observed S decrease to the next day."""
    if (next_state.date - state.date).days != 1:
        raise ValueError(f"states must be on consecutive days, got {state.date} and {next_state.date}")
    x_loc, x_mob = transmission_covariates(state, mobility)
    y = np.round(np.maximum(0.0, state.S - next_state.S))
    return Covariates(
        x_loc, x_mob, y, state.date,
        mobility_total=mobility.total,
        population_total=float(state.population.sum()),
    )


# --------------------------------------------------------------------------- likelihoods


def _poisson_terms(lam, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        log_lam = np.where(y > 0, np.log(lam), 0.0)
    return y * log_lam - lam - gammaln(y + 1)


_ASYMPTOTIC_FROM = 100.0


def _stirling_remainder(x):
    """``lgamma(x) - [(x - 1/2) log x - x + log(2 pi) / 2]`` for ``x >= 100``."""
    x2 = x * x
    return (1.0 / 12 - (1.0 / 360 - (1.0 / 1260 - 1.0 / (1680 * x2)) / x2) / x2) / x


def _chi(x):
    """``digamma(x) - log(x)`` without cancellation at large ``x``."""
    x = np.asarray(x, dtype=float)
    big = x >= _ASYMPTOTIC_FROM
    xb = np.where(big, x, _ASYMPTOTIC_FROM)
    x2 = xb * xb
    series = -0.5 / xb - (1.0 / 12 - (1.0 / 120 - 1.0 / (252 * x2)) / x2) / x2
    xs = np.where(big, 1.0, x)
    return np.where(big, series, digamma(xs) - np.log(xs))


def _tau(x):
    """``trigamma(x) - 1/x`` without cancellation at large ``x``."""
    x = np.asarray(x, dtype=float)
    big = x >= _ASYMPTOTIC_FROM
    xb = np.where(big, x, _ASYMPTOTIC_FROM)
    x2 = xb * xb
    series = (0.5 + (1.0 / 6 - (1.0 / 30 - 1.0 / (42 * x2)) / x2) / xb) / x2
    xs = np.where(big, 1.0, x)
    return np.where(big, series, polygamma(1, xs) - 1.0 / xs)


def _log_rising_excess(r, y):
    """``lgamma(r + y) - lgamma(r) - y log r``, stable for large ``r``."""
    if r >= _ASYMPTOTIC_FROM:
        return (r + y - 0.5) * np.log1p(y / r) - y + _stirling_remainder(r + y) - _stirling_remainder(r)
    return gammaln(r + y) - gammaln(r) - y * math.log(r)


def _negbin_terms(lam, y, r):
    # lgamma(r+y) - lgamma(r) - lgamma(y+1) + y log(lam) - y log(r+lam) - r log(1+lam/r),
    # regrouped so that no O(r) quantities cancel.
    with np.errstate(divide="ignore", invalid="ignore"):
        log_lam = np.where(y > 0, np.log(lam), 0.0)
    return _log_rising_excess(r, y) - (y + r) * np.log1p(lam / r) + y * log_lam - gammaln(y + 1)


def loglik_poisson(beta_loc: float, beta_mob: float, cov: Covariates) -> float:
    lam = beta_loc * cov.x_loc + beta_mob * cov.x_mob
    if np.any((lam <= 0) & (cov.y > 0)):
        return -math.inf
    return float(_poisson_terms(lam, cov.y).sum())


def loglik_negbin(beta_loc: float, beta_mob: float, r: float, cov: Covariates) -> float:
    """Negative-binomial log-likelihood with mean ``lambda`` and dispersion ``r``
    (variance ``lambda * (1 + lambda / r)``)."""
    if not r > 0:
        raise ValueError("dispersion must be positive")
    lam = beta_loc * cov.x_loc + beta_mob * cov.x_mob
    if np.any((lam <= 0) & (cov.y > 0)):
        return -math.inf
    return float(_negbin_terms(lam, cov.y, r).sum())


def loglik(variant: ModelVariant, beta_loc: float, beta_mob: float, r: float | None, cov: Covariates) -> float:
    if not variant.mobility:
        beta_mob = 0.0
    if variant.family == "poisson":
        return loglik_poisson(beta_loc, beta_mob, cov)
    return loglik_negbin(beta_loc, beta_mob, r, cov)


# --------------------------------------------------------------------------- optimizer


class _Objective:
    """Log-likelihood with gradient and Hessian in ``theta = (betas..., log r)``."""

    def __init__(self, X: np.ndarray, y: np.ndarray, negbin: bool):
        self.X, self.y, self.negbin = X, y, negbin
        self.p = X.shape[1]
        self.lower = np.r_[np.zeros(self.p), [_LOG_R_MIN] if negbin else []]
        self.upper = np.r_[np.full(self.p, np.inf), [_LOG_R_MAX] if negbin else []]

    def value(self, theta) -> float:
        lam = self.X @ theta[: self.p]
        if np.any((lam <= 0) & (self.y > 0)):
            return -math.inf
        if self.negbin:
            return float(_negbin_terms(lam, self.y, math.exp(theta[-1])).sum())
        return float(_poisson_terms(lam, self.y).sum())

    def derivatives(self, theta):
        X, y = self.X, self.y
        lam = X @ theta[: self.p]
        with np.errstate(divide="ignore", invalid="ignore"):
            y_over = np.where(y > 0, y / lam, 0.0)
            y_over2 = np.where(y > 0, y / lam ** 2, 0.0)
        if not self.negbin:
            d1 = y_over - 1.0
            d2 = -y_over2
            return X.T @ d1, (X * d2[:, None]).T @ X
        r = math.exp(theta[-1])
        rl = r + lam
        d1 = y_over - (y + r) / rl
        d2 = -y_over2 + (y + r) / rl ** 2
        z = (y - lam) / rl
        d_r = _chi(r + y) - _chi(r) + np.log1p(z) - z
        d_rr = (lam - y) ** 2 / (rl ** 2 * (r + y)) + _tau(r + y) - _tau(r)
        d_lr = (y - lam) / rl ** 2
        n = self.p + 1
        g = np.empty(n)
        H = np.empty((n, n))
        g[: self.p] = X.T @ d1
        g[-1] = r * d_r.sum()
        H[: self.p, : self.p] = (X * d2[:, None]).T @ X
        H[: self.p, -1] = H[-1, : self.p] = r * (X.T @ d_lr)
        H[-1, -1] = r * r * d_rr.sum() + g[-1]
        return g, H


def _ascent_direction(g, H):
    """Newton direction for maximization, with eigenvalues forced negative."""
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    scale = max(np.abs(w).max(), 1e-300)
    w = -np.maximum(np.abs(w), 1e-10 * scale)
    return -V @ ((V.T @ g) / w)


def _maximize(obj: _Objective, theta0, max_iter: int = 500):
    """Projected Newton ascent on a box.

    Stops when the projected gradient's inf-norm falls below 1e-8, or when
    the Newton decrement (predicted gain) falls below 1e-12 relative to the
    objective, in which case the final step is still taken.
    """
    theta = np.clip(np.asarray(theta0, dtype=float), obj.lower, obj.upper)
    f = obj.value(theta)
    if not math.isfinite(f):
        raise DegenerateDesign("starting point has zero likelihood")
    for _ in range(max_iter):
        g, H = obj.derivatives(theta)
        at_low = (theta <= obj.lower) & (g <= 0)
        at_high = (theta >= obj.upper) & (g >= 0)
        free = ~(at_low | at_high)
        pg = np.where(free, g, 0.0)
        if np.abs(pg).max(initial=0.0) < 1e-8:
            return theta, f
        d = np.zeros_like(theta)
        d[free] = _ascent_direction(g[free], H[np.ix_(free, free)])
        decrement = 0.5 * float(g[free] @ d[free])
        last = decrement < 1e-12 * (1.0 + abs(f))
        step = 1.0
        while True:
            cand = np.clip(theta + step * d, obj.lower, obj.upper)
            fc = obj.value(cand)
            if fc >= f + 1e-4 * float(g @ (cand - theta)) or (last and fc >= f - 1e-12 * (1 + abs(f))):
                break
            step *= 0.5
            if step < 1e-20:
                if np.abs(pg).max() <= 1e-6 * (1.0 + abs(f)):
                    return theta, f
                raise NonConvergence("line search failed before reaching stationarity")
        theta, f = cand, fc
        if last:
            return theta, f
    raise NonConvergence(f"no convergence in {max_iter} Newton iterations")


def _starting_betas(X, y) -> np.ndarray:
    # Scale-equivariant in each column so that rescaling a covariate
    # rescales the whole optimization path.
    sums = X.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(sums > 0, y.sum() / (X.shape[1] * sums), 0.0)
    if not (b > 0).any():
        b = np.where(sums > 0, 1.0 / np.where(sums > 0, sums, 1.0), 0.0)
    return b


# --------------------------------------------------------------------------- records


def percentile_interval(samples, level: float = 0.95, axis: int = 0) -> np.ndarray:
    """Equal-tailed percentile interval ``[lo, hi]`` along ``axis``.

    Quantiles use the ``(B + 1) p`` plotting position, which gives
    nominal coverage for a pivotal statistic even with B = 100 replicas;
    linear interpolation on ``(B - 1) p`` covers about 93% at that size.
    """
    tail = 100 * (1 - level) / 2
    return np.percentile(samples, [tail, 100 - tail], axis=axis, method="weibull")



@dataclass(frozen=True)
class EstimateRecord:
    date: dt.date | None
    model: ModelVariant
    beta_loc: float
    beta_mob: float
    r: float | None
    loglik: float
    n_obs: int
    data_key: str
    p_local: float = 1.0
    eps_c: float = 0.0
    derived_flag: str = ""
    replicas: np.ndarray = field(default_factory=lambda: np.empty((0, 3)), repr=False)
    dropped_replicas: int = 0

    @property
    def k(self) -> int:
        return self.model.k

    @property
    def aic(self) -> float:
        return aic(self)

    @property
    def ci95(self) -> dict[str, tuple[float, float]]:
        if len(self.replicas) == 0:
            return {}
        lo, hi = percentile_interval(self.replicas)
        out = {"beta_loc": (lo[0], hi[0]), "beta_mob": (lo[1], hi[1])}
        if self.model.family == "negbin":
            out["r"] = (lo[2], hi[2])
        return out


def derived_params(beta_loc: float, beta_mob: float, mobility_total: float, population: float):
    """Fraction of local contacts ``p`` and ``eps*c = beta_loc / p``.

    Returns ``(p, eps_c, flag)``; ``flag`` is ``"degenerate"`` when both
    rates vanish (reported as p=1, eps_c=0). Raises
    ``UndefinedDerivedParams`` if only the mobility rate is positive.
    """
    if beta_loc < 0 or beta_mob < 0:
        raise ValueError("transmission rates must be nonnegative")
    if beta_loc == 0 and beta_mob == 0:
        return 1.0, 0.0, "degenerate"
    if beta_mob == 0:
        return 1.0, float(beta_loc), ""
    if beta_loc == 0:
        if mobility_total > 0:
            raise UndefinedDerivedParams("p is 0 when only the mobility rate is positive; eps*c undefined")
        return 1.0, 0.0, "degenerate"
    num = population * beta_loc
    p = num / (2.0 * beta_mob * mobility_total + num)
    return p, beta_loc / p, ""


def fit(cov: Covariates, variant: ModelVariant = NEGBIN, _start=None) -> EstimateRecord:
    """Maximum-likelihood rates for one day's cross-section.

    Regions where every covariate of the model is zero carry no information
    on the rates and are left out of the optimization; if such a region has
    a positive observation the reported log-likelihood is ``-inf``.
    """
    X_all = cov.design(variant.mobility)
    y_all = cov.y
    usable = X_all.sum(axis=1) > 0
    if not usable.any():
        raise DegenerateDesign("all covariates are zero")
    X, y = X_all[usable], y_all[usable]
    negbin = variant.family == "negbin"
    impossible = int(((~usable) & (y_all > 0)).sum())
    if impossible:
        warnings.warn(
            f"{impossible} region(s) with positive exposures but no infectious contact under {variant.name}; "
            "log-likelihood is -inf",
            DataWarning,
        )

    if not y.any():
        betas = np.zeros(X.shape[1])
        r = R_MAX if negbin else None
        ll = 0.0
    else:
        pois = _Objective(X, y, negbin=False)
        b0 = _starting_betas(X, y) if _start is None else np.asarray(_start[0], float)
        betas, ll = _maximize(pois, b0)
        r = None
        if negbin:
            lam = X @ betas
            excess = float(((y - lam) ** 2 - y).sum())
            r0 = float((lam ** 2).sum()) / excess if excess > 0 else R_MAX
            if _start is not None and _start[1] is not None:
                r0 = _start[1]
            nb = _Objective(X, y, negbin=True)
            theta, ll = _maximize(nb, np.r_[betas, math.log(min(max(r0, R_MIN), R_MAX))])
            betas, r = theta[:-1], min(max(math.exp(theta[-1]), R_MIN), R_MAX)
    if impossible:
        ll = -math.inf
    beta_loc = float(betas[0])
    beta_mob = float(betas[1]) if variant.mobility else 0.0
    try:
        p, eps_c, flag = derived_params(beta_loc, beta_mob, cov.mobility_total, cov.population_total)
    except UndefinedDerivedParams:
        p, eps_c, flag = 0.0, math.nan, "undefined"
    return EstimateRecord(
        cov.date, variant, beta_loc, beta_mob, r, ll, len(cov), cov.key,
        p_local=p, eps_c=eps_c, derived_flag=flag,
    )


# --------------------------------------------------------------------------- bootstrap


def _model_code(variant: ModelVariant) -> int:
    return VARIANTS.index(variant)


def replica_rng(seed: int, date: dt.date | None, variant: ModelVariant, index: int) -> np.random.Generator:
    ordinal = date.toordinal() if date is not None else 0
    return np.random.default_rng(np.random.SeedSequence([seed, ordinal, _model_code(variant), index]))


def sample_observations(rng, lam, r: float | None) -> np.ndarray:
    """Draw counts with mean ``lam``: negative binomial if ``r`` is given, else Poisson."""
    lam = np.asarray(lam, dtype=float)
    if r is None:
        return rng.poisson(lam)
    return rng.negative_binomial(r, r / (r + lam))


def bootstrap(record: EstimateRecord, cov: Covariates, B: int = 100, seed: int = 0) -> EstimateRecord:
    """Parametric bootstrap: resample observations from the fitted model and refit.

    Replicas whose refit fails are dropped with a warning; more than 10%
    dropped raises the last failure.
    """
    if B < 1:
        raise ValueError("need at least one bootstrap replica")
    if record.data_key != cov.key:
        raise MismatchedData("record was not fitted on these covariates")
    lam = record.beta_loc * cov.x_loc + record.beta_mob * cov.x_mob
    reps, dropped, last_err = [], 0, None
    start = ((record.beta_loc, record.beta_mob)[: 1 + int(record.model.mobility)], record.r)
    for b in range(B):
        rng = replica_rng(seed, record.date, record.model, b)
        y = sample_observations(rng, lam, record.r if record.model.family == "negbin" else None)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DataWarning)
                rep = fit(cov.with_y(y), record.model, _start=start)
        except (NonConvergence, DegenerateDesign) as exc:
            dropped += 1
            last_err = exc
            continue
        reps.append((rep.beta_loc, rep.beta_mob, rep.r if rep.r is not None else math.nan))
    if dropped:
        warnings.warn(f"{dropped} of {B} bootstrap replicas failed and were dropped", DataWarning)
        if dropped > 0.1 * B:
            raise last_err
    return replace(record, replicas=np.array(reps, dtype=float).reshape(-1, 3), dropped_replicas=dropped)


def derived_intervals(record: EstimateRecord, cov: Covariates) -> dict[str, tuple[float, float]]:
    """Percentile intervals of p and eps*c over the bootstrap replicas."""
    ps, ecs = [], []
    for bl, bm, _ in record.replicas:
        try:
            p, ec, _ = derived_params(bl, bm, cov.mobility_total, cov.population_total)
        except UndefinedDerivedParams:
            p, ec = 0.0, math.nan
        ps.append(p)
        ecs.append(ec)
    out = {"p_local": tuple(percentile_interval(np.array(ps)))}
    ecs = np.array(ecs)
    if np.isfinite(ecs).any():
        out["eps_c"] = tuple(percentile_interval(ecs[np.isfinite(ecs)]))
    return out


# --------------------------------------------------------------------------- model comparison


def aic(record: EstimateRecord) -> float:
    return 2.0 * record.k - 2.0 * record.loglik


def compare_aic(with_mobility: EstimateRecord, without_mobility: EstimateRecord) -> float:
    """``AIC(without) - AIC(with)``; above 10 strongly favours the mobility model."""
    if with_mobility.data_key != without_mobility.data_key or with_mobility.date != without_mobility.date:
        raise MismatchedData("records were fitted on different data")
    return aic(without_mobility) - aic(with_mobility)
