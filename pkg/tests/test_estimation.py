import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from metaseir.errors import DataWarning, DegenerateDesign, MismatchedData, UndefinedDerivedParams
from metaseir.estimation import (
    AIC_STRONG,
    NEGBIN,
    NEGBIN_NOMOB,
    POISSON,
    POISSON_NOMOB,
    R_MAX,
    Covariates,
    EstimateRecord,
    ModelVariant,
    aic,
    bootstrap,
    build_covariates,
    compare_aic,
    derived_intervals,
    derived_params,
    fit,
    loglik,
    loglik_negbin,
    loglik_poisson,
    replica_rng,
)
from metaseir.ingest import MobilityMatrix
from metaseir.state import EpidemicParams
from metaseir.dynamics import step
from metaseir.synthetic import gravity_mobility, random_regions, random_state

DAY0 = dt.date(2020, 9, 1)


def one(y, lam):
    return Covariates([lam], [0.0], [y])


def synthetic(seed, n=200, beta_loc=0.3, beta_mob=0.1, r=10.0, scale=100.0):
    rng = np.random.default_rng(seed)
    x_loc = rng.lognormal(np.log(scale), 0.8, n)
    x_mob = x_loc * rng.lognormal(np.log(0.5), 0.8, n)
    lam = beta_loc * x_loc + beta_mob * x_mob
    y = rng.poisson(lam) if r is None else rng.negative_binomial(r, r / (r + lam))
    return Covariates(x_loc, x_mob, y, DAY0, mobility_total=5e4, population_total=1e6)


def test_poisson_examples():
    assert loglik_poisson(2.0, 0.0, one(0, 1.0)) == pytest.approx(-2.0, rel=1e-14)
    assert loglik_poisson(3.0, 0.0, one(3, 1.0)) == pytest.approx(3 * math.log(3) - 3 - math.log(6), rel=1e-14)
    assert loglik_poisson(0.0, 0.0, one(1, 1.0)) == -math.inf


def test_negbin_examples():
    assert loglik_negbin(1.0, 0.0, 1.0, one(2, 1.0)) == pytest.approx(math.log(1 / 8), rel=1e-14)
    assert loglik_negbin(0.0, 0.0, 2.0, one(1, 1.0)) == -math.inf
    cov = Covariates([1.0, 2.0, 5.0], [0.5, 0.0, 1.0], [0, 0, 0])
    lam = 0.4 * cov.x_loc + 0.2 * cov.x_mob
    expected = sum(-3.0 * math.log(1 + v / 3.0) for v in lam)
    assert loglik_negbin(0.4, 0.2, 3.0, cov) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        loglik_negbin(1.0, 0.0, 0.0, cov)


@settings(max_examples=80)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e5), st.floats(0.01, 2.0))
def test_likelihoods_match_reference_pmfs(seed, r, beta):
    cov = synthetic(seed, n=15, r=5.0, scale=30.0)
    lam = beta * cov.x_loc + 0.5 * beta * cov.x_mob
    pois = stats.poisson.logpmf(cov.y, lam).sum()
    nb = stats.nbinom.logpmf(cov.y, r, r / (r + lam)).sum()
    assert loglik_poisson(beta, 0.5 * beta, cov) == pytest.approx(pois, rel=1e-10)
    assert loglik_negbin(beta, 0.5 * beta, r, cov) == pytest.approx(nb, rel=1e-9)


def test_negbin_poisson_limit():
    cov = synthetic(1, n=10, r=None)
    assert abs(loglik_negbin(0.3, 0.1, 1e8, cov) - loglik_poisson(0.3, 0.1, cov)) < 1e-4


def test_loglik_dispatch_drops_mobility():
    cov = synthetic(2, n=20)
    assert loglik(NEGBIN_NOMOB, 0.3, 5.0, 8.0, cov) == loglik_negbin(0.3, 0.0, 8.0, cov)
    assert loglik(POISSON, 0.3, 0.1, None, cov) == loglik_poisson(0.3, 0.1, cov)


def _fd_grad(f, x, h):
    g = np.zeros(len(x))
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = h[k]
        g[k] = (f(x + e) - f(x - e)) / (2 * h[k])
    return g


@pytest.mark.parametrize("variant", [NEGBIN, NEGBIN_NOMOB, POISSON, POISSON_NOMOB])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fit_is_stationary(variant, seed):
    cov = synthetic(seed)
    rec = fit(cov, variant)
    if variant.family == "negbin":
        x = np.array([rec.beta_loc, rec.beta_mob, math.log(rec.r)])
        f = lambda t: loglik_negbin(t[0], t[1], math.exp(t[2]), cov)
    else:
        x = np.array([rec.beta_loc, rec.beta_mob])
        f = lambda t: loglik_poisson(t[0], t[1], cov)
    if not variant.mobility:
        x = np.delete(x, 1)
        g = lambda t: f(np.insert(t, 1, 0.0))
    else:
        g = f
    grad = _fd_grad(g, x, 1e-6 * np.maximum(np.abs(x), 1e-3))
    assert np.max(np.abs(grad)) < 1e-6 * (1 + abs(rec.loglik))
    assert rec.loglik == pytest.approx(g(x), rel=1e-12)


def test_fit_recovers_truth_on_large_sample():
    rec = fit(synthetic(5, n=5000), NEGBIN)
    assert rec.beta_loc == pytest.approx(0.3, rel=0.05)
    assert rec.beta_mob == pytest.approx(0.1, rel=0.15)
    assert rec.r == pytest.approx(10.0, rel=0.2)


def test_fit_all_zero_observations():
    cov = Covariates([1.0, 2.0], [1.0, 3.0], [0, 0])
    for variant in (NEGBIN, POISSON):
        rec = fit(cov, variant)
        assert rec.beta_loc == 0 and rec.beta_mob == 0 and rec.loglik == 0
        assert rec.derived_flag == "degenerate" and rec.p_local == 1 and rec.eps_c == 0


def test_fit_degenerate_design():
    with pytest.raises(DegenerateDesign):
        fit(Covariates([0.0, 0.0], [0.0, 0.0], [1, 0]), NEGBIN)


def test_fit_unexplained_exposures():
    cov = Covariates([0.0, 2.0, 3.0], [0.0, 1.0, 1.0], [4, 1, 2])
    with pytest.warns(DataWarning):
        rec = fit(cov, POISSON)
    assert rec.loglik == -math.inf


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["poisson", "negbin"]))
def test_nesting(seed, family):
    cov = synthetic(seed, n=60)
    full = fit(cov, ModelVariant(family, True))
    reduced = fit(cov, ModelVariant(family, False))
    assert full.loglik >= reduced.loglik - 1e-9


def test_zero_mobility_covariate_matches_reduced_fit():
    cov = synthetic(3)
    cov = Covariates(cov.x_loc, np.zeros_like(cov.x_mob), cov.y, cov.date, 0.0, 1e6)
    full, reduced = fit(cov, NEGBIN), fit(cov, NEGBIN_NOMOB)
    assert full.beta_mob == 0
    assert full.beta_loc == pytest.approx(reduced.beta_loc, rel=1e-8)
    assert full.loglik == pytest.approx(reduced.loglik, rel=1e-12)


@pytest.mark.parametrize("s", [0.25, 3.0, 40.0])
def test_mobility_scaling_invariance(s):
    cov = synthetic(7)
    scaled = Covariates(cov.x_loc, s * cov.x_mob, cov.y, cov.date, s * cov.mobility_total, cov.population_total)
    a, b = fit(cov, NEGBIN), fit(scaled, NEGBIN)
    assert b.beta_mob == pytest.approx(a.beta_mob / s, rel=1e-6)
    assert b.beta_loc == pytest.approx(a.beta_loc, rel=1e-6)
    assert b.p_local == pytest.approx(a.p_local, rel=1e-6)


def test_negbin_approaches_poisson_fit():
    cov = synthetic(4, r=None)
    cov = cov.with_y(np.round(0.3 * cov.x_loc + 0.1 * cov.x_mob))
    nb, pois = fit(cov, NEGBIN), fit(cov, POISSON)
    assert nb.r == R_MAX
    assert nb.beta_loc == pytest.approx(pois.beta_loc, rel=1e-3)
    assert nb.beta_mob == pytest.approx(pois.beta_mob, rel=1e-3)


def test_build_covariates_from_states():
    rng = np.random.default_rng(0)
    regions = random_regions(10, rng)
    s0 = random_state(regions, rng)
    M = gravity_mobility(regions, rng)
    s1 = step(s0, EpidemicParams(3, 9, 0.5, 0.3, 0.1), M)
    cov = build_covariates(s0, s1, M)
    np.testing.assert_array_equal(cov.y, np.round(s0.S - s1.S))
    assert cov.mobility_total == M.total and cov.population_total == regions.total_population
    with pytest.raises(ValueError):
        build_covariates(s0, s0, M)


@pytest.mark.parametrize("x_loc, x_mob, y", [
    ([-1.0], [0.0], [0]),
    ([1.0], [0.0], [1.5]),
    ([1.0], [0.0], [-1]),
    ([1.0, 2.0], [0.0], [1, 1]),
])
def test_covariate_validation(x_loc, x_mob, y):
    with pytest.raises(ValueError):
        Covariates(x_loc, x_mob, y)


# --------------------------------------------------------------------------- derived quantities


def test_derived_params_examples():
    assert derived_params(0.3, 0.0, 100.0, 1000.0) == (1.0, 0.3, "")
    p, eps_c, flag = derived_params(0.3, 0.5, 100.0, 1000.0)
    assert p == pytest.approx(0.75) and eps_c == pytest.approx(0.4) and flag == ""
    assert derived_params(0.0, 0.0, 100.0, 1000.0) == (1.0, 0.0, "degenerate")
    with pytest.raises(UndefinedDerivedParams):
        derived_params(0.0, 0.5, 100.0, 1000.0)


def test_undefined_derived_params_flagged_in_fit():
    # local contact only where nothing happened, so the local rate sits on its bound
    x_loc = np.r_[np.ones(5), np.zeros(25)]
    x_mob = np.r_[np.zeros(5), np.linspace(1, 20, 25)]
    y = np.r_[np.zeros(5), np.round(0.5 * x_mob[5:])]
    rec = fit(Covariates(x_loc, x_mob, y, mobility_total=10.0, population_total=100.0), POISSON)
    assert rec.beta_loc == 0 and rec.beta_mob > 0
    assert rec.derived_flag == "undefined" and math.isnan(rec.eps_c) and rec.p_local == 0


def _record(ll, variant, key="k"):
    return EstimateRecord(DAY0, variant, 0.1, 0.1, 1.0, ll, 10, key)


def test_aic_examples():
    assert aic(_record(-100.0, NEGBIN)) == 206.0
    assert compare_aic(_record(-50.0, NEGBIN), _record(-50.0, NEGBIN_NOMOB)) == -2.0
    diff = compare_aic(_record(-100.0, NEGBIN), _record(-110.0, NEGBIN_NOMOB))
    assert diff == 18.0 and diff > AIC_STRONG
    assert [v.k for v in (NEGBIN, NEGBIN_NOMOB, POISSON, POISSON_NOMOB)] == [3, 2, 2, 1]
    with pytest.raises(MismatchedData):
        compare_aic(_record(-1.0, NEGBIN, "a"), _record(-1.0, NEGBIN_NOMOB, "b"))


def test_aic_rarely_strong_without_mobility_effect():
    diffs = []
    for seed in range(20):
        cov = synthetic(100 + seed, beta_mob=0.0)
        diffs.append(compare_aic(fit(cov, NEGBIN), fit(cov, NEGBIN_NOMOB)))
    assert np.median(diffs) < AIC_STRONG


# --------------------------------------------------------------------------- bootstrap


def test_bootstrap_shape_and_determinism():
    cov = synthetic(8, n=80)
    rec = fit(cov, NEGBIN)
    a, b = bootstrap(rec, cov, 100, seed=3), bootstrap(rec, cov, 100, seed=3)
    assert a.replicas.shape == (100, 3)
    assert a.replicas.tobytes() == b.replicas.tobytes()
    assert not np.array_equal(a.replicas, bootstrap(rec, cov, 100, seed=4).replicas)
    lo, hi = a.ci95["beta_loc"]
    assert lo <= hi and set(a.ci95) == {"beta_loc", "beta_mob", "r"}
    di = derived_intervals(a, cov)
    assert 0 <= di["p_local"][0] <= di["p_local"][1] <= 1


def test_bootstrap_poisson_has_no_dispersion():
    cov = synthetic(9, n=50, r=None)
    rec = bootstrap(fit(cov, POISSON_NOMOB), cov, 20, seed=0)
    assert np.isnan(rec.replicas[:, 2]).all() and (rec.replicas[:, 1] == 0).all()
    assert set(rec.ci95) == {"beta_loc", "beta_mob"}


def test_bootstrap_all_zero_data():
    cov = Covariates([1.0, 2.0, 3.0], [1.0, 1.0, 0.0], [0, 0, 0], DAY0)
    rec = bootstrap(fit(cov, NEGBIN), cov, 100, seed=0)
    assert rec.ci95["beta_loc"] == (0.0, 0.0) and rec.ci95["beta_mob"] == (0.0, 0.0)


def test_bootstrap_rejects_foreign_data():
    a, b = synthetic(10, n=30), synthetic(11, n=30)
    with pytest.raises(MismatchedData):
        bootstrap(fit(a, NEGBIN), b, 5)
    with pytest.raises(ValueError):
        bootstrap(fit(a, NEGBIN), a, 0)


def test_replica_streams_are_independent_of_order():
    draws = [replica_rng(1, DAY0, NEGBIN, b).random() for b in range(5)]
    assert draws[3] == replica_rng(1, DAY0, NEGBIN, 3).random()
    assert replica_rng(1, DAY0, NEGBIN, 0).random() != replica_rng(1, DAY0, NEGBIN_NOMOB, 0).random()
    assert replica_rng(1, DAY0, NEGBIN, 0).random() != replica_rng(1, DAY0 + dt.timedelta(1), NEGBIN, 0).random()


def test_variant_names_round_trip():
    for v in (NEGBIN, NEGBIN_NOMOB, POISSON, POISSON_NOMOB):
        assert ModelVariant.parse(v.name) == v
    with pytest.raises(ValueError):
        ModelVariant.parse("gaussian_mob")
