"""Command-line entry point: ``metaseir <subcommand> --config run.toml [overrides]``."""
from __future__ import annotations

import argparse
import datetime as dt
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import outputs
from .config import RunConfig, load_config, thread_cap
from .dynamics import (
    SimulationConfig,
    effective_reproduction_number,
    first_of_month_dates,
    next_generation_matrix,
    simulate,
)
from .errors import ConfigError, MetaseirError, ParseError
from .estimation import (
    AIC_STRONG,
    EstimateRecord,
    ModelVariant,
    bootstrap,
    build_covariates,
    compare_aic,
    fit,
)
from .forecast import (
    actual_totals,
    compare_models,
    delay_scan,
    evaluate,
    make_forecast,
    national_validation_init,
)
from .ingest import (
    CaseSeries,
    MobilitySchedule,
    PrevalenceSeries,
    RegionTable,
    load_cases,
    load_mobility_baseline,
    load_prevalence,
    load_reductions,
    load_regions,
)
from .state import DAY, LOOKAHEAD_DAYS, EpidemicParams, initialize_state, tested_fraction

SUBCOMMANDS = ("init-state", "estimate", "simulate", "forecast", "validate", "eval", "compare")


@dataclass(frozen=True)
class Inputs:
    regions: RegionTable
    cases: CaseSeries
    prevalence: PrevalenceSeries
    mobility: MobilitySchedule


def load_inputs(cfg: RunConfig) -> Inputs:
    cfg.require("regions", "cases", "mobility", "prevalence")
    regions = load_regions(cfg.regions)
    baseline = load_mobility_baseline(cfg.mobility, regions)
    reductions = None
    if cfg.reductions is not None:
        cfg.require("reductions")
        reductions = load_reductions(cfg.reductions)
    return Inputs(
        regions,
        load_cases(cfg.cases, regions),
        load_prevalence(cfg.prevalence),
        MobilitySchedule(baseline, reductions, regions),
    )


def _days(start: dt.date, end: dt.date) -> list[dt.date]:
    return [start + k * DAY for k in range((end - start).days + 1)]


def _variant(cfg: RunConfig) -> ModelVariant:
    return ModelVariant(cfg.model, cfg.use_mobility)


def _load_estimates(cfg: RunConfig, required: bool = True):
    path = cfg.out / "estimates.csv"
    if not path.exists():
        if required:
            raise ConfigError(f"{path} not found; run the estimate subcommand first")
        return None
    return outputs.read_estimates(path, cfg.out / "replicas.csv")


def _records_for(estimates, variant: ModelVariant) -> dict[dt.date, EstimateRecord]:
    if estimates is None or variant.name not in estimates:
        raise ConfigError(f"no {variant.name} estimates available")
    return estimates[variant.name]


# --------------------------------------------------------------------------- subcommands


def cmd_init_state(cfg: RunConfig, inp: Inputs) -> list[Path]:
    states = [
        initialize_state(inp.cases, inp.prevalence, inp.regions, d, cfg.nu, cfg.omega)
        for d in _days(cfg.start, cfg.end)
    ]
    return [outputs.write_csv(cfg.out / "state.csv", outputs.STATE_HEADER, outputs.state_rows(states))]


def estimate_day(inp: Inputs, day: dt.date, cfg: RunConfig) -> list[EstimateRecord]:
    """Fit the with- and without-mobility variants on ``day`` and bootstrap both.

    Both initialized states use the tested fraction of ``day`` so that a
    change of ``a`` between days is not mistaken for new exposures.
    """
    a = tested_fraction(inp.cases, inp.prevalence, day, cfg.omega)
    s0 = initialize_state(inp.cases, None, inp.regions, day, cfg.nu, cfg.omega, a=a)
    s1 = initialize_state(inp.cases, None, inp.regions, day + DAY, cfg.nu, cfg.omega, a=a)
    cov = build_covariates(s0, s1, inp.mobility(day))
    out = []
    for mob in (True, False):
        rec = fit(cov, ModelVariant(cfg.model, mob))
        out.append(bootstrap(rec, cov, cfg.bootstrap, cfg.seed))
    return out


def _estimate_day_task(args):
    inp, day, cfg = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return estimate_day(inp, day, cfg)


def cmd_estimate(cfg: RunConfig, inp: Inputs) -> list[Path]:
    days = _days(cfg.start, cfg.end)
    workers = min(thread_cap(), len(days))
    tasks = [(inp, d, cfg) for d in days]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_day = list(pool.map(_estimate_day_task, tasks))
    else:
        per_day = [estimate_day(inp, d, cfg) for d in days]
    records = [r for day_records in per_day for r in day_records]
    return [
        outputs.write_csv(cfg.out / "estimates.csv", outputs.ESTIMATES_HEADER, outputs.estimate_rows(records)),
        outputs.write_csv(cfg.out / "replicas.csv", outputs.REPLICAS_HEADER, outputs.replica_rows(records)),
    ]


def _daily_params(cfg: RunConfig, inp: Inputs, days, records) -> list[EpidemicParams]:
    params = []
    for d in days:
        a = tested_fraction(inp.cases, inp.prevalence, d, cfg.omega)
        if records is not None and d in records:
            bl, bm = records[d].beta_loc, records[d].beta_mob
        elif cfg.beta_loc is not None:
            bl, bm = cfg.beta_loc, cfg.beta_mob or 0.0
        else:
            raise ConfigError(f"no transmission rates for {d}: run estimate or set beta_loc/beta_mob")
        params.append(EpidemicParams(cfg.nu, cfg.omega, a, bl, bm if cfg.use_mobility else 0.0))
    return params


def _run_simulation(cfg: RunConfig, inp: Inputs, records):
    days = _days(cfg.start, cfg.end)
    params = _daily_params(cfg, inp, days, records)
    reinit = frozenset()
    if cfg.reinit_monthly:
        reinit = frozenset(
            d for d in first_of_month_dates(cfg.start, cfg.end)
            if d + LOOKAHEAD_DAYS * DAY <= inp.cases.end
        )
    state0 = initialize_state(inp.cases, None, inp.regions, cfg.start, cfg.nu, cfg.omega, a=params[0].a)
    config = SimulationConfig(len(days) - 1, params, inp.mobility, reinit)
    return simulate(state0, config, inp.cases, inp.regions), params


def cmd_simulate(cfg: RunConfig, inp: Inputs) -> list[Path]:
    estimates = _load_estimates(cfg, required=cfg.beta_loc is None)
    records = None if estimates is None else _records_for(estimates, _variant(cfg))
    traj, params = _run_simulation(cfg, inp, records)
    national = traj.national_reported()
    rows = []
    for k in range(len(national)):
        state = traj.states[k]
        K = next_generation_matrix(state, params[k], inp.mobility(state.date))
        rows.append((state.date, national[k], effective_reproduction_number(K)))
    return [
        outputs.write_csv(cfg.out / "trajectory.csv", outputs.TRAJECTORY_HEADER, outputs.trajectory_rows(traj)),
        outputs.write_csv(cfg.out / "national.csv", outputs.NATIONAL_HEADER, rows),
    ]


def _forecasts(cfg: RunConfig, inp: Inputs, records, variant: ModelVariant):
    return [
        make_forecast(inp.cases, inp.prevalence, inp.regions, inp.mobility, records, d,
                      variant, cfg.nu, cfg.omega)
        for d in _days(cfg.start, cfg.end)
    ]


def cmd_forecast(cfg: RunConfig, inp: Inputs) -> list[Path]:
    variant = _variant(cfg)
    records = _records_for(_load_estimates(cfg), variant)
    forecasts = _forecasts(cfg, inp, records, variant)
    return [outputs.write_csv(cfg.out / "forecast.csv", outputs.FORECAST_HEADER, outputs.forecast_rows(forecasts))]


def _check_regions(forecasts, inp: Inputs):
    for f in forecasts:
        if f.region_ids != inp.regions.ids:
            raise ParseError(f"forecast for {f.issue_date} does not list the configured regions in order")


def cmd_eval(cfg: RunConfig, inp: Inputs) -> list[Path]:
    path = cfg.out / "forecast.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found; run the forecast subcommand first")
    forecasts = outputs.read_forecasts(path, _variant(cfg).name)
    _check_regions(forecasts, inp)
    reports = [evaluate(f, actual_totals(inp.cases, f.issue_date)) for f in forecasts]
    return [outputs.write_csv(cfg.out / "metrics.csv", outputs.METRICS_HEADER, outputs.metrics_rows(reports))]


def _read_reference(path) -> dict[dt.date, float]:
    rows = outputs.read_csv(path, ("date", "value"))
    return {dt.date.fromisoformat(r["date"]): float(r["value"]) for r in rows}


def cmd_validate(cfg: RunConfig, inp: Inputs) -> list[Path]:
    days = _days(cfg.start, cfg.end)
    a_series = {d: tested_fraction(inp.cases, inp.prevalence, d, cfg.omega) for d in days}
    reported = inp.cases.window(cfg.start, cfg.end).sum(axis=1)
    init = national_validation_init(inp.cases, cfg.nu, a_series, days)
    series = {"reported": reported, "init": init}
    estimates = _load_estimates(cfg, required=False)
    if estimates is not None and _variant(cfg).name in estimates:
        records = estimates[_variant(cfg).name]
        traj, params = _run_simulation(cfg, inp, records)
        sim = np.r_[traj.national_reported(), math.nan]
        reff = [
            effective_reproduction_number(next_generation_matrix(s, p, inp.mobility(s.date)))
            for s, p in zip(traj.states, params)
        ]
        series["simulated"] = sim
        series["reff"] = np.array(reff)
    rows = [(d, method, values[k]) for k, d in enumerate(days) for method, values in series.items()]
    written = [outputs.write_csv(cfg.out / "validation.csv", outputs.VALIDATION_HEADER, rows)]

    if cfg.reference is not None:
        cfg.require("reference")
        ref = _read_reference(cfg.reference)
        if "reff" not in series:
            raise ConfigError("a reference series needs estimates to compute R_eff")
        a_ser = np.array([ref.get(d, math.nan) for d in days])
        b_ser = series["reff"]
        keep = np.isfinite(a_ser)
        a_ser, b_ser = a_ser[keep], b_ser[keep]
    else:
        a_ser, b_ser = init, reported
    max_shift = min(cfg.max_shift, len(a_ser) - 10)
    if max_shift < 0:
        warnings.warn("window too short for a delay scan; delay.csv not written")
        return written
    scan = delay_scan(a_ser, b_ser, max_shift)
    written.append(outputs.write_csv(cfg.out / "delay.csv", outputs.DELAY_HEADER, sorted(scan.correlations.items())))
    return written


def cmd_compare(cfg: RunConfig, inp: Inputs) -> list[Path]:
    with_v, without_v = ModelVariant(cfg.model, True), ModelVariant(cfg.model, False)
    estimates = _load_estimates(cfg, required=cfg.forecast_with is None or cfg.forecast_without is None)
    if cfg.forecast_with is not None and cfg.forecast_without is not None:
        cfg.require("forecast_with", "forecast_without")
        f_with = outputs.read_forecasts(cfg.forecast_with, with_v.name)
        f_without = outputs.read_forecasts(cfg.forecast_without, without_v.name)
        _check_regions(f_with + f_without, inp)
    else:
        f_with = _forecasts(cfg, inp, _records_for(estimates, with_v), with_v)
        f_without = _forecasts(cfg, inp, _records_for(estimates, without_v), without_v)
    rows = compare_models(f_with, f_without, lambda d: actual_totals(inp.cases, d))
    written = [outputs.write_csv(cfg.out / "comparison.csv", outputs.COMPARISON_HEADER, outputs.comparison_rows(rows))]
    if estimates is not None and with_v.name in estimates and without_v.name in estimates:
        aic_rows = []
        for d in sorted(estimates[with_v.name]):
            if d in estimates[without_v.name]:
                rw, rwo = estimates[with_v.name][d], estimates[without_v.name][d]
                diff = compare_aic(rw, rwo)
                aic_rows.append((d, with_v.name, without_v.name, rw.aic, rwo.aic, diff, diff > AIC_STRONG))
        written.append(outputs.write_csv(cfg.out / "aic.csv", outputs.AIC_HEADER, aic_rows))
    return written


COMMANDS = {
    "init-state": cmd_init_state,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "forecast": cmd_forecast,
    "validate": cmd_validate,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat TOML run configuration")
    common.add_argument("--from", dest="start", metavar="DATE", help="first date (ISO-8601)")
    common.add_argument("--to", dest="end", metavar="DATE", help="last date (ISO-8601)")
    common.add_argument("--model", choices=("poisson", "negbin"))
    common.add_argument("--no-mobility", dest="use_mobility", action="store_const", const=False,
                        help="use the variant without mobility-induced transmission")
    common.add_argument("--bootstrap", type=int, metavar="N", help="bootstrap replicas per day")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--out", metavar="DIR", help="output directory")
    parser = argparse.ArgumentParser(
        prog="metaseir",
        description="Estimate mobility-coupled SEIR transmission rates and forecast regional cases.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.config,
            start=args.start, end=args.end, model=args.model, use_mobility=args.use_mobility,
            bootstrap=args.bootstrap, seed=args.seed, out=args.out,
        ).validate()
        inputs = load_inputs(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            written = COMMANDS[args.command](cfg, inputs)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), 2)
    except MetaseirError as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except OSError as exc:
        return _fail("IoError", str(exc), 3)
    for path in written:
        print(path)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
