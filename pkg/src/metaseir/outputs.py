"""CSV writers and readers for pipeline outputs.

Floats are written with ``repr`` (shortest round-trip form) so identical
results give byte-identical files.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError
from .estimation import EstimateRecord, ModelVariant
from .forecast import ComparisonRow, EvaluationReport, Forecast
from .state import COMPARTMENTS, RegionalState

ESTIMATES_HEADER = (
    "date", "model", "beta_loc", "beta_mob", "r", "loglik", "aic",
    "beta_loc_lo", "beta_loc_hi", "beta_mob_lo", "beta_mob_hi", "p_local", "eps_c",
)
REPLICAS_HEADER = ("date", "model", "replica", "beta_loc", "beta_mob", "r")
STATE_HEADER = ("date", "region_id") + COMPARTMENTS
TRAJECTORY_HEADER = STATE_HEADER + ("new_reported",)
NATIONAL_HEADER = ("date", "total_new_reported", "R_eff")
FORECAST_HEADER = ("issue_date", "region_id", "point", "lo95", "hi95", "fraction")
METRICS_HEADER = ("issue_date", "model", "rmse", "spearman")
VALIDATION_HEADER = ("date", "method", "value")
DELAY_HEADER = ("shift", "correlation")
COMPARISON_HEADER = (
    "issue_date", "rmse_with", "rmse_without", "rmse_diff",
    "spearman_with", "spearman_without", "spearman_diff",
)
AIC_HEADER = ("date", "model_with", "model_without", "aic_with", "aic_without", "difference", "strong")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (dt.date, str)):
        return str(x)
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path, header: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise ParseError(f"{path}: expected header {','.join(header)}, got {reader.fieldnames}")
        return list(reader)


def _num(text: str) -> float | None:
    return None if text == "" else float(text)


# --------------------------------------------------------------------------- states


def state_rows(states: Iterable[RegionalState]):
    for s in states:
        arr = s.stacked()
        for i, rid in enumerate(s.region_ids):
            yield (s.date, rid, *arr[:, i])


def trajectory_rows(traj):
    n = len(traj.new_reported)
    for k, s in enumerate(traj.states):
        arr = s.stacked()
        for i, rid in enumerate(s.region_ids):
            rep = traj.new_reported[k, i] if k < n else None
            yield (s.date, rid, *arr[:, i], rep)


# --------------------------------------------------------------------------- estimates


def estimate_rows(records: Iterable[EstimateRecord]):
    for rec in records:
        ci = rec.ci95
        lo_l, hi_l = ci.get("beta_loc", (None, None))
        lo_m, hi_m = ci.get("beta_mob", (None, None))
        yield (
            rec.date, rec.model.name, rec.beta_loc, rec.beta_mob, rec.r, rec.loglik, rec.aic,
            lo_l, hi_l, lo_m, hi_m, rec.p_local, rec.eps_c,
        )


def replica_rows(records: Iterable[EstimateRecord]):
    for rec in records:
        for b, (bl, bm, r) in enumerate(rec.replicas):
            yield (rec.date, rec.model.name, b, bl, bm, None if math.isnan(r) else r)


def read_estimates(estimates_path, replicas_path=None) -> dict[str, dict[dt.date, EstimateRecord]]:
    """Records keyed by model name and date, with replicas attached when available."""
    reps: dict[tuple, list] = defaultdict(list)
    if replicas_path is not None and Path(replicas_path).exists():
        for row in read_csv(replicas_path, REPLICAS_HEADER):
            r = _num(row["r"])
            reps[(row["date"], row["model"])].append(
                (int(row["replica"]), float(row["beta_loc"]), float(row["beta_mob"]),
                 math.nan if r is None else r)
            )
    out: dict[str, dict[dt.date, EstimateRecord]] = defaultdict(dict)
    for row in read_csv(estimates_path, ESTIMATES_HEADER):
        day = dt.date.fromisoformat(row["date"])
        variant = ModelVariant.parse(row["model"])
        replicas = sorted(reps.get((row["date"], row["model"]), []))
        arr = np.array([r[1:] for r in replicas], dtype=float).reshape(-1, 3)
        out[variant.name][day] = EstimateRecord(
            day, variant, float(row["beta_loc"]), float(row["beta_mob"]), _num(row["r"]),
            float(row["loglik"]), 0, "", p_local=float(row["p_local"]), eps_c=float(row["eps_c"]),
            replicas=arr,
        )
    return dict(out)


# --------------------------------------------------------------------------- forecasts and metrics


def forecast_rows(forecasts: Iterable[Forecast]):
    for f in forecasts:
        lo, hi = f.bands
        fr = f.fractions
        for i, rid in enumerate(f.region_ids):
            yield (f.issue_date, rid, f.point[i], lo[i], hi[i], None if fr is None else fr[i])


def read_forecasts(path, model: str = "") -> list[Forecast]:
    by_date: dict[dt.date, list] = defaultdict(list)
    for row in read_csv(path, FORECAST_HEADER):
        by_date[dt.date.fromisoformat(row["issue_date"])].append((row["region_id"], float(row["point"])))
    out = []
    for day in sorted(by_date):
        ids, vals = zip(*by_date[day])
        out.append(Forecast(day, tuple(ids), np.array(vals), np.empty((0, len(ids))), model))
    return out


def metrics_rows(reports: Iterable[EvaluationReport]):
    for r in reports:
        yield (r.issue_date, r.model, r.rmse, r.spearman)


def comparison_rows(rows: Iterable[ComparisonRow]):
    for r in rows:
        yield (r.issue_date, r.rmse_with, r.rmse_without, r.rmse_diff,
               r.spearman_with, r.spearman_without, r.spearman_diff)
