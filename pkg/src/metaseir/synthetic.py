"""Synthetic regions, mobility and outbreaks generated by the model itself."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import SimulationConfig, Trajectory, simulate
from .ingest import (
    NATIONAL,
    CaseSeries,
    MobilityMatrix,
    MobilityReductionSeries,
    PrevalenceSeries,
    Region,
    RegionTable,
)
from .state import DAY, EpidemicParams, RegionalState


def random_regions(n: int, rng: np.random.Generator, median_population: float = 30_000,
                   provinces: int = 0) -> RegionTable:
    pops = np.maximum(np.round(rng.lognormal(np.log(median_population), 0.8, n)), 100).astype(int)
    rows = []
    for i, pop in enumerate(pops):
        parent = f"P{i % provinces}" if provinces else None
        rows.append(Region(f"R{i:03d}", f"Region {i}", int(pop), parent))
    return RegionTable(tuple(rows))


def gravity_mobility(regions: RegionTable, rng: np.random.Generator,
                     commute_fraction: float = 0.1) -> MobilityMatrix:
    """Each region sends ``commute_fraction`` of its residents to other regions,
    spread proportionally to destination size times a random attractiveness."""
    n = len(regions)
    N = regions.population
    w = N[None, :] * rng.lognormal(0.0, 1.0, (n, n))
    np.fill_diagonal(w, 0.0)
    w /= w.sum(axis=1, keepdims=True)
    return MobilityMatrix(regions.ids, commute_fraction * N[:, None] * w)


def random_state(regions: RegionTable, rng: np.random.Generator, date: dt.date | None = None,
                 prevalence: float = 0.005, a: float = 0.5) -> RegionalState:
    """A mid-epidemic state with region-to-region heterogeneity in burden."""
    N = regions.population
    prev = prevalence * rng.lognormal(0.0, 0.7, len(N))
    infectious = N * prev
    E = infectious * rng.uniform(0.2, 0.5, len(N))
    I_T = a * infectious
    I_U = infectious - I_T
    rec = N * rng.uniform(0.0, 0.1, len(N))
    R_T, R_U = a * rec, (1 - a) * rec
    # keep at least 5% susceptible when heavy-tailed draws overshoot
    shrink = np.minimum(1.0, 0.95 * N / (E + infectious + rec))
    E, I_T, I_U, R_T, R_U = (c * shrink for c in (E, I_T, I_U, R_T, R_U))
    S = N - E - I_T - I_U - R_T - R_U
    return RegionalState(date or dt.date(2020, 7, 1), regions.ids, N, S, E, I_T, I_U, R_T, R_U)


def seeded_state(regions: RegionTable, date: dt.date, exposed) -> RegionalState:
    N = regions.population
    E = np.asarray(exposed, dtype=float)
    z = np.zeros_like(N)
    return RegionalState(date, regions.ids, N, N - E, E, z, z, z, z)


@dataclass(frozen=True)
class Outbreak:
    regions: RegionTable
    mobility: MobilityMatrix
    trajectory: Trajectory
    cases: CaseSeries
    prevalence: PrevalenceSeries


def simulate_outbreak(
    regions: RegionTable,
    mobility: MobilityMatrix,
    params: EpidemicParams,
    days: int,
    exposed,
    start: dt.date = dt.date(2020, 6, 1),
) -> Outbreak:
    """Deterministic outbreak from seeded exposures.

    Reported cases on day t are the model's E -> I_T flow, rounded to whole
    persons; prevalence is the model's total infectious count.
    """
    traj = simulate(seeded_state(regions, start, exposed), SimulationConfig(days, params, mobility))
    counts = np.round(traj.new_reported)
    cases = CaseSeries(regions.ids, start, counts)
    prev = {s.date: float(s.infectious.sum()) for s in traj.states}
    return Outbreak(regions, mobility, traj, cases, PrevalenceSeries(prev))


# --------------------------------------------------------------------------- bundled fixture


FIXTURE_PARAMS = EpidemicParams(nu=3.0, omega=9.0, a=0.4, beta_loc=0.16, beta_mob=0.3)


def fixture_outbreak(seed: int = 20200701) -> tuple[Outbreak, MobilityReductionSeries]:
    rng = np.random.default_rng(seed)
    rows = (
        Region("A", "Alpha", 120_000, "P1"),
        Region("B", "Bravo", 45_000, "P1"),
        Region("C", "Charlie", 80_000, "P2"),
        Region("D", "Delta", 30_000, "P2"),
        Region("E", "Echo", 60_000, "P2"),
    )
    regions = RegionTable(rows)
    mobility = gravity_mobility(regions, rng, commute_fraction=0.15)
    outbreak = simulate_outbreak(
        regions, mobility, FIXTURE_PARAMS, days=120,
        exposed=[40.0, 5.0, 10.0, 0.0, 2.0],
    )
    reductions = {}
    for k, day in enumerate(outbreak.cases.dates):
        entries = {NATIONAL: round(-0.1 - 0.2 * np.sin(k / 20.0) ** 2, 4)}
        if k % 3:
            entries["P2"] = round(entries[NATIONAL] - 0.05, 4)
        if k % 4 == 0:
            entries["A"] = round(entries[NATIONAL] + 0.03, 4)
        reductions[day] = entries
    return outbreak, MobilityReductionSeries(reductions)


def write_fixture(directory, seed: int = 20200701) -> Path:
    """Write the five input CSVs and a ``config.toml`` for the 5-region fixture."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    outbreak, reductions = fixture_outbreak(seed)
    regions, cases = outbreak.regions, outbreak.cases
    with open(directory / "regions.csv", "w") as fh:
        fh.write("region_id,name,population,parent_id\n")
        for r in regions.rows:
            fh.write(f"{r.region_id},{r.name},{r.population},{r.parent_id or ''}\n")
    with open(directory / "cases.csv", "w") as fh:
        fh.write("date,region_id,new_cases\n")
        for t, day in enumerate(cases.dates):
            for i, rid in enumerate(cases.region_ids):
                fh.write(f"{day.isoformat()},{rid},{int(cases.counts[t, i])}\n")
    with open(directory / "mobility.csv", "w") as fh:
        fh.write("origin,destination,volume\n")
        m = outbreak.mobility.matrix
        for i, a in enumerate(regions.ids):
            for j, b in enumerate(regions.ids):
                if i != j:
                    fh.write(f"{a},{b},{round(float(m[i, j]), 1)}\n")
    with open(directory / "reductions.csv", "w") as fh:
        fh.write("date,region_id,workplace_change\n")
        for day in reductions.dates:
            for rid, v in sorted(reductions.values[day].items()):
                fh.write(f"{day.isoformat()},{rid},{v}\n")
    with open(directory / "prevalence.csv", "w") as fh:
        fh.write("date,total_infectious\n")
        for day in cases.dates:
            fh.write(f"{day.isoformat()},{round(outbreak.prevalence[day], 3)}\n")
    start = cases.start + 30 * DAY
    (directory / "config.toml").write_text(
        'regions = "regions.csv"\n'
        'cases = "cases.csv"\n'
        'mobility = "mobility.csv"\n'
        'reductions = "reductions.csv"\n'
        'prevalence = "prevalence.csv"\n'
        f'start = "{start.isoformat()}"\n'
        f'end = "{(start + 20 * DAY).isoformat()}"\n'
        "nu = 3.0\n"
        "omega = 9.0\n"
        'model = "negbin"\n'
        "bootstrap = 20\n"
        "seed = 7\n"
        'out = "out"\n'
    )
    return directory
