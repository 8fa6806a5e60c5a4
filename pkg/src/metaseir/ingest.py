"""Loading and validation of regional inputs.

All files are CSV with a fixed header and ISO-8601 dates:

* regions.csv     ``region_id,name,population,parent_id``
* cases.csv       ``date,region_id,new_cases``
* mobility.csv    ``origin,destination,volume``
* reductions.csv  ``date,region_id,workplace_change``
* prevalence.csv  ``date,total_infectious``

Loaded values are immutable; arrays are marked read-only.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DataWarning,
    DateOutOfCoverage,
    DuplicateRegion,
    InvalidHierarchy,
    NegativeCount,
    NegativeVolume,
    NonpositivePopulation,
    ParseError,
    UnknownRegion,
)

NATIONAL = "NATIONAL"

REGIONS_HEADER = ("region_id", "name", "population", "parent_id")
CASES_HEADER = ("date", "region_id", "new_cases")
MOBILITY_HEADER = ("origin", "destination", "volume")
REDUCTIONS_HEADER = ("date", "region_id", "workplace_change")
PREVALENCE_HEADER = ("date", "total_infectious")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _read_rows(path, header: tuple[str, ...]) -> list[dict[str, str]]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(h.strip() for h in reader.fieldnames) != header:
                raise ParseError(
                    f"{path}: expected header {','.join(header)}, got {reader.fieldnames}"
                )
            return [{k.strip(): (v or "").strip() for k, v in row.items()} for row in reader]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(f"{where}: bad date {text!r}") from exc


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ParseError(f"{where}: bad number {text!r}") from exc
    if not math.isfinite(value):
        raise ParseError(f"{where}: non-finite number {text!r}")
    return value


# --------------------------------------------------------------------------- regions


@dataclass(frozen=True)
class Region:
    region_id: str
    name: str
    population: int
    parent_id: str | None = None


@dataclass(frozen=True)
class RegionTable:
    """Regions of the study area.

    ``rows`` holds every row of the file. The model works on the *leaf*
    regions (rows that are nobody's parent), exposed through ``ids`` and
    ``population`` in file order.
    """

    rows: tuple[Region, ...]
    ids: tuple[str, ...] = field(init=False)
    population: np.ndarray = field(init=False, repr=False)
    _index: Mapping[str, int] = field(init=False, repr=False)
    _parents: Mapping[str, str | None] = field(init=False, repr=False)

    def __post_init__(self):
        seen: dict[str, Region] = {}
        for r in self.rows:
            if r.region_id in seen:
                raise DuplicateRegion(f"duplicate region id {r.region_id!r}")
            if r.region_id == NATIONAL:
                raise InvalidHierarchy(f"{NATIONAL!r} is reserved")
            if r.population < 1:
                raise NonpositivePopulation(f"region {r.region_id!r} has population {r.population}")
            seen[r.region_id] = r
        parents = {r.region_id: r.parent_id for r in self.rows}
        for rid in parents:
            chain, cur = [rid], parents[rid]
            while cur is not None:
                if cur in chain:
                    raise InvalidHierarchy(f"parent cycle through {cur!r}")
                chain.append(cur)
                cur = parents.get(cur)
            if len(chain) > 3:
                raise InvalidHierarchy(f"region {rid!r} is nested more than 2 levels deep")
        has_children = {p for p in parents.values() if p is not None}
        leaves = [r for r in self.rows if r.region_id not in has_children]
        object.__setattr__(self, "ids", tuple(r.region_id for r in leaves))
        object.__setattr__(
            self, "population", _frozen(np.array([r.population for r in leaves], dtype=float))
        )
        object.__setattr__(self, "_index", {rid: k for k, rid in enumerate(self.ids)})
        object.__setattr__(self, "_parents", parents)

    @classmethod
    def from_populations(cls, populations: Mapping[str, int] | Iterable[tuple[str, int]]):
        items = populations.items() if isinstance(populations, Mapping) else populations
        return cls(tuple(Region(rid, rid, int(n)) for rid, n in items))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def total_population(self) -> float:
        return float(self.population.sum())

    def index(self, region_id: str) -> int:
        try:
            return self._index[region_id]
        except KeyError:
            raise UnknownRegion(f"unknown region {region_id!r}") from None

    def lineage(self, region_id: str) -> list[str]:
        """The region followed by its ancestors, nearest first."""
        out = [region_id]
        cur = self._parents.get(region_id)
        while cur is not None:
            out.append(cur)
            cur = self._parents.get(cur)
        return out


def load_regions(path) -> RegionTable:
    rows = []
    for k, raw in enumerate(_read_rows(path, REGIONS_HEADER), start=2):
        where = f"{path}:{k}"
        if not raw["region_id"]:
            raise ParseError(f"{where}: empty region_id")
        pop = _parse_float(raw["population"], where)
        if pop != int(pop):
            raise ParseError(f"{where}: population must be an integer")
        rows.append(Region(raw["region_id"], raw["name"], int(pop), raw["parent_id"] or None))
    return RegionTable(tuple(rows))


# --------------------------------------------------------------------------- mobility


@dataclass(frozen=True)
class MobilityMatrix:
    """Daily travel volumes; ``matrix[i, j]`` is the number of people going from i to j."""

    region_ids: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        n = len(self.region_ids)
        if m.shape != (n, n):
            raise ValueError(f"mobility matrix shape {m.shape} does not match {n} regions")
        if (m < 0).any():
            raise NegativeVolume("mobility volumes must be nonnegative")
        np.fill_diagonal(m, 0.0)
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def zeros(cls, region_ids) -> "MobilityMatrix":
        n = len(region_ids)
        return cls(tuple(region_ids), np.zeros((n, n)))

    def scaled(self, factor: float) -> "MobilityMatrix":
        return MobilityMatrix(self.region_ids, self.matrix * factor)

    @property
    def total(self) -> float:
        return float(self.matrix.sum())


def load_mobility_baseline(path, regions: RegionTable) -> MobilityMatrix:
    n = len(regions)
    m = np.zeros((n, n))
    for k, raw in enumerate(_read_rows(path, MOBILITY_HEADER), start=2):
        where = f"{path}:{k}"
        i, j = regions.index(raw["origin"]), regions.index(raw["destination"])
        vol = _parse_float(raw["volume"], where)
        if vol < 0:
            raise NegativeVolume(f"{where}: negative volume {vol}")
        if i == j:
            warnings.warn(f"{where}: dropping diagonal entry for {raw['origin']!r}", DataWarning)
            continue
        m[i, j] += vol
    return MobilityMatrix(regions.ids, m)


@dataclass(frozen=True)
class MobilityReductionSeries:
    """Relative change of workplace mobility per (date, region).

    ``values[date][region_id]``; ``region_id`` is a leaf, an ancestor, or
    ``NATIONAL``.
    """

    values: Mapping[dt.date, Mapping[str, float]]

    def __post_init__(self):
        for day, entries in self.values.items():
            if NATIONAL not in entries:
                raise DateOutOfCoverage(f"no national reduction entry on {day}")

    @classmethod
    def constant(cls, dates: Iterable[dt.date], change: float = 0.0):
        return cls({d: {NATIONAL: change} for d in dates})

    @property
    def dates(self) -> list[dt.date]:
        return sorted(self.values)

    def resolve(self, regions: RegionTable, region_id: str, day: dt.date) -> float:
        try:
            entries = self.values[day]
        except KeyError:
            raise DateOutOfCoverage(f"no mobility reduction data for {day}") from None
        for rid in regions.lineage(region_id):
            if rid in entries:
                return entries[rid]
        return entries[NATIONAL]


def load_reductions(path) -> MobilityReductionSeries:
    values: dict[dt.date, dict[str, float]] = {}
    for k, raw in enumerate(_read_rows(path, REDUCTIONS_HEADER), start=2):
        where = f"{path}:{k}"
        day = _parse_date(raw["date"], where)
        change = _parse_float(raw["workplace_change"], where)
        if change <= -1:
            raise ParseError(f"{where}: workplace_change must exceed -1, got {change}")
        entries = values.setdefault(day, {})
        if raw["region_id"] in entries:
            raise ParseError(f"{where}: duplicate entry for {raw['region_id']!r} on {day}")
        entries[raw["region_id"]] = change
    return MobilityReductionSeries(values)


def effective_mobility(
    baseline: MobilityMatrix,
    reductions: MobilityReductionSeries,
    day: dt.date,
    regions: RegionTable,
) -> MobilityMatrix:
    """Scale each origin row of the baseline by ``1 + workplace_change`` on ``day``."""
    factors = np.array(
        [1.0 + reductions.resolve(regions, rid, day) for rid in baseline.region_ids]
    )
    return MobilityMatrix(baseline.region_ids, baseline.matrix * factors[:, None])


class MobilitySchedule:
    """Effective mobility per day, carrying the last observed reduction forward.

    Days before the first reduction date raise ``DateOutOfCoverage``.
    """

    def __init__(self, baseline: MobilityMatrix, reductions: MobilityReductionSeries | None,
                 regions: RegionTable):
        self.baseline = baseline
        self.reductions = reductions
        self.regions = regions
        self._dates = reductions.dates if reductions is not None else []
        self._cache: dict[dt.date, MobilityMatrix] = {}

    def __call__(self, day: dt.date) -> MobilityMatrix:
        if self.reductions is None:
            return self.baseline
        if day not in self._cache:
            use = day
            if day not in self.reductions.values:
                earlier = [d for d in self._dates if d <= day]
                if not earlier:
                    raise DateOutOfCoverage(f"no mobility reduction data on or before {day}")
                use = earlier[-1]
            self._cache[day] = effective_mobility(self.baseline, self.reductions, use, self.regions)
        return self._cache[day]


# --------------------------------------------------------------------------- cases


@dataclass(frozen=True)
class CaseSeries:
    """Daily new reported cases, ``counts[t, i]`` for ``start + t`` and region ``i``.

    Days before ``start`` are treated as zero (pre-epidemic); days after
    ``end`` are unknown.
    """

    region_ids: tuple[str, ...]
    start: dt.date
    counts: np.ndarray
    filled_dates: frozenset = frozenset()

    def __post_init__(self):
        c = np.array(self.counts, dtype=float)
        if c.ndim != 2 or c.shape[1] != len(self.region_ids):
            raise ValueError(f"counts shape {c.shape} does not match {len(self.region_ids)} regions")
        if (c < 0).any():
            raise NegativeCount("case counts must be nonnegative")
        object.__setattr__(self, "counts", _frozen(c))

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self.counts) - 1)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=k) for k in range(len(self.counts))]

    def offset(self, day: dt.date) -> int:
        return (day - self.start).days

    def window(self, first: dt.date, last: dt.date) -> np.ndarray:
        """Rows for ``first..last`` inclusive; zero rows before ``start``."""
        if last > self.end:
            raise DateOutOfCoverage(f"cases end on {self.end}, need {last}")
        n = (last - first).days + 1
        out = np.zeros((max(n, 0), len(self.region_ids)))
        lo, hi = self.offset(first), self.offset(last)
        src_lo = max(lo, 0)
        if hi >= src_lo:
            out[src_lo - lo:] = self.counts[src_lo:hi + 1]
        return out

    def national(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def load_cases(path, regions: RegionTable) -> CaseSeries:
    records: dict[tuple[dt.date, str], float] = {}
    for k, raw in enumerate(_read_rows(path, CASES_HEADER), start=2):
        where = f"{path}:{k}"
        day = _parse_date(raw["date"], where)
        regions.index(raw["region_id"])
        value = _parse_float(raw["new_cases"], where)
        if value < 0:
            raise NegativeCount(f"{where}: negative count {value}")
        if value != int(value):
            raise ParseError(f"{where}: case counts must be integers")
        key = (day, raw["region_id"])
        if key in records:
            raise ParseError(f"{where}: duplicate record for {raw['region_id']!r} on {day}")
        records[key] = value
    if not records:
        raise ParseError(f"{path}: no case records")
    days = [d for d, _ in records]
    start, end = min(days), max(days)
    counts = np.zeros(((end - start).days + 1, len(regions)))
    present = np.zeros(counts.shape, dtype=bool)
    for (day, rid), value in records.items():
        t, i = (day - start).days, regions.index(rid)
        counts[t, i] = value
        present[t, i] = True
    filled = set()
    for t in np.flatnonzero(~present.all(axis=1)):
        day = start + dt.timedelta(days=int(t))
        filled.add(day)
        missing = [regions.ids[i] for i in np.flatnonzero(~present[t])]
        warnings.warn(
            f"{path}: no case record on {day} for {len(missing)} region(s), filled with 0",
            DataWarning,
        )
    return CaseSeries(regions.ids, start, counts, frozenset(filled))


# --------------------------------------------------------------------------- prevalence


@dataclass(frozen=True)
class PrevalenceSeries:
    """Estimated total number of infectious people per day."""

    values: Mapping[dt.date, float]

    def __getitem__(self, day: dt.date) -> float:
        try:
            return self.values[day]
        except KeyError:
            raise DateOutOfCoverage(f"no prevalence estimate for {day}") from None

    def __contains__(self, day) -> bool:
        return day in self.values


def load_prevalence(path) -> PrevalenceSeries:
    values: dict[dt.date, float] = {}
    for k, raw in enumerate(_read_rows(path, PREVALENCE_HEADER), start=2):
        where = f"{path}:{k}"
        day = _parse_date(raw["date"], where)
        value = _parse_float(raw["total_infectious"], where)
        if value < 0:
            raise NegativeCount(f"{where}: negative prevalence {value}")
        if day in values:
            raise ParseError(f"{where}: duplicate prevalence for {day}")
        values[day] = value
    return PrevalenceSeries(values)
