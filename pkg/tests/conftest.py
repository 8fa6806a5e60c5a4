import datetime as dt
import shutil
from importlib import resources

import numpy as np
import pytest

from metaseir.ingest import CaseSeries, RegionTable

START = dt.date(2020, 7, 1)


def write(path, text):
    path.write_text(text)
    return path


def cases_from(counts, start=START, ids=None):
    counts = np.asarray(counts, dtype=float)
    if counts.ndim == 1:
        counts = counts[:, None]
    ids = ids or tuple(f"R{i}" for i in range(counts.shape[1]))
    return CaseSeries(tuple(ids), start, counts)


def table(*pops):
    return RegionTable.from_populations({f"R{i}": p for i, p in enumerate(pops)})


@pytest.fixture
def fixture_dir(tmp_path):
    src = resources.files("metaseir") / "data" / "fixture5"
    dst = tmp_path / "fixture"
    dst.mkdir()
    for name in ("regions.csv", "cases.csv", "mobility.csv", "reductions.csv", "prevalence.csv", "config.toml"):
        shutil.copyfile(src / name, dst / name)
    return dst


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
