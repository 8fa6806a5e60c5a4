"""Run configuration: a flat TOML file plus command-line overrides."""
from __future__ import annotations

import datetime as dt
import os
from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

_PATH_KEYS = (
    "regions", "cases", "mobility", "reductions", "prevalence",
    "reference", "forecast_with", "forecast_without", "out",
)


@dataclass(frozen=True)
class RunConfig:
    regions: Path | None = None
    cases: Path | None = None
    mobility: Path | None = None
    reductions: Path | None = None
    prevalence: Path | None = None
    start: dt.date | None = None
    end: dt.date | None = None
    nu: float = 3.0
    omega: float = 9.0
    model: str = "negbin"
    use_mobility: bool = True
    bootstrap: int = 100
    seed: int = 0
    out: Path = Path("out")
    reinit_monthly: bool = True
    max_shift: int = 21
    reference: Path | None = None
    forecast_with: Path | None = None
    forecast_without: Path | None = None
    beta_loc: float | None = None
    beta_mob: float | None = None

    def validate(self) -> "RunConfig":
        if self.start is None or self.end is None:
            raise ConfigError("start and end dates are required")
        if not self.start < self.end:
            raise ConfigError(f"start {self.start} must precede end {self.end}")
        if not (self.nu > 0 and self.omega > 0):
            raise ConfigError("nu and omega must be positive")
        if self.bootstrap < 1:
            raise ConfigError("bootstrap must be at least 1")
        if self.model not in ("poisson", "negbin"):
            raise ConfigError(f"model must be poisson or negbin, got {self.model!r}")
        return self

    def require(self, *names: str) -> None:
        for name in names:
            path = getattr(self, name)
            if path is None:
                raise ConfigError(f"config is missing {name!r}")
            if not Path(path).exists():
                raise ConfigError(f"{name} file {path} does not exist")


def _coerce(key: str, value, base: Path):
    types = {f.name: f.type for f in fields(RunConfig)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if key in _PATH_KEYS:
            p = Path(value)
            return p if p.is_absolute() else base / p
        if key in ("start", "end"):
            return value if isinstance(value, dt.date) else dt.date.fromisoformat(str(value))
        if key in ("nu", "omega", "beta_loc", "beta_mob"):
            return float(value)
        if key in ("bootstrap", "seed", "max_shift"):
            if isinstance(value, bool) or int(value) != value:
                raise ValueError(value)
            return int(value)
        if key in ("use_mobility", "reinit_monthly"):
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def load_config(path=None, **overrides) -> RunConfig:
    """Read ``path`` (if given) and apply non-``None`` overrides.

    Relative paths in the file resolve against the file's directory;
    relative override paths resolve against the working directory.
    """
    values = {}
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if "mobility" in raw and isinstance(raw["mobility"], bool):
            raise ConfigError("'mobility' is the mobility CSV path; use 'use_mobility' for the switch")
        for key, value in raw.items():
            values[key] = _coerce(key, value, path.parent)
    for key, value in overrides.items():
        if value is not None:
            values[key] = _coerce(key, value, Path.cwd())
    return RunConfig(**values)


def thread_cap() -> int:
    env = os.environ.get("METASEIR_THREADS")
    cpus = os.cpu_count() or 1
    if not env:
        return cpus
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"METASEIR_THREADS must be an integer, got {env!r}") from None
    return max(1, min(n, cpus))
