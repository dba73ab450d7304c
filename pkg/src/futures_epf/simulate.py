"""Residual-bootstrap price paths and quantile fans."""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import AbstractSet, Sequence

import numpy as np

from .features import FeatureTable, build_table
from .market_data import HOURS, FilledFuturesBook, PricePanel
from .models import LassoHourModel, forecast_step, initial_history

DAY = dt.timedelta(days=1)
SAMPLING_MODES = ("day_block", "independent_per_hour")
RNG_ALGORITHM = "numpy.random.PCG64 seeded by SeedSequence(seed, spawn_key=(path_index,))"
DEFAULT_LEVELS = tuple(round(i / 100, 2) for i in range(1, 100))


@dataclass(frozen=True)
class SimulationConfig:
    num_paths: int = 1000
    horizon_days: int = 28
    seed: int = 0
    residual_sampling: str = "day_block"

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")
        if self.residual_sampling not in SAMPLING_MODES:
            raise ValueError(f"residual_sampling must be one of {SAMPLING_MODES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class PathSet:
    origin: dt.date
    paths: np.ndarray  # (num_paths, horizon_days, 24)
    mean_forecast: np.ndarray  # (horizon_days, 24), no residuals added
    config: SimulationConfig

    @property
    def dates(self) -> list[dt.date]:
        return [self.origin + (c + 1) * DAY for c in range(self.paths.shape[1])]

    def metadata(self) -> dict:
        return {
            "origin": self.origin.isoformat(),
            "num_paths": self.config.num_paths,
            "horizon_days": self.config.horizon_days,
            "seed": self.config.seed,
            "residual_sampling": self.config.residual_sampling,
            "rng": RNG_ALGORITHM,
        }


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(path_index,))))


def draw_shocks(residuals: np.ndarray, config: SimulationConfig) -> np.ndarray:
    """Resampled residuals, shape (num_paths, horizon_days, 24); one substream per path."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim != 2 or residuals.shape[0] == 0:
        raise ValueError("empty residual pool")
    pool = residuals.shape[0]
    H = config.horizon_days
    out = np.empty((config.num_paths, H, HOURS))
    hours = np.arange(HOURS)
    for i in range(config.num_paths):
        rng = path_rng(config.seed, i)
        if config.residual_sampling == "day_block":
            out[i] = residuals[rng.integers(0, pool, size=H)]
        else:
            out[i] = residuals[rng.integers(0, pool, size=(H, HOURS)), hours]
    return out


def simulate_paths(model: LassoHourModel, panel: PricePanel, book: FilledFuturesBook | None,
                   holidays: AbstractSet[dt.date] = frozenset(),
                   config: SimulationConfig = SimulationConfig(),
                   table: FeatureTable | None = None) -> PathSet:
    """Recursive simulation: each path feeds its own simulated days back as lags.

    Day c of a path is the model's mean forecast given that path's history
    plus a resampled in-sample residual of the day-1 fits.
    """
    H = config.horizon_days
    if H > model.horizon_days:
        raise ValueError(f"model fitted for {model.horizon_days} days, asked for {H}")
    if table is None:
        table = build_table(panel, book if model.spec.include_futures else None, holidays,
                            model.origin + DAY, model.origin + H * DAY, model.spec)
    shocks = draw_shocks(model.residuals, config)
    L = model.spec.ar_lags
    hist = initial_history(model, panel)

    mean_ext = np.zeros((1, L + H, HOURS))
    mean_ext[0, :L] = hist
    ext = np.zeros((config.num_paths, L + H, HOURS))
    ext[:, :L] = hist
    for c in range(1, H + 1):
        mean_ext[:, L - 1 + c] = forecast_step(model, table, mean_ext, c)
        ext[:, L - 1 + c] = forecast_step(model, table, ext, c) + shocks[:, c - 1]
    return PathSet(model.origin, ext[:, L:], mean_ext[0, L:], config)


def check_levels(levels: Sequence[float]) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size == 0:
        raise ValueError("levels must be a non-empty list")
    if np.any((levels <= 0.0) | (levels >= 1.0)):
        raise ValueError(f"levels must lie strictly between 0 and 1, got {levels.tolist()}")
    return levels


def quantile_fan(paths: np.ndarray, levels: Sequence[float] = DEFAULT_LEVELS) -> np.ndarray:
    """Empirical quantiles over paths, shape (levels, horizon_days, 24), linear interpolation."""
    levels = check_levels(levels)
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 3 or paths.shape[0] == 0:
        raise ValueError("paths must have shape (num_paths, days, 24) with at least one path")
    return np.quantile(paths, levels, axis=0, method="linear")


def write_quantiles(pathset: PathSet, levels: Sequence[float], path: str | Path) -> None:
    levels = check_levels(levels)
    fan = quantile_fan(pathset.paths, levels)
    lines = ["date,hour,level,value"]
    for c, d in enumerate(pathset.dates):
        iso = d.isoformat()
        for h in range(HOURS):
            for q, level in enumerate(levels):
                lines.append(f"{iso},{h + 1},{level:.17g},{fan[q, c, h]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_metadata(pathset: PathSet, levels: Sequence[float], path: str | Path) -> None:
    meta = pathset.metadata()
    meta["levels"] = [float(x) for x in levels]
    Path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def write_paths_binary(pathset: PathSet, path: str | Path) -> None:
    """Little-endian int64 shape header (paths, days, 24) followed by float64 values."""
    with Path(path).open("wb") as fh:
        fh.write(np.asarray(pathset.paths.shape, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(pathset.paths, dtype="<f8").tobytes())


def read_paths_binary(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    shape = tuple(np.frombuffer(raw[:24], dtype="<i8"))
    return np.frombuffer(raw[24:], dtype="<f8").reshape(shape)
