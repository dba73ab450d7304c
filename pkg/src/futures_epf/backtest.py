"""Rolling-window multi-horizon backtest, MAE/MMAE metrics and the Diebold-Mariano test."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .features import AR24_SPEC, FULL_SPEC, FeatureTable, build_table
from .how import fit_how, forecast_how
from .lasso import LassoConfig
from .market_data import HOURS, FilledFuturesBook, PricePanel
from .models import LassoHourModel, fit_lasso_hours, forecast_lasso_model

logger = logging.getLogger(__name__)

DAY = dt.timedelta(days=1)
MODEL_NAMES = ("future", "ar24", "ar_how")
MAX_SKIPPED_SHARE = 0.05


class BacktestError(RuntimeError):
    """Schedule or run failure (CLI exit code 1)."""


@dataclass(frozen=True)
class BacktestConfig:
    num_windows: int
    window_length: int = 365
    horizon_days: int = 28
    first_forecast_day: dt.date | None = None  # D; earliest feasible when None
    models: tuple[str, ...] = ("future", "ar24")

    def __post_init__(self):
        if self.window_length < 8:
            raise ValueError("window_length must be >= 8")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")
        if self.num_windows < 1:
            raise ValueError("num_windows must be >= 1")
        unknown = set(self.models) - set(MODEL_NAMES)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}, expected a subset of {MODEL_NAMES}")
        if len(set(self.models)) != len(self.models):
            raise ValueError("duplicate model names")


@dataclass(frozen=True)
class Window:
    n: int  # 1-based
    train_first: dt.date
    origin: dt.date  # last training day
    eval_first: dt.date
    eval_last: dt.date


@dataclass(frozen=True)
class MarketData:
    panel: PricePanel
    book: FilledFuturesBook | None
    holidays: frozenset[dt.date] = frozenset()


def schedule_windows(config: BacktestConfig, data_extent: tuple[dt.date, dt.date],
                     history_days: int = FULL_SPEC.ar_lags) -> list[Window]:
    """Rolling windows one day apart.

    Window n trains on ``D - L + n .. D - 1 + n`` and forecasts the
    following `horizon_days` days. `data_extent` is the first and last date
    with prices; the first training day needs `history_days` of lags.
    """
    first_data, last_data = data_extent
    L, N, C = config.window_length, config.num_windows, config.horizon_days
    earliest = first_data + (history_days + L - 1) * DAY
    D = config.first_forecast_day or earliest
    if D < earliest:
        raise BacktestError(
            f"first forecast day {D} needs prices from {D - (L - 1 + history_days) * DAY}; "
            f"data starts {first_data} ({(earliest - D).days} days short)"
        )
    last_eval = D + (N - 1 + C) * DAY
    if last_eval > last_data:
        raise BacktestError(
            f"{N} windows with horizon {C} need prices up to {last_eval}; "
            f"data ends {last_data} ({(last_eval - last_data).days} days short)"
        )
    windows = []
    for n in range(1, N + 1):
        origin = D + (n - 1) * DAY
        windows.append(Window(n, D + (n - L) * DAY, origin, origin + DAY, origin + C * DAY))
    return windows


# --------------------------------------------------------------------------
# forecasters

Forecaster = Callable[[Window], np.ndarray]


@dataclass
class _LassoForecaster:
    """Fits one of the lasso models per window on a shared feature table."""

    name: str
    table: FeatureTable
    panel: PricePanel
    horizon_days: int
    lasso: LassoConfig
    last_model: LassoHourModel | None = field(default=None, repr=False)

    def __call__(self, w: Window) -> np.ndarray:
        model = fit_lasso_hours(self.name, self.table, self.panel, w.train_first, w.origin,
                                self.horizon_days, self.lasso)
        self.last_model = model
        return forecast_lasso_model(model, self.panel, self.table, self.horizon_days)


@dataclass
class _HowForecaster:
    panel: PricePanel
    holidays: frozenset[dt.date]
    horizon_days: int

    def __call__(self, w: Window) -> np.ndarray:
        model = fit_how(self.panel.slice(w.train_first, w.origin), self.holidays)
        history = self.panel.slice(w.train_first, w.origin)
        return forecast_how(model, history, self.horizon_days * HOURS).reshape(self.horizon_days, HOURS)


def make_forecasters(config: BacktestConfig, data: MarketData, windows: Sequence[Window],
                     lasso: LassoConfig = LassoConfig()) -> dict[str, Forecaster]:
    first, last = windows[0].train_first, windows[-1].eval_last
    out: dict[str, Forecaster] = {}
    for name in config.models:
        if name == "future":
            if data.book is None:
                raise BacktestError("model 'future' needs a futures book")
            table = build_table(data.panel, data.book, data.holidays, first, last, FULL_SPEC)
            out[name] = _LassoForecaster(name, table, data.panel, config.horizon_days, lasso)
        elif name == "ar24":
            table = build_table(data.panel, None, data.holidays, first, last, AR24_SPEC)
            out[name] = _LassoForecaster(name, table, data.panel, config.horizon_days, lasso)
        else:
            out[name] = _HowForecaster(data.panel, data.holidays, config.horizon_days)
    return out


# --------------------------------------------------------------------------
# running


@dataclass
class WindowFailure:
    model: str
    window: int
    origin: dt.date
    message: str


@dataclass
class BacktestResult:
    windows: list[Window]
    errors: dict[str, np.ndarray]  # model -> [horizon, 24, N], forecast - actual
    failures: list[WindowFailure] = field(default_factory=list)
    inclusion: dict[str, np.ndarray] = field(default_factory=dict)  # model -> (24, ncol) day-1 share
    column_names: dict[str, list[str]] = field(default_factory=dict)


_WORKER_STATE: dict = {}


def _run_window(i: int):
    """Forecast errors and day-1 inclusion indicators of every model for window i."""
    windows, forecasters, actuals_of = (_WORKER_STATE[k] for k in ("windows", "forecasters", "actuals"))
    w = windows[i]
    actual = actuals_of(w)
    out = {}
    for name, fc in forecasters.items():
        try:
            forecast = np.asarray(fc(w), dtype=float)
            if forecast.shape != actual.shape:
                raise ValueError(f"forecast shape {forecast.shape}, expected {actual.shape}")
            model = getattr(fc, "last_model", None)
            hits = model.coef[0] != 0.0 if isinstance(model, LassoHourModel) else None
            out[name] = (forecast - actual, hits, None)
        except Exception as exc:  # a failing window is skipped and reported
            out[name] = (None, None, f"{type(exc).__name__}: {exc}")
    return out


def run_backtest(config: BacktestConfig, data: MarketData,
                 forecasters: Mapping[str, Forecaster] | None = None,
                 lasso: LassoConfig = LassoConfig(), jobs: int = 1) -> BacktestResult:
    """Fit and forecast every window; windows whose fit fails are recorded and skipped.

    Raises BacktestError when more than 5% of the windows fail for any model.
    Results do not depend on `jobs`.
    """
    panel = data.panel
    windows = schedule_windows(config, (panel.start, panel.end))
    if forecasters is None:
        forecasters = make_forecasters(config, data, windows, lasso)
    C, N = config.horizon_days, len(windows)

    def actuals_of(w: Window) -> np.ndarray:
        return panel.values[panel.index(w.eval_first) : panel.index(w.eval_last) + 1]

    _WORKER_STATE.update(windows=windows, forecasters=dict(forecasters), actuals=actuals_of)
    try:
        if jobs > 1 and N > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                per_window = list(pool.map(_run_window, range(N)))
        else:
            per_window = [_run_window(i) for i in range(N)]
    finally:
        _WORKER_STATE.clear()

    result = BacktestResult(windows, {})
    for name, fc in forecasters.items():
        tensor = np.full((C, HOURS, N), np.nan)
        hit_sum = None
        fitted = 0
        for w, res in zip(windows, per_window):
            err, hits, message = res[name]
            if message is not None:
                logger.warning("model %s window %d (origin %s) skipped: %s", name, w.n, w.origin, message)
                result.failures.append(WindowFailure(name, w.n, w.origin, message))
                continue
            tensor[:, :, w.n - 1] = err
            if hits is not None:
                hit_sum = hits.astype(float) if hit_sum is None else hit_sum + hits
                fitted += 1
        result.errors[name] = tensor
        if hit_sum is not None:
            result.inclusion[name] = hit_sum / fitted
            result.column_names[name] = list(fc.table.spec.names)
        skipped = sum(1 for f in result.failures if f.model == name)
        if skipped > MAX_SKIPPED_SHARE * N:
            first = next(f for f in result.failures if f.model == name)
            raise BacktestError(
                f"model {name}: {skipped} of {N} windows failed; first at window {first.window} "
                f"(origin {first.origin}): {first.message}"
            )
    return result


# --------------------------------------------------------------------------
# metrics


def mae_ch(tensor: np.ndarray) -> np.ndarray:
    """Mean absolute error per (horizon day, hour) over windows; NaN windows are ignored."""
    tensor = np.asarray(tensor, dtype=float)
    if tensor.ndim != 3 or tensor.shape[1] != HOURS:
        raise ValueError(f"error tensor must have shape (days, 24, windows), got {tensor.shape}")
    counts = np.sum(~np.isnan(tensor), axis=2)
    if (counts == 0).any():
        raise ValueError("some (day, hour) cells have no evaluated windows")
    return np.nansum(np.abs(tensor), axis=2) / counts


def mae_k(tensor: np.ndarray) -> np.ndarray:
    """MAE by forecast hour k = 24 (c - 1) + h, stored at index k - 1."""
    return mae_ch(tensor).reshape(-1)


def mmae_curve(tensor: np.ndarray) -> np.ndarray:
    """MMAE_K for K = 1..(days * 24)."""
    m = mae_k(tensor)
    return np.cumsum(m) / np.arange(1, m.size + 1)


def mmae(tensor: np.ndarray, K: int | None = None) -> float:
    """Mean of the first K hourly MAE values (all of them when K is None)."""
    m = mae_k(tensor)
    K = m.size if K is None else K
    if not 1 <= K <= m.size:
        raise ValueError(f"K must lie in 1..{m.size}, got {K}")
    return float(m[:K].mean())


@dataclass(frozen=True)
class DmResult:
    horizon_day: int
    mean_diff: float
    std_error: float
    dm: float
    p_two_sided: float
    p_one_sided: float  # H1: model A has the smaller loss
    degenerate: bool
    n: int


def dm_test(tensor_a: np.ndarray, tensor_b: np.ndarray, c: int) -> DmResult:
    """Diebold-Mariano test on daily L1 losses of horizon day `c`.

    Windows where either model has no error are left out.
    """
    a, b = np.asarray(tensor_a, dtype=float), np.asarray(tensor_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"tensor shapes differ: {a.shape} vs {b.shape}")
    if not 1 <= c <= a.shape[0]:
        raise ValueError(f"horizon day must lie in 1..{a.shape[0]}, got {c}")
    loss_a = np.abs(a[c - 1]).sum(axis=0)
    loss_b = np.abs(b[c - 1]).sum(axis=0)
    diff = loss_a - loss_b
    diff = diff[~np.isnan(diff)]
    n = diff.size
    if n < 2:
        raise ValueError(f"DM test needs at least 2 windows, got {n}")
    mean = float(diff.mean())
    if np.all(diff == diff[0]):
        return DmResult(c, mean, 0.0, float("nan"), 1.0, 0.5, True, n)
    se = float(diff.std(ddof=1) / np.sqrt(n))
    stat = mean / se
    return DmResult(c, mean, se, stat, float(2.0 * norm.sf(abs(stat))), float(norm.cdf(stat)), False, n)


def dm_table(tensor_a: np.ndarray, tensor_b: np.ndarray) -> list[DmResult]:
    return [dm_test(tensor_a, tensor_b, c) for c in range(1, np.shape(tensor_a)[0] + 1)]


# --------------------------------------------------------------------------
# files


def fmt(x: float) -> str:
    return f"{x:.17g}"


def write_errors(result: BacktestResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "window", "origin", "horizon_day", "hour", "error"])
        for name, tensor in result.errors.items():
            for win in result.windows:
                if np.isnan(tensor[:, :, win.n - 1]).all():
                    continue
                origin = win.origin.isoformat()
                for c in range(tensor.shape[0]):
                    for h in range(HOURS):
                        w.writerow([name, win.n, origin, c + 1, h + 1, fmt(tensor[c, h, win.n - 1])])


ErrorKey = tuple[int, int, int]  # window, horizon day, hour


def read_errors(path: str | Path) -> dict[str, dict[ErrorKey, float]]:
    """Errors CSV as model -> {(window, horizon_day, hour): error}."""
    out: dict[str, dict[ErrorKey, float]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["model", "window", "origin", "horizon_day", "hour", "error"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: header {reader.fieldnames}, expected {expected}")
        for line, row in enumerate(reader, start=2):
            try:
                key = (int(row["window"]), int(row["horizon_day"]), int(row["hour"]))
                value = float(row["error"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            out.setdefault(row["model"], {})[key] = value
    return out


def errors_to_tensor(errors: Mapping[ErrorKey, float]) -> tuple[np.ndarray, list[int]]:
    """Dense [days, 24, windows] tensor and the window numbers along its last axis."""
    windows = sorted({k[0] for k in errors})
    days = max(k[1] for k in errors)
    pos = {n: i for i, n in enumerate(windows)}
    tensor = np.full((days, HOURS, len(windows)), np.nan)
    for (n, c, h), v in errors.items():
        tensor[c - 1, h - 1, pos[n]] = v
    return tensor, windows


def first_key_divergence(a: Mapping[ErrorKey, float], b: Mapping[ErrorKey, float]) -> ErrorKey | None:
    diff = set(a).symmetric_difference(b)
    return min(diff) if diff else None


def metrics_json(result: BacktestResult) -> dict:
    out = {}
    for name, tensor in result.errors.items():
        curve = mmae_curve(tensor)
        out[name] = {
            "windows_evaluated": int(np.sum(~np.isnan(tensor[0, 0]))),
            "mae_ch": mae_ch(tensor).tolist(),
            "mmae": curve.tolist(),
            "mmae_total": float(curve[-1]),
        }
    return out


def write_metrics(result: BacktestResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics_json(result), indent=1, sort_keys=True) + "\n")


def write_dm(rows: Sequence[tuple[str, str, DmResult]], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["modelA", "modelB", "horizon_day", "dm", "p_two_sided", "p_one_sided", "degenerate"])
        for a, b, r in rows:
            w.writerow([a, b, r.horizon_day, fmt(r.dm), fmt(r.p_two_sided), fmt(r.p_one_sided),
                        str(r.degenerate).lower()])


def write_inclusion(result: BacktestResult, path: str | Path) -> None:
    """Share of windows where each regressor was selected, day-1 slots, per hour."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "hour", "column", "frequency"])
        for name, freq in result.inclusion.items():
            names = result.column_names[name]
            for h in range(HOURS):
                for j, col in enumerate(names):
                    w.writerow([name, h + 1, col, fmt(freq[h, j])])


def write_failures(result: BacktestResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "window", "origin", "message"])
        for f in result.failures:
            w.writerow([f.model, f.window, f.origin.isoformat(), f.message])
