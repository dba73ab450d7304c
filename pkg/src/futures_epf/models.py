"""Per-hour lasso models: the futures model and the AR24 benchmark.

Both are 24 separate daily regressions fitted with the BIC-selected lasso.
The futures model is refitted for every forecast day of the horizon using
only regressors already published at the forecast origin; AR24 has no
futures, so its column set (and therefore its fit) is the same for every
horizon day.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet

import numpy as np

from .features import (
    AR24_SPEC,
    FULL_SPEC,
    FeatureSpec,
    FeatureTable,
    build_table,
    observable_columns,
)
from .lasso import GramProblem, LassoConfig, PathResult, ScalingParams, solve_path
from .market_data import HOURS, FilledFuturesBook, PricePanel

DAY = dt.timedelta(days=1)


@dataclass(frozen=True)
class SlotFit:
    """Selected lasso fit for one (hour, column set)."""

    hour: int
    columns: np.ndarray  # indices into the spec's columns
    coef: np.ndarray  # full width, raw units
    intercept: float
    path: PathResult = field(repr=False)

    @property
    def lam(self) -> float:
        return self.path.lam

    @property
    def df(self) -> int:
        return self.path.selected.df

    @property
    def bic(self) -> float:
        return float(self.path.bic[self.path.selected_index])


class _WindowMoments:
    """Centred cross-products of one training window, shared by all slots."""

    def __init__(self, X: np.ndarray, Y: np.ndarray):
        self.n = X.shape[0]
        if self.n < 2:
            raise ValueError("training window needs at least 2 rows")
        self.mean = X.mean(axis=0)
        Xc = X - self.mean
        self.cross = Xc.T @ Xc
        self.sd = np.sqrt(np.maximum(np.diag(self.cross), 0.0) / (self.n - 1))
        self.y_mean = Y.mean(axis=0)
        Yc = Y - self.y_mean
        self.y_sd = Yc.std(axis=0, ddof=1)
        self.y_sd = np.where(self.y_sd > 1e-12 * np.maximum(1.0, np.abs(self.y_mean)), self.y_sd, 1.0)
        self.xty = Xc.T @ Yc
        self.yty = (Yc * Yc).sum(axis=0)
        self.varying = self.sd > 1e-12 * np.maximum(1.0, np.abs(self.mean))

    def solve(self, cols: np.ndarray, hour: int, config: LassoConfig) -> SlotFit:
        h = hour - 1
        sd = self.sd[cols]
        ysd = self.y_sd[h]
        problem = GramProblem(
            np.ascontiguousarray(self.cross[np.ix_(cols, cols)] / np.outer(sd, sd)),
            np.ascontiguousarray(self.xty[cols, h] / (sd * ysd)),
            float(self.yty[h] / ysd**2),
            self.n,
        )
        scaling = ScalingParams(self.mean[cols], sd, float(self.y_mean[h]), float(ysd),
                                np.ones(len(cols), dtype=bool))
        path = solve_path(problem, scaling, config)
        coef = np.zeros(self.mean.shape[0])
        coef[cols] = path.coef
        return SlotFit(hour, cols, coef, float(path.intercept), path)


@dataclass
class LassoHourModel:
    """24 hourly lasso regressions, one coefficient set per forecast day."""

    name: str
    spec: FeatureSpec
    origin: dt.date
    train_first: dt.date
    horizon_days: int
    coef: np.ndarray  # (horizon_days, 24, ncol)
    intercept: np.ndarray  # (horizon_days, 24)
    masks: np.ndarray  # (horizon_days, ncol) columns offered to the fit
    slots: dict[tuple[int, int], SlotFit]
    residuals: np.ndarray  # (train_days, 24) in-sample residuals of the day-1 slots

    @property
    def columns(self):
        return self.spec.columns

    def nonzero(self, hour: int, horizon_day: int) -> dict[str, float]:
        coef = self.coef[horizon_day - 1, hour - 1]
        return {self.columns[j].name: float(coef[j]) for j in np.flatnonzero(coef)}

    def to_json(self) -> dict:
        slots = []
        for (h, c), s in sorted(self.slots.items()):
            slots.append(
                {
                    "hour": h,
                    "horizon_day": c,
                    "lambda": s.lam,
                    "df": s.df,
                    "bic": s.bic,
                    "intercept": s.intercept,
                    "coefficients": self.nonzero(h, c),
                }
            )
        return {
            "model": self.name,
            "origin": self.origin.isoformat(),
            "train_first": self.train_first.isoformat(),
            "horizon_days": self.horizon_days,
            "slots": slots,
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))


def fit_lasso_hours(name: str, table: FeatureTable, panel: PricePanel, train_first: dt.date,
                    origin: dt.date, horizon_days: int,
                    config: LassoConfig = LassoConfig()) -> LassoHourModel:
    """Fit every (hour, horizon day) slot on the rows ``train_first..origin``.

    For horizon day c the candidate columns are those observable for target
    ``origin + c`` at the end of `origin`, minus columns that are constant
    or have missing futures cells in the window or at the target. Slots
    offered the same column set share one fit.
    """
    if horizon_days < 1:
        raise ValueError("horizon_days must be >= 1")
    a, b = table.index(train_first), table.index(origin) + 1
    X = table.X[a:b]
    if np.isnan(X).any():
        raise ValueError("training rows contain unpublished prices")
    Y = panel.values[panel.index(train_first) : panel.index(origin) + 1]
    moments = _WindowMoments(X, Y)
    missing_train = table.missing[a:b].any(axis=0)
    base_ok = moments.varying & ~missing_train

    ncol = X.shape[1]
    coef = np.zeros((horizon_days, HOURS, ncol))
    intercept = np.zeros((horizon_days, HOURS))
    masks = np.zeros((horizon_days, ncol), dtype=bool)
    slots: dict[tuple[int, int], SlotFit] = {}
    cache: dict[tuple[bytes, int], SlotFit] = {}
    for c in range(1, horizon_days + 1):
        target = origin + c * DAY
        mask = base_ok & observable_columns(table, target, origin) & ~table.missing[table.index(target)]
        masks[c - 1] = mask
        cols = np.flatnonzero(mask)
        key = mask.tobytes()
        for h in range(1, HOURS + 1):
            fit = cache.get((key, h))
            if fit is None:
                fit = moments.solve(cols, h, config)
                cache[(key, h)] = fit
            slots[(h, c)] = fit
            coef[c - 1, h - 1] = fit.coef
            intercept[c - 1, h - 1] = fit.intercept
    residuals = Y - (X @ coef[0].T + intercept[0])
    return LassoHourModel(name, table.spec, origin, train_first, horizon_days,
                          coef, intercept, masks, slots, residuals)


def _check_window(panel: PricePanel, train_first: dt.date, origin: dt.date) -> None:
    if origin < train_first:
        raise ValueError(f"origin {origin} before training start {train_first}")
    if (train_first - panel.start).days < FULL_SPEC.ar_lags:
        raise ValueError(
            f"insufficient history: training from {train_first} needs prices from "
            f"{train_first - FULL_SPEC.ar_lags * DAY}, panel starts {panel.start}"
        )
    if origin > panel.end:
        raise ValueError(f"origin {origin} after last price {panel.end}")


def fit_future_model(panel: PricePanel, book: FilledFuturesBook, holidays: AbstractSet[dt.date],
                     train_range: tuple[dt.date, dt.date], origin: dt.date | None = None,
                     horizon_days: int = 28, config: LassoConfig = LassoConfig(),
                     table: FeatureTable | None = None) -> LassoHourModel:
    train_first, train_last = train_range
    origin = origin or train_last
    if origin != train_last:
        raise ValueError("origin must be the last training day")
    _check_window(panel, train_first, origin)
    if table is None:
        table = build_table(panel, book, holidays, train_first, origin + horizon_days * DAY, FULL_SPEC)
    return fit_lasso_hours("future", table, panel, train_first, origin, horizon_days, config)


def fit_ar24(panel: PricePanel, holidays: AbstractSet[dt.date],
             train_range: tuple[dt.date, dt.date], horizon_days: int = 28,
             config: LassoConfig = LassoConfig(), table: FeatureTable | None = None) -> LassoHourModel:
    """AR24 benchmark: 168 price lags and 7 weekday dummies per hour."""
    train_first, origin = train_range
    _check_window(panel, train_first, origin)
    if table is None:
        table = build_table(panel, None, holidays, train_first, origin + horizon_days * DAY, AR24_SPEC)
    return fit_lasso_hours("ar24", table, panel, train_first, origin, horizon_days, config)


# --------------------------------------------------------------------------
# recursion


def initial_history(model: LassoHourModel, panel: PricePanel) -> np.ndarray:
    """Last `ar_lags` observed days up to the origin, shape (lags, 24)."""
    L = model.spec.ar_lags
    i = panel.index(model.origin)
    if i + 1 < L:
        raise ValueError("not enough price history before the origin")
    return panel.values[i - L + 1 : i + 1].copy()


def forecast_step(model: LassoHourModel, table: FeatureTable, ext: np.ndarray, c: int) -> np.ndarray:
    """Mean forecast for horizon day `c` from a batch of price histories.

    ``ext`` has shape (paths, lags + horizon, 24); rows ``0..lags-1`` hold
    the observed history and row ``lags - 1 + d`` the value of day d.
    Only rows before day c are read. Returns (paths, 24).
    """
    L = model.spec.ar_lags
    target = model.origin + c * DAY
    x = np.where(model.masks[c - 1], table.X[table.index(target)], 0.0)
    paths = ext.shape[0]
    X = np.repeat(x[None, :], paths, axis=0)
    lags = ext[:, c - 1 : c - 1 + L, :][:, ::-1, :]  # (paths, lag, hour)
    X[:, : HOURS * L] = lags.transpose(0, 2, 1).reshape(paths, HOURS * L)
    return X @ model.coef[c - 1].T + model.intercept[c - 1]


def forecast_lasso_model(model: LassoHourModel, panel: PricePanel, table: FeatureTable,
                         horizon_days: int | None = None) -> np.ndarray:
    """Day-by-day recursive mean forecast, shape (horizon_days, 24)."""
    H = horizon_days or model.horizon_days
    if H > model.horizon_days:
        raise ValueError(f"model fitted for {model.horizon_days} days, asked for {H}")
    L = model.spec.ar_lags
    ext = np.zeros((1, L + H, HOURS))
    ext[0, :L] = initial_history(model, panel)
    for c in range(1, H + 1):
        ext[:, L - 1 + c] = forecast_step(model, table, ext, c)
    return ext[0, L:]


def forecast_future_model(model: LassoHourModel, panel: PricePanel, book: FilledFuturesBook,
                          holidays: AbstractSet[dt.date] = frozenset(),
                          horizon_days: int | None = None,
                          table: FeatureTable | None = None) -> np.ndarray:
    H = horizon_days or model.horizon_days
    if table is None:
        table = build_table(panel, book, holidays, model.origin + DAY, model.origin + H * DAY, model.spec)
    return forecast_lasso_model(model, panel, table, H)


def forecast_ar24(model: LassoHourModel, panel: PricePanel, holidays: AbstractSet[dt.date] = frozenset(),
                  horizon_days: int | None = None, table: FeatureTable | None = None) -> np.ndarray:
    H = horizon_days or model.horizon_days
    if table is None:
        table = build_table(panel, None, holidays, model.origin + DAY, model.origin + H * DAY, model.spec)
    return forecast_lasso_model(model, panel, table, H)


def inclusion_frequency(models: list[LassoHourModel], horizon_day: int = 1) -> np.ndarray:
    """Share of models with a nonzero coefficient, per (hour, column)."""
    if not models:
        raise ValueError("no models")
    hits = np.stack([m.coef[horizon_day - 1] != 0.0 for m in models])
    return hits.mean(axis=0)
