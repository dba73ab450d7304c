"""AR-HoW benchmark: hour-of-week means plus a Yule-Walker AR on the residuals."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import AbstractSet

import numpy as np

from .calendar_features import effective_dow
from .market_data import HOURS, PricePanel

HOURS_PER_WEEK = 7 * HOURS
DEFAULT_MAX_ORDER = HOURS_PER_WEEK


@dataclass(frozen=True)
class HoWModel:
    gamma: np.ndarray  # (168,) mean per hour-of-week slot, Monday 00-01 first
    ar_coefficients: np.ndarray  # phi_1..phi_p
    sigma2: float
    aic: np.ndarray  # aic[p - 1] for p = 1..max order tried
    holidays: frozenset[dt.date]

    @property
    def p(self) -> int:
        return len(self.ar_coefficients)


def hour_of_week(dates: list[dt.date], holidays: AbstractSet[dt.date] = frozenset()) -> np.ndarray:
    """Zero-based hour-of-week slot per hour, shape (days * 24,); holidays count as Sunday."""
    dows = np.array([int(effective_dow(d, holidays)) for d in dates])
    return (dows[:, None] * HOURS + np.arange(HOURS)[None, :]).ravel()


def autocovariance(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample autocovariances r_0..r_max_lag of a zero-mean series."""
    n = len(x)
    spec = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(spec * np.conj(spec))[: max_lag + 1]
    return acov / n


def levinson_durbin(r: np.ndarray, max_order: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Yule-Walker solutions for orders 1..max_order.

    Returns the coefficient vectors per order and the innovation variances
    ``sigma2[p]`` for p = 0..max_order.
    """
    sigma2 = np.empty(max_order + 1)
    sigma2[0] = r[0]
    phi = np.zeros(0)
    out = []
    for p in range(1, max_order + 1):
        k = (r[p] - phi @ r[p - 1 : 0 : -1]) / sigma2[p - 1]
        phi = np.concatenate([phi - k * phi[::-1], [k]])
        sigma2[p] = sigma2[p - 1] * (1.0 - k * k)
        out.append(phi)
    return out, sigma2


def fit_how(panel: PricePanel, holidays: AbstractSet[dt.date] = frozenset(),
            max_order: int = DEFAULT_MAX_ORDER) -> HoWModel:
    """OLS on hour-of-week dummies, then the AIC-best Yule-Walker AR(p), p >= 1."""
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    y = panel.values.ravel()
    slots = hour_of_week(panel.dates, holidays)
    counts = np.bincount(slots, minlength=HOURS_PER_WEEK)
    if (counts == 0).any():
        empty = np.flatnonzero(counts == 0) + 1
        raise ValueError(f"no observations for hour-of-week slots {empty.tolist()}")
    gamma = np.bincount(slots, weights=y, minlength=HOURS_PER_WEEK) / counts
    resid = y - gamma[slots]
    n = len(resid)
    order = min(max_order, n - 1)
    r = autocovariance(resid, order)
    if r[0] <= 0.0:
        # residuals vanish; any AR fits, keep the smallest
        return HoWModel(gamma, np.zeros(1), 0.0, np.zeros(1), frozenset(holidays))
    phis, sigma2 = levinson_durbin(r, order)
    with np.errstate(divide="ignore"):
        aic = n * np.log(sigma2[1:]) + 2.0 * np.arange(1, order + 1)
    best = int(np.argmin(aic))
    return HoWModel(gamma, phis[best], float(sigma2[best + 1]), aic, frozenset(holidays))


def forecast_how(model: HoWModel, history: PricePanel, horizon_hours: int) -> np.ndarray:
    """Recursive forecast for the hours following the last day of `history`."""
    p = model.p
    y = history.values.ravel()
    if len(y) < p:
        raise ValueError(f"history has {len(y)} hours, model needs {p}")
    past = y - model.gamma[hour_of_week(history.dates, model.holidays)]
    days = -(-horizon_hours // HOURS)
    future_dates = [history.end + dt.timedelta(days=i) for i in range(1, days + 1)]
    future_slots = hour_of_week(future_dates, model.holidays)[:horizon_hours]
    dev = np.concatenate([past[len(past) - p :], np.zeros(horizon_hours)])
    phi_rev = model.ar_coefficients[::-1]
    for t in range(horizon_hours):
        dev[p + t] = phi_rev @ dev[t : p + t]
    return model.gamma[future_slots] + dev[p:]
