"""Synthetic price panels with futures books that carry planted forward information.

Prices are the sum of an annual sinusoid, a weekly profile, an hourly
profile, a daily AR(1) factor and Gaussian noise. On every trading day each
futures contract is quoted as ``signal * realized delivery mean + noise``,
with maturities counted in days from the trade date to the delivery start.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import AbstractSet

import numpy as np

from .calendar_features import effective_dow, is_trading_day, save_holidays
from .market_data import (
    HOURS,
    PEAK_HOURS,
    FuturesBook,
    PricePanel,
    QuoteKey,
    date_range,
    save_futures,
    save_prices,
)

# history needed before the first target (4 weekly lags, month lookback) and
# delivery periods reaching past the last quote date
LEAD_DAYS = 45
TAIL_DAYS = 70
MIN_DAYS = 400

FIXED_HOLIDAYS = ((1, 1), (5, 1), (10, 3), (12, 25), (12, 26))
WEEKLY_SHAPE = np.array([0.3, 0.4, 0.4, 0.4, 0.3, -0.6, -1.2])  # Mon..Sun
_PEAK_INDEX = np.array(PEAK_HOURS) - 1


def _hourly_shape() -> np.ndarray:
    h = np.arange(HOURS)
    return -np.cos(2 * np.pi * (h - 1) / HOURS) + 0.5 * np.sin(4 * np.pi * (h - 4) / HOURS)


@dataclass(frozen=True)
class SynthConfig:
    start: dt.date = dt.date(2015, 1, 1)
    num_days: int = 730
    seed: int = 0
    level: float = 40.0
    daily_amplitude: float = 8.0
    weekly_amplitude: float = 6.0
    annual_amplitude: float = 5.0
    factor_ar: float = 0.9
    factor_sd: float = 4.0
    noise_sd: float = 2.0
    futures_signal_strength: float = 0.9
    futures_noise_sd: float = 1.0

    def __post_init__(self):
        if min(self.daily_amplitude, self.weekly_amplitude, self.annual_amplitude) < 0:
            raise ValueError("amplitudes must be non-negative")
        if not -1.0 < self.factor_ar < 1.0:
            raise ValueError("factor_ar must lie in (-1, 1)")
        if not 0.0 <= self.futures_signal_strength <= 1.0:
            raise ValueError("futures_signal_strength must lie in [0, 1]")
        if self.noise_sd < 0 or self.factor_sd < 0 or self.futures_noise_sd < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.num_days < MIN_DAYS:
            raise ValueError(f"num_days must be >= {MIN_DAYS}")

    def to_json(self) -> dict:
        out = asdict(self)
        out["start"] = self.start.isoformat()
        return out


def fixed_holidays(first: dt.date, last: dt.date) -> frozenset[dt.date]:
    return frozenset(
        dt.date(y, m, d) for y in range(first.year, last.year + 1) for m, d in FIXED_HOLIDAYS
        if first <= dt.date(y, m, d) <= last
    )


def _prices(dates: list[dt.date], holidays: AbstractSet[dt.date], cfg: SynthConfig,
            rng: np.random.Generator) -> np.ndarray:
    n = len(dates)
    doy = np.array([d.timetuple().tm_yday for d in dates])
    annual = cfg.annual_amplitude * np.cos(2 * np.pi * (doy - 15) / 365.25)
    weekly = cfg.weekly_amplitude * WEEKLY_SHAPE[[int(effective_dow(d, holidays)) for d in dates]]
    factor = np.empty(n)
    shocks = rng.standard_normal(n) * cfg.factor_sd
    factor[0] = shocks[0] / np.sqrt(1.0 - cfg.factor_ar**2)
    for i in range(1, n):
        factor[i] = cfg.factor_ar * factor[i - 1] + shocks[i]
    noise = rng.standard_normal((n, HOURS)) * cfg.noise_sd
    daily = cfg.level + annual + weekly + factor
    return daily[:, None] + cfg.daily_amplitude * _hourly_shape()[None, :] + noise


def _next_weekday(d: dt.date, weekday: int) -> int:
    """Days from `d` to the next given weekday, strictly after `d`."""
    return (weekday - d.weekday() - 1) % 7 + 1


def _contracts(t: dt.date) -> list[tuple[str, int, dt.date, dt.date]]:
    """(product, maturity, delivery first day, delivery last day) quoted on `t`."""
    out = []
    for m in range(2, 7):
        d = t + dt.timedelta(days=m)
        out.append(("day", m, d, d))
    to_monday = _next_weekday(t, 0)
    for i in range(4):
        m = to_monday + 7 * i
        d = t + dt.timedelta(days=m)
        out.append(("week", m, d, d + dt.timedelta(days=6)))
    to_saturday = _next_weekday(t, 5)
    for m in (to_saturday, to_saturday + 7):
        d = t + dt.timedelta(days=m)
        out.append(("weekend", m, d, d + dt.timedelta(days=1)))
    nxt = (t.replace(day=1) + dt.timedelta(days=32)).replace(day=1)
    end = (nxt + dt.timedelta(days=32)).replace(day=1) - dt.timedelta(days=1)
    out.append(("month", 1, nxt, end))
    return out


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[PricePanel, FuturesBook, frozenset[dt.date]]:
    """Price panel, futures book and holiday set drawn from `cfg.seed`."""
    rng = np.random.default_rng(cfg.seed)
    first = cfg.start - dt.timedelta(days=LEAD_DAYS)
    last_price = cfg.start + dt.timedelta(days=cfg.num_days - 1)
    last = last_price + dt.timedelta(days=TAIL_DAYS)
    dates = date_range(first, last)
    holidays = fixed_holidays(first, last)
    prices = _prices(dates, holidays, cfg, rng)
    base_mean = prices.mean(axis=1)
    peak_mean = prices[:, _PEAK_INDEX].mean(axis=1)
    # prefix sums give delivery-period means in O(1)
    base_cum = np.concatenate([[0.0], np.cumsum(base_mean)])
    peak_cum = np.concatenate([[0.0], np.cumsum(peak_mean)])

    quotes: dict[QuoteKey, float] = {}
    for t in date_range(first, last_price):
        if not is_trading_day(t, holidays):
            continue
        contracts = _contracts(t)
        noise = rng.standard_normal((len(contracts), 2)) * cfg.futures_noise_sd
        for (product, m, a, b), eps in zip(contracts, noise):
            i, j = (a - first).days, (b - first).days + 1
            for variant, cum, e in (("base", base_cum, eps[0]), ("peak", peak_cum, eps[1])):
                realized = (cum[j] - cum[i]) / (j - i)
                quotes[QuoteKey(t, product, variant, m)] = float(cfg.futures_signal_strength * realized + e)

    i0 = (cfg.start - first).days
    panel = PricePanel(cfg.start, prices[i0 : i0 + cfg.num_days])
    kept = frozenset(h for h in holidays if h <= last_price)
    return panel, FuturesBook(quotes), kept


def save(panel: PricePanel, book: FuturesBook, holidays: AbstractSet[dt.date],
         out_dir: str | Path) -> dict[str, Path]:
    """Write ``prices.csv``, ``futures.csv`` and ``holidays.csv`` into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"prices": out / "prices.csv", "futures": out / "futures.csv", "holidays": out / "holidays.csv"}
    save_prices(panel, paths["prices"])
    save_futures(book, paths["futures"])
    save_holidays(holidays, paths["holidays"])
    return paths
