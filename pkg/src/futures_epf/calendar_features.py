"""Deterministic calendar regressors.

Day-of-week dummies (public holidays fold onto Sunday) and four periodic
cubic B-spline season curves on a 365.25-day circle.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import AbstractSet, Iterable

import numpy as np

YEAR_LENGTH = 365.25
SEASONS = ("winter", "spring", "summer", "autumn")
_SPLINE_PEAK = 2.0 / 3.0


class Weekday(IntEnum):
    MON = 0
    TUE = 1
    WED = 2
    THU = 3
    FRI = 4
    SAT = 5
    SUN = 6


WEEKDAY_NAMES = tuple(d.name.lower() for d in Weekday)


@dataclass(frozen=True)
class CalendarDay:
    date: dt.date
    effective_dow: Weekday
    is_holiday: bool

    @property
    def day_of_year(self) -> int:
        return self.date.timetuple().tm_yday

    @classmethod
    def of(cls, date: dt.date, holidays: AbstractSet[dt.date] = frozenset()) -> "CalendarDay":
        return cls(date, effective_dow(date, holidays), date in holidays)


def effective_dow(date: dt.date, holidays: AbstractSet[dt.date] = frozenset()) -> Weekday:
    """Calendar weekday of `date`, or Sunday if it is a public holiday."""
    if date in holidays:
        return Weekday.SUN
    return Weekday(date.weekday())


def dow_dummies(date: dt.date, holidays: AbstractSet[dt.date] = frozenset()) -> np.ndarray:
    """One-hot weekday vector ordered Mon..Sun."""
    out = np.zeros(7)
    out[effective_dow(date, holidays)] = 1.0
    return out


def year_position(date: dt.date) -> float:
    """Position of `date` on the 365.25-day season circle, in days from Jan 1."""
    doy = date.timetuple().tm_yday
    days_in_year = 366 if _is_leap(date.year) else 365
    return (doy - 1) / days_in_year * YEAR_LENGTH


def _is_leap(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


def _cardinal_cubic(u: np.ndarray) -> np.ndarray:
    # uniform cubic B-spline centred at 0, knot spacing 1, support [-2, 2]
    u = np.abs(u)
    out = np.zeros_like(u)
    inner = u < 1.0
    outer = (u >= 1.0) & (u < 2.0)
    out[inner] = (4.0 - 6.0 * u[inner] ** 2 + 3.0 * u[inner] ** 3) / 6.0
    out[outer] = (2.0 - u[outer]) ** 3 / 6.0
    return out


@dataclass(frozen=True)
class SeasonBasis:
    """Periodic cubic B-spline basis with one function per season.

    The four knots are equidistant on the circle, anchored at the winter
    peak (Jan 15). Each function is scaled so its peak value is exactly 1.
    """

    winter_peak: float = 14.0 / 365.0 * YEAR_LENGTH
    period: float = YEAR_LENGTH

    @property
    def spacing(self) -> float:
        return self.period / 4.0

    @property
    def knots(self) -> np.ndarray:
        return (self.winter_peak + self.spacing * np.arange(4)) % self.period

    def evaluate(self, position: np.ndarray | float) -> np.ndarray:
        """Basis values at circle positions; returns shape (..., 4)."""
        pos = np.asarray(position, dtype=float)[..., None]
        delta = (pos - self.knots) % self.period
        # signed circular distance in knot spacings
        delta = np.where(delta > self.period / 2, delta - self.period, delta)
        return _cardinal_cubic(delta / self.spacing) / _SPLINE_PEAK

    def values(self, date: dt.date) -> np.ndarray:
        return self.evaluate(year_position(date))


DEFAULT_SEASONS = SeasonBasis()


def season_values(date: dt.date, basis: SeasonBasis = DEFAULT_SEASONS) -> np.ndarray:
    """Winter/spring/summer/autumn spline values for `date`, each in [0, 1]."""
    return basis.values(date)


def calendar_block(dates: Iterable[dt.date], holidays: AbstractSet[dt.date] = frozenset()) -> np.ndarray:
    """Stack of [7 weekday dummies | 4 season curves] per date."""
    dates = list(dates)
    out = np.zeros((len(dates), 11))
    for i, d in enumerate(dates):
        out[i, effective_dow(d, holidays)] = 1.0
    out[:, 7:] = DEFAULT_SEASONS.evaluate(np.array([year_position(d) for d in dates]))
    return out


def load_holidays(path: str | Path) -> frozenset[dt.date]:
    """Read a holidays CSV (header ``date``, one ISO date per row)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "date":
        raise ValueError(f"{path}: expected header 'date'")
    out = set()
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        try:
            out.add(dt.date.fromisoformat(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad date {line!r}") from exc
    return frozenset(out)


def save_holidays(holidays: Iterable[dt.date], path: str | Path) -> None:
    rows = ["date"] + [d.isoformat() for d in sorted(holidays)]
    Path(path).write_text("\n".join(rows) + "\n")


def is_trading_day(date: dt.date, holidays: AbstractSet[dt.date] = frozenset()) -> bool:
    """Exchange calendar: weekdays that are not holidays."""
    return date.weekday() < 5 and date not in holidays


def previous_trading_day(date: dt.date, holidays: AbstractSet[dt.date] = frozenset()) -> dt.date:
    """Last trading day on or before `date`."""
    d = date
    while not is_trading_day(d, holidays):
        d -= dt.timedelta(days=1)
    return d
