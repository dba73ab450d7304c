"""Regressor construction for the per-hour futures-augmented AR model.

Every target day gets one row of 323 regressors:

* 168 autoregressive terms: all 24 hours of the previous 7 days,
* 144 futures terms (day, week, weekend and month products, base and peak,
  current value plus lags) aligned to what was settled before the auction,
* 7 weekday dummies and 4 season splines.

Each futures cell remembers the trade date it was taken from so that a
forecast made at some origin can drop every column that would not yet have
been published.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Sequence

import numpy as np

from .calendar_features import (
    SEASONS,
    WEEKDAY_NAMES,
    Weekday,
    calendar_block,
    previous_trading_day,
)
from .market_data import HOURS, FilledFuturesBook, PricePanel

ALWAYS_OBSERVABLE = np.iinfo(np.int64).min


@dataclass(frozen=True)
class FeatureSpec:
    ar_lags: int = 7
    day_lags: int = 7
    week_lags: int = 3
    weekend_lags: int = 1
    day_maturities: tuple[int, ...] = (2, 3, 4, 5, 6)
    week_maturities: tuple[int, ...] = (3, 10, 17, 24)
    weekend_maturities: tuple[int, ...] = (1, 2, 3, 4, 5, 8, 9, 10, 11, 12)
    weekend_peak_maturities: tuple[int, ...] = (1, 2, 3, 4, 5)
    month_maturity: int = 1
    include_futures: bool = True
    include_seasons: bool = True

    @property
    def columns(self) -> tuple["FeatureColumn", ...]:
        return _columns(self)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def block_sizes(self) -> dict[str, int]:
        sizes: dict[str, int] = {}
        for c in self.columns:
            block = c.block
            sizes[block] = sizes.get(block, 0) + 1
        return sizes


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    kind: str  # ar | future | dummy | spline
    hour: int | None = None
    lag: int | None = None
    product: str | None = None
    variant: str | None = None
    maturity: int | None = None

    @property
    def block(self) -> str:
        if self.kind == "future":
            return f"{self.product}.{self.variant}"
        return self.kind


def _future_columns(spec: FeatureSpec, variant: str) -> list[FeatureColumn]:
    cols = []

    def add(product, maturities, lags):
        for m in maturities:
            for k in range(lags + 1):
                cols.append(
                    FeatureColumn(f"fut.{product}.{variant}.m{m}.l{k}", "future",
                                  lag=k, product=product, variant=variant, maturity=m)
                )

    add("day", spec.day_maturities, spec.day_lags)
    add("week", spec.week_maturities, spec.week_lags)
    wk = spec.weekend_maturities if variant == "base" else spec.weekend_peak_maturities
    add("weekend", wk, spec.weekend_lags)
    add("month", (spec.month_maturity,), 0)
    return cols


_COLUMN_CACHE: dict[FeatureSpec, tuple[FeatureColumn, ...]] = {}


def _columns(spec: FeatureSpec) -> tuple[FeatureColumn, ...]:
    if spec in _COLUMN_CACHE:
        return _COLUMN_CACHE[spec]
    cols = [
        FeatureColumn(f"ar.h{j:02d}.l{k}", "ar", hour=j, lag=k)
        for j in range(1, HOURS + 1)
        for k in range(1, spec.ar_lags + 1)
    ]
    if spec.include_futures:
        cols += _future_columns(spec, "base") + _future_columns(spec, "peak")
    cols += [FeatureColumn(f"dow.{n}", "dummy") for n in WEEKDAY_NAMES]
    if spec.include_seasons:
        cols += [FeatureColumn(f"season.{s}", "spline") for s in SEASONS]
    out = tuple(cols)
    if len({c.name for c in out}) != len(out):
        raise AssertionError("duplicate feature names")
    _COLUMN_CACHE[spec] = out
    return out


FULL_SPEC = FeatureSpec()
AR24_SPEC = FeatureSpec(include_futures=False, include_seasons=False)


# --------------------------------------------------------------------------
# futures alignment for a single target date


@dataclass(frozen=True)
class AlignedCells:
    """Aligned futures values for one product block and one target date.

    ``trade_dates`` holds the nominal date each cell refers to (None for
    structural zeros), ``source_dates`` the date the quote was actually
    settled on (differs when forward-filled), ``missing`` flags cells with
    no quote after filling. ``known_from`` is the settlement date after
    which the cell counts as known; a structural zero inherits the date of
    the weekend quote it stands in for.
    """

    names: list[str]
    values: np.ndarray
    trade_dates: list[dt.date | None]
    source_dates: list[dt.date | None]
    missing: np.ndarray
    known_from: list[dt.date | None]

    def __len__(self) -> int:
        return len(self.values)

    def cell(self, maturity: int, lag: int) -> tuple[float, dt.date | None, dt.date | None]:
        i = self.names.index(_cell_name(self, maturity, lag))
        return float(self.values[i]), self.trade_dates[i], self.source_dates[i]


def _cell_name(cells: AlignedCells, maturity: int, lag: int) -> str:
    suffix = f".m{maturity}.l{lag}"
    for n in cells.names:
        if n.endswith(suffix):
            return n
    raise KeyError((maturity, lag))


class _Collector:
    def __init__(self, product: str, variant: str):
        self.prefix = f"fut.{product}.{variant}"
        self.product = product
        self.variant = variant
        self.names: list[str] = []
        self.values: list[float] = []
        self.trade: list[dt.date | None] = []
        self.source: list[dt.date | None] = []
        self.missing: list[bool] = []
        self.known: list[dt.date | None] = []

    def zero(self, m: int, k: int, known_from: dt.date | None = None) -> None:
        self.names.append(f"{self.prefix}.m{m}.l{k}")
        self.values.append(0.0)
        self.trade.append(None)
        self.source.append(None)
        self.missing.append(False)
        self.known.append(known_from)

    def quote(self, book: FilledFuturesBook, m: int, k: int, trade_date: dt.date,
              lookup_maturity: int | None = None) -> None:
        self.names.append(f"{self.prefix}.m{m}.l{k}")
        hit = book.lookup(self.product, self.variant, lookup_maturity or m, trade_date)
        self.trade.append(trade_date)
        self.known.append(trade_date)
        if hit is None:
            self.values.append(0.0)
            self.source.append(None)
            self.missing.append(True)
        else:
            self.values.append(hit[0])
            self.source.append(hit[1])
            self.missing.append(False)

    def done(self) -> AlignedCells:
        return AlignedCells(self.names, np.array(self.values, dtype=float), self.trade,
                            self.source, np.array(self.missing, dtype=bool), self.known)


def align_day_futures(book: FilledFuturesBook, target: dt.date, variant: str,
                      spec: FeatureSpec = FULL_SPEC) -> AlignedCells:
    """Day futures settled two days before the target, plus daily lags.

    Cell (m, k) is the maturity-m day future settled on ``target - 2 - k``.
    """
    out = _Collector("day", variant)
    for m in spec.day_maturities:
        for k in range(spec.day_lags + 1):
            out.quote(book, m, k, target - dt.timedelta(days=2 + k))
    return out.done()


def week_base_date(target: dt.date, lag: int = 0,
                   holidays: AbstractSet[dt.date] = frozenset()) -> tuple[dt.date, int]:
    """Settlement date of the week future used for `target`, and its maturity shift.

    The reference is the Friday before the target's (Mon-Sun) week, moved
    back ``7 * lag`` days; if that Friday is not a trading day the last
    earlier trading day is used, and maturities are shifted by the extra
    days so that the same delivery week is looked up.
    """
    monday = target - dt.timedelta(days=target.weekday())
    friday = monday - dt.timedelta(days=3 + 7 * lag)
    base = previous_trading_day(friday, holidays)
    return base, (friday - base).days


def align_week_futures(book: FilledFuturesBook, target: dt.date, variant: str,
                       holidays: AbstractSet[dt.date] = frozenset(),
                       spec: FeatureSpec = FULL_SPEC) -> AlignedCells:
    out = _Collector("week", variant)
    bases = [week_base_date(target, k, holidays) for k in range(spec.week_lags + 1)]
    for m in spec.week_maturities:
        for k, (base, shift) in enumerate(bases):
            out.quote(book, m, k, base, lookup_maturity=m + shift)
    return out.done()


def align_weekend_futures(book: FilledFuturesBook, target: dt.date, variant: str,
                          spec: FeatureSpec = FULL_SPEC) -> AlignedCells:
    """Weekend futures; zero on business days.

    On a Saturday or Sunday, cell (m, k) is the maturity-m weekend future
    settled ``m + 7k`` days before that weekend's Saturday. Saturday's
    maturity-1 cells are zero: their Friday settlement comes after the
    Saturday auction.

    Zero cells are dated like the cell of the most recent weekend, so that
    a column known for some target is also known for every earlier target.
    """
    out = _Collector("weekend", variant)
    maturities = spec.weekend_maturities if variant == "base" else spec.weekend_peak_maturities
    dow = target.weekday()
    is_weekend = dow >= Weekday.SAT
    # Saturday of the current weekend, or of the last one on business days
    saturday = target - dt.timedelta(days=(dow - Weekday.SAT) % 7)
    for m in maturities:
        for k in range(spec.weekend_lags + 1):
            trade = saturday - dt.timedelta(days=m + 7 * k)
            if not is_weekend or (dow == Weekday.SAT and m == 1):
                out.zero(m, k, known_from=trade)
            else:
                out.quote(book, m, k, trade)
    return out.done()


def month_base_date(target: dt.date, holidays: AbstractSet[dt.date] = frozenset()) -> dt.date:
    """Last trading day of the month before `target`'s month."""
    return previous_trading_day(target.replace(day=1) - dt.timedelta(days=1), holidays)


def align_month_future(book: FilledFuturesBook, target: dt.date, variant: str,
                       holidays: AbstractSet[dt.date] = frozenset(),
                       spec: FeatureSpec = FULL_SPEC) -> AlignedCells:
    out = _Collector("month", variant)
    out.quote(book, spec.month_maturity, 0, month_base_date(target, holidays))
    return out.done()


def align_futures(book: FilledFuturesBook, target: dt.date,
                  holidays: AbstractSet[dt.date] = frozenset(),
                  spec: FeatureSpec = FULL_SPEC) -> list[AlignedCells]:
    """All futures blocks in column order (base blocks, then peak blocks)."""
    blocks = []
    for variant in ("base", "peak"):
        blocks.append(align_day_futures(book, target, variant, spec))
        blocks.append(align_week_futures(book, target, variant, holidays, spec))
        blocks.append(align_weekend_futures(book, target, variant, spec))
        blocks.append(align_month_future(book, target, variant, holidays, spec))
    return blocks


def ar_block(panel: PricePanel, target: dt.date, lags: int = 7) -> np.ndarray:
    """Previous `lags` days of all 24 hours; entry ``[j-1, k-1]`` is Y(target-k, hour j)."""
    i = (target - panel.start).days
    if i - lags < 0 or i - 1 >= len(panel):
        raise ValueError(f"need prices {target - dt.timedelta(days=lags)}..{target - dt.timedelta(days=1)}")
    return panel.values[i - lags : i][::-1].T.copy()


# --------------------------------------------------------------------------
# full tables


def _ordinal(d: dt.date | None) -> int:
    return ALWAYS_OBSERVABLE if d is None else d.toordinal()


@dataclass(frozen=True)
class FeatureTable:
    """Regressors for a contiguous run of target dates (shared by all hours).

    ``trade_ord`` holds the proleptic ordinal of the settlement date after
    which each cell is known (see ``AlignedCells.known_from``), or
    ``ALWAYS_OBSERVABLE`` for autoregressive and calendar cells.
    """

    spec: FeatureSpec
    start: dt.date
    X: np.ndarray
    trade_ord: np.ndarray
    source_ord: np.ndarray
    missing: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def columns(self) -> tuple[FeatureColumn, ...]:
        return self.spec.columns

    @property
    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=i) for i in range(len(self))]

    def index(self, date: dt.date) -> int:
        i = (date - self.start).days
        if not 0 <= i < len(self):
            raise KeyError(f"{date} outside feature table")
        return i


def build_table(panel: PricePanel, book: FilledFuturesBook | None,
                holidays: AbstractSet[dt.date] = frozenset(),
                first: dt.date | None = None, last: dt.date | None = None,
                spec: FeatureSpec = FULL_SPEC) -> FeatureTable:
    """Regressor rows for every target date in ``first..last``.

    Defaults cover every panel date with a full week of price history.
    Targets may extend past the panel; autoregressive cells that would need
    unpublished prices are NaN and must be supplied by the caller.
    """
    first = first or panel.start + dt.timedelta(days=spec.ar_lags)
    last = last or panel.end
    if (first - panel.start).days < spec.ar_lags:
        raise ValueError(
            f"insufficient price history: {first} needs prices from "
            f"{first - dt.timedelta(days=spec.ar_lags)}, panel starts {panel.start}"
        )
    n = (last - first).days + 1
    if n < 1:
        raise ValueError(f"empty date range {first}..{last}")
    ncol = len(spec.columns)
    X = np.zeros((n, ncol))
    trade = np.full((n, ncol), ALWAYS_OBSERVABLE, dtype=np.int64)
    source = np.full((n, ncol), ALWAYS_OBSERVABLE, dtype=np.int64)
    missing = np.zeros((n, ncol), dtype=bool)

    # autoregressive block, hour-major lag-minor
    L = spec.ar_lags
    i0 = (first - panel.start).days
    overrun = max(0, i0 + n - 1 - len(panel))
    padded = np.vstack([panel.values, np.full((overrun, HOURS), np.nan)])
    for k in range(1, L + 1):
        X[:, [j * L + (k - 1) for j in range(HOURS)]] = padded[i0 - k : i0 - k + n]
    col = HOURS * L

    dates = [first + dt.timedelta(days=i) for i in range(n)]
    if spec.include_futures:
        if book is None:
            raise ValueError("futures book required for this feature spec")
        for i, d in enumerate(dates):
            c = col
            for cells in align_futures(book, d, holidays, spec):
                w = len(cells)
                X[i, c : c + w] = cells.values
                trade[i, c : c + w] = [_ordinal(t) for t in cells.known_from]
                source[i, c : c + w] = [_ordinal(s) for s in cells.source_dates]
                missing[i, c : c + w] = cells.missing
                c += w
        col += sum(1 for cc in spec.columns if cc.kind == "future")
    cal = calendar_block(dates, holidays)
    X[:, col : col + 7] = cal[:, :7]
    if spec.include_seasons:
        X[:, col + 7 : col + 11] = cal[:, 7:]
    for a in (X, trade, source, missing):
        a.setflags(write=False)
    return FeatureTable(spec, first, X, trade, source, missing)


@dataclass(frozen=True)
class DesignMatrix:
    """Per-hour regression panel: rows are target dates, response is Y(d, hour)."""

    hour: int
    dates: list[dt.date]
    X: np.ndarray
    y: np.ndarray
    trade_ord: np.ndarray
    missing: np.ndarray
    spec: FeatureSpec = field(default=FULL_SPEC)

    @property
    def columns(self) -> tuple[FeatureColumn, ...]:
        return self.spec.columns

    @property
    def names(self) -> list[str]:
        return self.spec.names


def design_matrix(table: FeatureTable, panel: PricePanel, hour: int,
                  first: dt.date, last: dt.date) -> DesignMatrix:
    a, b = table.index(first), table.index(last) + 1
    y = panel.values[panel.index(first) : panel.index(last) + 1, hour - 1]
    return DesignMatrix(hour, table.dates[a:b], table.X[a:b], y,
                        table.trade_ord[a:b], table.missing[a:b], table.spec)


def build_matrix(panel: PricePanel, book: FilledFuturesBook | None,
                 holidays: AbstractSet[dt.date], hour: int,
                 dates: Sequence[dt.date] | tuple[dt.date, dt.date],
                 spec: FeatureSpec = FULL_SPEC) -> DesignMatrix:
    """Design matrix for one hour over an inclusive ``(first, last)`` date range."""
    first, last = dates[0], dates[-1]
    table = build_table(panel, book, holidays, first, last, spec)
    return design_matrix(table, panel, hour, first, last)


def observability_mask(trade_ord: np.ndarray, origin: dt.date) -> np.ndarray:
    """True where a cell's trade date is on or before `origin`."""
    return trade_ord <= origin.toordinal()


def observable_columns(table: FeatureTable, target: dt.date, origin: dt.date) -> np.ndarray:
    """Columns whose value for `target` is known at the end of `origin`."""
    return observability_mask(table.trade_ord[table.index(target)], origin)


def dump_features(matrix: DesignMatrix, path: str | Path) -> None:
    """Write a design matrix as CSV with structured column names."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", f"y.h{matrix.hour:02d}"] + matrix.names)
        for d, yv, row in zip(matrix.dates, matrix.y, matrix.X):
            w.writerow([d.isoformat(), format(float(yv), ".17g")] + [format(float(v), ".17g") for v in row])
