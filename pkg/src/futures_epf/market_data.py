"""Ingest, validate and persist spot prices and futures settlements."""
from __future__ import annotations

import csv
import datetime as dt
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Iterable, Iterator, NamedTuple

import numpy as np

from .calendar_features import is_trading_day

logger = logging.getLogger(__name__)

HOURS = 24
PRODUCTS = ("day", "week", "weekend", "month")
VARIANTS = ("base", "peak")
PEAK_HOURS = tuple(range(9, 21))  # delivery hours 9..20, 1-based
DEFAULT_MAX_FILL_DAYS = 7

ONE_DAY = dt.timedelta(days=1)


class InputError(ValueError):
    """Malformed or inconsistent input file (CLI exit code 2)."""


class SeriesKey(NamedTuple):
    product: str
    variant: str
    maturity: int


class QuoteKey(NamedTuple):
    trade_date: dt.date
    product: str
    variant: str
    maturity: int

    @property
    def series(self) -> SeriesKey:
        return SeriesKey(self.product, self.variant, self.maturity)


def date_range(start: dt.date, end: dt.date) -> list[dt.date]:
    """Inclusive list of calendar days."""
    return [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]


# --------------------------------------------------------------------------
# spot prices


@dataclass(frozen=True)
class PricePanel:
    """Hourly day-ahead prices, one row per contiguous calendar date."""

    start: dt.date
    values: np.ndarray  # (num_days, 24)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != HOURS:
            raise InputError(f"price panel must have shape (days, 24), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("price panel contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self) - 1)

    @property
    def dates(self) -> list[dt.date]:
        return date_range(self.start, self.end)

    def index(self, date: dt.date) -> int:
        i = (date - self.start).days
        if not 0 <= i < len(self):
            raise KeyError(f"{date} outside panel {self.start}..{self.end}")
        return i

    def __contains__(self, date: dt.date) -> bool:
        return 0 <= (date - self.start).days < len(self)

    def row(self, date: dt.date) -> np.ndarray:
        return self.values[self.index(date)]

    def slice(self, first: dt.date, last: dt.date) -> "PricePanel":
        return PricePanel(first, self.values[self.index(first) : self.index(last) + 1])

    def hourly(self) -> np.ndarray:
        """Flattened hourly series, hour 1 of the first day first."""
        return self.values.reshape(-1)


def load_prices(path: str | Path) -> PricePanel:
    """Read a ``date,hour,price`` CSV into a contiguous panel.

    Exact duplicate rows are dropped (and logged). Conflicting duplicates,
    missing hours and missing dates raise :class:`InputError`.
    """
    path = Path(path)
    cells: dict[tuple[dt.date, int], float] = {}
    repaired = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "hour", "price"]:
            raise InputError(f"{path}: expected header 'date,hour,price', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InputError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0].strip())
                hour = int(row[1])
                price = float(row[2])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            if not 1 <= hour <= HOURS:
                raise InputError(f"{path}:{lineno}: hour {hour} outside 1..24")
            if not np.isfinite(price):
                raise InputError(f"{path}:{lineno}: non-finite price")
            key = (date, hour)
            if key in cells:
                if cells[key] != price:
                    raise InputError(
                        f"{path}:{lineno}: conflicting duplicate for {date} hour {hour}: "
                        f"{cells[key]} vs {price}"
                    )
                repaired += 1
                continue
            cells[key] = price
    if not cells:
        raise InputError(f"{path}: no price rows")

    days = sorted({d for d, _ in cells})
    all_days = date_range(days[0], days[-1])
    missing_days = sorted(set(all_days) - set(days))
    if missing_days:
        shown = ", ".join(d.isoformat() for d in missing_days[:10])
        more = f" (+{len(missing_days) - 10} more)" if len(missing_days) > 10 else ""
        raise InputError(f"{path}: gap in dates, missing {shown}{more}")
    values = np.empty((len(all_days), HOURS))
    for i, d in enumerate(all_days):
        for h in range(1, HOURS + 1):
            try:
                values[i, h - 1] = cells[(d, h)]
            except KeyError:
                raise InputError(f"{path}: missing price for ({d.isoformat()}, {h})") from None
    if repaired:
        logger.info("%s: dropped %d exact duplicate rows", path, repaired)
    logger.info("%s: prices %s..%s", path, all_days[0], all_days[-1])
    return PricePanel(all_days[0], values)


def save_prices(panel: PricePanel, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "hour", "price"])
        for d, row in zip(panel.dates, panel.values):
            iso = d.isoformat()
            for h, v in enumerate(row, start=1):
                w.writerow([iso, h, repr(float(v))])


# --------------------------------------------------------------------------
# futures


@dataclass(frozen=True)
class FuturesBook:
    """End-of-day settlements keyed by (trade date, product, variant, maturity)."""

    quotes: dict[QuoteKey, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.quotes)

    def __contains__(self, key) -> bool:
        return QuoteKey(*key) in self.quotes

    def __getitem__(self, key) -> float:
        return self.quotes[QuoteKey(*key)]

    def series_keys(self) -> set[SeriesKey]:
        return {k.series for k in self.quotes}

    def trade_dates(self) -> list[dt.date]:
        return sorted({k.trade_date for k in self.quotes})

    @classmethod
    def from_rows(cls, rows: Iterable[tuple]) -> "FuturesBook":
        quotes: dict[QuoteKey, float] = {}
        for trade_date, product, variant, maturity, price in rows:
            key = _check_key(trade_date, product, variant, maturity)
            price = float(price)
            if key in quotes and quotes[key] != price:
                raise InputError(f"duplicate quote {key} with prices {quotes[key]} and {price}")
            quotes[key] = price
        return cls(quotes)


def _check_key(trade_date, product: str, variant: str, maturity) -> QuoteKey:
    if product not in PRODUCTS:
        raise InputError(f"unknown product {product!r}, expected one of {PRODUCTS}")
    if variant not in VARIANTS:
        raise InputError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    maturity = int(maturity)
    if maturity <= 0:
        raise InputError(f"maturity must be >= 1, got {maturity}")
    return QuoteKey(trade_date, product, variant, maturity)


def load_futures(path: str | Path) -> FuturesBook:
    """Read a ``trade_date,product,variant,maturity,price`` CSV."""
    path = Path(path)
    quotes: dict[QuoteKey, float] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return FuturesBook()
        expected = ["trade_date", "product", "variant", "maturity", "price"]
        if [h.strip() for h in header] != expected:
            raise InputError(f"{path}: expected header {','.join(expected)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise InputError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                trade_date = dt.date.fromisoformat(row[0].strip())
                maturity = int(row[3])
                price = float(row[4])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            if not np.isfinite(price):
                raise InputError(f"{path}:{lineno}: non-finite price")
            try:
                key = _check_key(trade_date, row[1].strip(), row[2].strip(), maturity)
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            if key in quotes and quotes[key] != price:
                raise InputError(
                    f"{path}:{lineno}: duplicate quote {tuple(key)} with prices "
                    f"{quotes[key]} and {price}"
                )
            quotes[key] = price
    return FuturesBook(quotes)


def _sorted_quotes(quotes: dict[QuoteKey, float]) -> Iterator[tuple[QuoteKey, float]]:
    order = {p: i for i, p in enumerate(PRODUCTS)}
    vorder = {v: i for i, v in enumerate(VARIANTS)}
    keyfun = lambda kv: (kv[0].trade_date, order[kv[0].product], vorder[kv[0].variant], kv[0].maturity)
    return iter(sorted(quotes.items(), key=keyfun))


def save_futures(book: FuturesBook, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trade_date", "product", "variant", "maturity", "price"])
        for key, price in _sorted_quotes(book.quotes):
            w.writerow([key.trade_date.isoformat(), key.product, key.variant, key.maturity, repr(float(price))])


@dataclass(frozen=True)
class FilledFuturesBook:
    """Futures book with weekend/holiday gaps forward-filled.

    ``source`` maps every quote to the trade date it was actually observed
    on; a quote is forward-filled exactly when its source differs from its
    own trade date.
    """

    quotes: dict[QuoteKey, float]
    source: dict[QuoteKey, dt.date]
    _series: dict[SeriesKey, dict[dt.date, tuple[float, dt.date]]] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self._series is None:
            series: dict[SeriesKey, dict[dt.date, tuple[float, dt.date]]] = defaultdict(dict)
            for key, price in self.quotes.items():
                series[key.series][key.trade_date] = (price, self.source[key])
            object.__setattr__(self, "_series", dict(series))

    def __len__(self) -> int:
        return len(self.quotes)

    def lookup(self, product: str, variant: str, maturity: int, trade_date: dt.date):
        """Return ``(price, source_date)`` or None when no quote exists."""
        s = self._series.get(SeriesKey(product, variant, maturity))
        if s is None:
            return None
        return s.get(trade_date)

    def is_filled(self, key) -> bool:
        key = QuoteKey(*key)
        return self.source[key] != key.trade_date

    def observed(self) -> FuturesBook:
        return FuturesBook({k: p for k, p in self.quotes.items() if self.source[k] == k.trade_date})

    def series_keys(self) -> set[SeriesKey]:
        return set(self._series)


def forward_fill(
    book: FuturesBook | FilledFuturesBook,
    holidays: AbstractSet[dt.date] = frozenset(),
    max_fill_days: int = DEFAULT_MAX_FILL_DAYS,
) -> FilledFuturesBook:
    """Carry the last observed settlement over non-trading days.

    For every non-trading date between the first and last trade date of the
    book, each series gets the most recent observation made at most
    `max_fill_days` calendar days earlier. Observed quotes are never
    overwritten, and series with no earlier observation stay absent.
    """
    if isinstance(book, FilledFuturesBook):
        book = book.observed()
    quotes = dict(book.quotes)
    source = {k: k.trade_date for k in quotes}
    if not quotes:
        return FilledFuturesBook(quotes, source)

    by_series: dict[SeriesKey, dict[dt.date, float]] = defaultdict(dict)
    for key, price in book.quotes.items():
        by_series[key.series][key.trade_date] = price
    dates = book.trade_dates()
    gaps = [d for d in date_range(dates[0], dates[-1]) if not is_trading_day(d, holidays)]

    for series, observed in by_series.items():
        obs_dates = sorted(observed)
        j = -1
        for d in gaps:
            while j + 1 < len(obs_dates) and obs_dates[j + 1] <= d:
                j += 1
            if j < 0:
                continue
            src = obs_dates[j]
            if src == d or (d - src).days > max_fill_days:
                continue
            key = QuoteKey(d, *series)
            quotes[key] = observed[src]
            source[key] = src
    return FilledFuturesBook(quotes, source)


def is_listed(product: str, maturity: int, trade_date: dt.date) -> bool:
    """Whether a Musiela maturity is quoted for `product` on `trade_date`.

    Week contracts start on Mondays and weekend contracts on Saturdays, so
    a given maturity of those products only exists on one weekday.
    """
    start = (trade_date + dt.timedelta(days=maturity)).weekday()
    if product == "week":
        return start == 0
    if product == "weekend":
        return start == 5
    return True


def coverage_report(book: FuturesBook, holidays: AbstractSet[dt.date] = frozenset()) -> list[dict]:
    """Share of listing days with an observed quote, per series.

    A series' listing days are the exchange trading days between the book's
    first and last trade date on which its maturity exists.
    """
    dates = book.trade_dates()
    if not dates:
        return []
    trading = [d for d in date_range(dates[0], dates[-1]) if is_trading_day(d, holidays)]
    counts: dict[SeriesKey, int] = defaultdict(int)
    trading_set = set(trading)
    for key in book.quotes:
        if key.trade_date in trading_set:
            counts[key.series] += 1
    order = {p: i for i, p in enumerate(PRODUCTS)}
    rows = []
    for series in sorted(counts, key=lambda s: (order[s.product], s.variant, s.maturity)):
        listed = sum(1 for d in trading if is_listed(series.product, series.maturity, d))
        rows.append(
            {
                "product": series.product,
                "variant": series.variant,
                "maturity": series.maturity,
                "quoted_days": counts[series],
                "listing_days": listed,
                "ratio": counts[series] / listed if listed else 0.0,
            }
        )
    return rows
