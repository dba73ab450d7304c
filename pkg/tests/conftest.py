import datetime as dt

import numpy as np
import pytest

from futures_epf.market_data import FuturesBook, PricePanel, QuoteKey, forward_fill
from futures_epf.synth import SynthConfig, generate

D = dt.date


def days(n: int) -> dt.timedelta:
    return dt.timedelta(days=n)


@pytest.fixture(scope="session")
def small_synth():
    """Short synthetic market: 400 days of prices with a full futures book."""
    panel, book, holidays = generate(SynthConfig(num_days=400, seed=7))
    return panel, forward_fill(book, holidays), holidays


def full_book(first: dt.date, last: dt.date, price=lambda key: 1.0,
              holidays=frozenset()) -> FuturesBook:
    """Every listed contract quoted on every trading day; `price` maps a QuoteKey to its value."""
    from futures_epf.calendar_features import is_trading_day
    from futures_epf.synth import _contracts

    quotes = {}
    d = first
    while d <= last:
        if is_trading_day(d, holidays):
            for product, m, _, _ in _contracts(d):
                for variant in ("base", "peak"):
                    key = QuoteKey(d, product, variant, m)
                    quotes[key] = float(price(key))
        d += days(1)
    return FuturesBook(quotes)


def random_panel(start: dt.date, n: int, seed: int = 0) -> PricePanel:
    return PricePanel(start, np.random.default_rng(seed).normal(40.0, 5.0, (n, 24)))


def tagged_price(key: QuoteKey) -> float:
    """Quote value that encodes its trade date and maturity."""
    return key.trade_date.toordinal() * 100 + key.maturity


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
