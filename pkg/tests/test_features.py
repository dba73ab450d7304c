import datetime as dt

import numpy as np
import pytest

from conftest import full_book, random_panel, tagged_price
from futures_epf.features import (
    ALWAYS_OBSERVABLE,
    AR24_SPEC,
    FULL_SPEC,
    align_day_futures,
    align_futures,
    align_month_future,
    align_week_futures,
    align_weekend_futures,
    ar_block,
    build_matrix,
    build_table,
    dump_features,
    month_base_date,
    observable_columns,
    observability_mask,
    week_base_date,
)
from futures_epf.market_data import FuturesBook, PricePanel, forward_fill

D = dt.date
GERMAN_UNITY = frozenset({D(2016, 10, 3)})


@pytest.fixture(scope="module")
def autumn_book():
    book = full_book(D(2016, 7, 1), D(2016, 11, 30), tagged_price, GERMAN_UNITY)
    return forward_fill(book, GERMAN_UNITY)


class TestColumnAccounting:
    def test_total_and_blocks(self):
        sizes = FULL_SPEC.block_sizes()
        assert len(FULL_SPEC.columns) == 323
        assert sizes["ar"] == 168 and sizes["dummy"] == 7 and sizes["spline"] == 4
        expected = {"day": 40, "week": 16, "weekend": (20, 10), "month": 1}
        for variant, i in (("base", 0), ("peak", 1)):
            for product, n in expected.items():
                n = n[i] if isinstance(n, tuple) else n
                assert sizes[f"{product}.{variant}"] == n
        futures = sum(v for k, v in sizes.items() if "." in k)
        assert futures == (1 + 7) * 5 * 2 + (1 + 3) * 4 * 2 + (1 + 1) * (10 + 5) + 2 == 144

    def test_ar24_columns(self):
        assert len(AR24_SPEC.columns) == 175

    def test_names_unique_and_ordered(self):
        names = FULL_SPEC.names
        assert len(set(names)) == len(names)
        assert names[0] == "ar.h01.l1" and names[7] == "ar.h02.l1" and names[167] == "ar.h24.l7"
        blocks = []
        for c in FULL_SPEC.columns:
            if not blocks or blocks[-1] != c.block:
                blocks.append(c.block)
        assert blocks == ["ar", "day.base", "week.base", "weekend.base", "month.base",
                          "day.peak", "week.peak", "weekend.peak", "month.peak", "dummy", "spline"]
        assert names[-4:] == ["season.winter", "season.spring", "season.summer", "season.autumn"]
        assert "fut.day.base.m3.l1" in names


class TestArBlock:
    def test_constant_panel(self):
        panel = PricePanel(D(2016, 1, 1), np.full((10, 24), 30.0))
        block = ar_block(panel, D(2016, 1, 9))
        assert block.shape == (24, 7) and np.all(block == 30.0)

    def test_indexing(self):
        values = np.zeros((10, 24))
        values[7, 23] = 55.0  # 2016-01-08, hour 24
        values[2, 4] = 7.0  # 2016-01-03, hour 5
        block = ar_block(PricePanel(D(2016, 1, 1), values), D(2016, 1, 9))
        assert block[23, 0] == 55.0
        assert block[4, 5] == 7.0

    def test_insufficient_history(self):
        with pytest.raises(ValueError):
            ar_block(PricePanel(D(2016, 1, 1), np.zeros((10, 24))), D(2016, 1, 5))


def names_to_dates(cells):
    return {n: t for n, t in zip(cells.names, cells.trade_dates)}


class TestMonthTurnWeekendScenario:
    """Targets Fri 30 Sep, Sat 1 Oct and Sun 2 Oct 2016 with 3 Oct a holiday.

    Expected trade dates below are written out by hand from the alignment rules.
    """

    DAY = {
        D(2016, 9, 30): [D(2016, 9, 28) - dt.timedelta(days=k) for k in range(8)],
        D(2016, 10, 1): [D(2016, 9, 29) - dt.timedelta(days=k) for k in range(8)],
        D(2016, 10, 2): [D(2016, 9, 30) - dt.timedelta(days=k) for k in range(8)],
    }
    WEEK = [D(2016, 9, 23), D(2016, 9, 16), D(2016, 9, 9), D(2016, 9, 2)]
    WEEKEND_LAG0 = {1: D(2016, 9, 30), 2: D(2016, 9, 29), 3: D(2016, 9, 28), 4: D(2016, 9, 27),
                    5: D(2016, 9, 26), 8: D(2016, 9, 23), 9: D(2016, 9, 22), 10: D(2016, 9, 21),
                    11: D(2016, 9, 20), 12: D(2016, 9, 19)}
    MONTH = {D(2016, 9, 30): D(2016, 8, 31), D(2016, 10, 1): D(2016, 9, 30), D(2016, 10, 2): D(2016, 9, 30)}

    @pytest.mark.parametrize("target", sorted(DAY))
    def test_day_block(self, autumn_book, target):
        cells = align_day_futures(autumn_book, target, "base")
        got = names_to_dates(cells)
        for m in range(2, 7):
            for k in range(8):
                assert got[f"fut.day.base.m{m}.l{k}"] == self.DAY[target][k]
        assert len(cells) == 40 and not cells.missing.any()

    def test_friday_uses_wednesday_settlement(self, autumn_book):
        cells = align_day_futures(autumn_book, D(2016, 9, 30), "base")
        for m in range(2, 7):
            value, trade, source = cells.cell(m, 0)
            assert trade == source == D(2016, 9, 28)
            assert value == D(2016, 9, 28).toordinal() * 100 + m

    @pytest.mark.parametrize("lag", [3, 4])
    def test_weekend_cells_carry_friday_values(self, autumn_book, lag):
        # lags 3 and 4 of the Friday target point at Sun 25 and Sat 24 Sep
        cells = align_day_futures(autumn_book, D(2016, 9, 30), "base")
        value, trade, source = cells.cell(2, lag)
        assert trade == D(2016, 9, 28) - dt.timedelta(days=lag)
        assert source == D(2016, 9, 23)
        assert value == D(2016, 9, 23).toordinal() * 100 + 2

    @pytest.mark.parametrize("target", sorted(DAY))
    def test_week_block(self, autumn_book, target):
        cells = align_week_futures(autumn_book, target, "base", GERMAN_UNITY)
        got = names_to_dates(cells)
        for m in (3, 10, 17, 24):
            for k in range(4):
                assert got[f"fut.week.base.m{m}.l{k}"] == self.WEEK[k]
        assert cells.cell(3, 0)[1] == D(2016, 9, 23)
        assert len(cells) == 16 and not cells.missing.any()

    def test_weekend_zero_on_friday(self, autumn_book):
        for variant, n in (("base", 20), ("peak", 10)):
            cells = align_weekend_futures(autumn_book, D(2016, 9, 30), variant)
            assert len(cells) == n
            assert np.all(cells.values == 0.0)
            assert all(t is None for t in cells.trade_dates)

    def test_zero_cells_dated_by_last_weekend(self, autumn_book):
        # Friday 30 Sep stands in for the weekend of 24-25 Sep
        cells = align_weekend_futures(autumn_book, D(2016, 9, 30), "base")
        known = dict(zip(cells.names, cells.known_from))
        assert known["fut.weekend.base.m1.l0"] == D(2016, 9, 23)
        assert known["fut.weekend.base.m12.l1"] == D(2016, 9, 24) - dt.timedelta(days=19)
        saturday = align_weekend_futures(autumn_book, D(2016, 10, 1), "base")
        assert dict(zip(saturday.names, saturday.known_from))["fut.weekend.base.m1.l0"] == D(2016, 9, 30)

    def test_weekend_saturday(self, autumn_book):
        cells = align_weekend_futures(autumn_book, D(2016, 10, 1), "base")
        got = names_to_dates(cells)
        for m, trade in self.WEEKEND_LAG0.items():
            if m == 1:
                assert got[f"fut.weekend.base.m1.l0"] is None and got["fut.weekend.base.m1.l1"] is None
                assert cells.cell(1, 0)[0] == 0.0 and cells.cell(1, 1)[0] == 0.0
            else:
                assert got[f"fut.weekend.base.m{m}.l0"] == trade
                assert got[f"fut.weekend.base.m{m}.l1"] == trade - dt.timedelta(days=7)

    def test_weekend_sunday(self, autumn_book):
        cells = align_weekend_futures(autumn_book, D(2016, 10, 2), "base")
        got = names_to_dates(cells)
        for m, trade in self.WEEKEND_LAG0.items():
            assert got[f"fut.weekend.base.m{m}.l0"] == trade
            assert got[f"fut.weekend.base.m{m}.l1"] == trade - dt.timedelta(days=7)
        assert got["fut.weekend.base.m1.l0"].weekday() == 4
        assert got["fut.weekend.base.m2.l0"].weekday() == 3
        assert not cells.missing.any()

    @pytest.mark.parametrize("target", sorted(MONTH))
    def test_month(self, autumn_book, target):
        cells = align_month_future(autumn_book, target, "base", GERMAN_UNITY)
        assert cells.trade_dates == [self.MONTH[target]]
        assert len(cells) == 1


class TestWeekRule:
    def test_saturday_uses_previous_friday(self):
        assert week_base_date(D(2016, 10, 22)) == (D(2016, 10, 14), 0)

    def test_holiday_friday_moves_back(self):
        base, shift = week_base_date(D(2016, 12, 28), 0, {D(2016, 12, 23)})
        assert base == D(2016, 12, 22) and shift == 1

    def test_holiday_friday_looks_up_same_delivery_week(self):
        holidays = frozenset({D(2016, 12, 23)})
        book = forward_fill(full_book(D(2016, 11, 1), D(2017, 1, 31), tagged_price, holidays), holidays)
        cells = align_week_futures(book, D(2016, 12, 28), "base", holidays)
        value, trade, _ = cells.cell(3, 0)
        assert trade == D(2016, 12, 22)
        # Thursday quote with maturity 4 delivers from the same Monday as Friday's maturity 3
        assert value == D(2016, 12, 22).toordinal() * 100 + 4


class TestMonthRule:
    def test_fixed_over_month(self, autumn_book):
        a = align_month_future(autumn_book, D(2016, 10, 5), "base", GERMAN_UNITY)
        b = align_month_future(autumn_book, D(2016, 10, 29), "base", GERMAN_UNITY)
        assert a.values[0] == b.values[0]
        assert a.trade_dates == [D(2016, 9, 30)]

    def test_weekend_month_end(self):
        # April 2016 ends on a Saturday
        assert month_base_date(D(2016, 5, 10)) == D(2016, 4, 29)


class TestBuildMatrix:
    @pytest.fixture(scope="class")
    @staticmethod
    def setting():
        holidays = frozenset({D(2016, 10, 3), D(2016, 12, 25), D(2016, 12, 26)})
        book = forward_fill(full_book(D(2015, 11, 1), D(2017, 1, 31), tagged_price, holidays), holidays)
        panel = random_panel(D(2015, 12, 20), 400)
        return panel, book, holidays

    def test_shape(self, setting):
        panel, book, holidays = setting
        first = D(2016, 1, 1)
        dates = [first + dt.timedelta(days=i) for i in range(365)]
        m = build_matrix(panel, book, holidays, 5, dates)
        assert m.X.shape == (365, 323) and m.y.shape == (365,)
        assert m.y[0] == panel.row(first)[4]
        assert not m.missing.any()

    def test_hour_changes_only_response(self, setting):
        panel, book, holidays = setting
        rng = (D(2016, 9, 1), D(2016, 10, 31))
        a = build_matrix(panel, book, holidays, 1, rng)
        b = build_matrix(panel, book, holidays, 17, rng)
        assert np.array_equal(a.X, b.X)
        assert not np.array_equal(a.y, b.y)

    def test_holiday_row_sunday_dummy(self, setting):
        panel, book, holidays = setting
        m = build_matrix(panel, book, holidays, 1, (D(2016, 10, 1), D(2016, 10, 5)))
        dummies = m.X[:, -11:-4]
        assert dummies[2].tolist() == [0, 0, 0, 0, 0, 0, 1]
        assert dummies[3].tolist() == [0, 1, 0, 0, 0, 0, 0]

    def test_row_matches_block_functions(self, setting):
        panel, book, holidays = setting
        target = D(2016, 10, 2)
        m = build_matrix(panel, book, holidays, 3, (target, target))
        expected = np.concatenate([ar_block(panel, target).ravel()]
                                  + [c.values for c in align_futures(book, target, holidays)])
        assert np.array_equal(m.X[0, :312], expected)

    def test_deterministic(self, setting):
        panel, book, holidays = setting
        a = build_table(panel, book, holidays, D(2016, 3, 1), D(2016, 3, 31))
        b = build_table(panel, book, holidays, D(2016, 3, 1), D(2016, 3, 31))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.trade_ord, b.trade_ord)

    def test_targets_past_panel_leave_unknown_lags(self, setting):
        panel, book, holidays = setting
        t = build_table(panel, book, holidays, panel.end - dt.timedelta(days=2), panel.end + dt.timedelta(days=3))
        assert not np.isnan(t.X[:4, :168]).any()
        assert np.isnan(t.X[4, :168]).any()
        assert not np.isnan(t.X[:, 168:]).any()

    def test_short_history(self, setting):
        panel, book, holidays = setting
        with pytest.raises(ValueError, match="history"):
            build_table(panel, book, holidays, panel.start + dt.timedelta(days=3), panel.start + dt.timedelta(days=9))

    def test_missing_quote_flagged(self, setting):
        panel, _, holidays = setting
        book = forward_fill(FuturesBook(), holidays)
        m = build_matrix(panel, book, holidays, 1, (D(2016, 3, 1), D(2016, 3, 1)))
        day_cols = [i for i, c in enumerate(m.columns) if c.product == "day"]
        assert m.missing[0, day_cols].all() and np.all(m.X[0, day_cols] == 0.0)

    def test_dump(self, setting, tmp_path):
        panel, book, holidays = setting
        m = build_matrix(panel, book, holidays, 2, (D(2016, 3, 1), D(2016, 3, 3)))
        dump_features(m, tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        header = lines[0].split(",")
        assert header[:3] == ["date", "y.h02", "ar.h01.l1"] and len(header) == 325
        assert len(lines) == 4
        assert float(lines[1].split(",")[1]) == m.y[0]


class TestObservability:
    @pytest.fixture(scope="class")
    @staticmethod
    def table():
        book = forward_fill(full_book(D(2016, 5, 1), D(2016, 8, 31), tagged_price))
        panel = random_panel(D(2016, 5, 20), 80)
        return build_table(panel, book, frozenset(), D(2016, 6, 1), D(2016, 8, 5))

    def col(self, name):
        return FULL_SPEC.names.index(name)

    def test_day_lag_rules(self, table):
        origin = D(2016, 6, 30)
        one = observable_columns(table, origin + dt.timedelta(days=1), origin)
        three = observable_columns(table, origin + dt.timedelta(days=3), origin)
        assert one[self.col("fut.day.base.m2.l0")]
        assert not three[self.col("fut.day.base.m2.l0")]
        assert three[self.col("fut.day.base.m2.l1")]

    def test_horizon_one_keeps_everything(self, table):
        origin = D(2016, 6, 30)
        assert observable_columns(table, origin + dt.timedelta(days=1), origin).all()

    def test_monotone_in_horizon(self, table):
        origin = D(2016, 6, 20)
        prev = None
        for c in range(1, 29):
            cur = observable_columns(table, origin + dt.timedelta(days=c), origin)
            if prev is not None:
                assert not np.any(cur & ~prev)
            prev = cur

    def test_month_observable_all_horizon_from_month_end(self, table):
        origin = D(2016, 6, 30)
        col = self.col("fut.month.base.m1.l0")
        assert all(observable_columns(table, origin + dt.timedelta(days=c), origin)[col] for c in range(1, 29))

    def test_deterministic_columns_always_observable(self, table):
        ar_cal = [i for i, c in enumerate(FULL_SPEC.columns) if c.kind != "future"]
        assert np.all(table.trade_ord[:, ar_cal] == ALWAYS_OBSERVABLE)
        assert observability_mask(table.trade_ord, D(1900, 1, 1))[:, ar_cal].all()
