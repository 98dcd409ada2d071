"""Tests for submarket statistics.

Most expectations come from the eight-user market fixture: submarket 0 holds
m1 (M 30 White), m2 (M 34 Asian), f1 (F 25 White) and f2 (F 22 Black);
submarket 1 holds m3 (M 50 White), m4 (M 54 White), f3 (F 45 White) and
f4 (F 42 Hispanic).
"""

import json
import math

import numpy as np
import pytest

from submarkets.analysis import (
    AgeGapRow,
    age_gap_matrix,
    age_quantiles,
    bundle,
    contact_matrix,
    ethnic_composition,
    format_rows,
    mixing_matrix,
    mixing_rows,
    relative_minority_age,
    reply_matrix,
    sex_ratio,
    within_fraction,
)
from submarkets.attributes import AttributeTable, Attributes, Contact, ContactLog
from submarkets.errors import DataError, UndefinedFractionError
from submarkets.graph import Graph

from .conftest import graph_of


def ages_table(ages: list[float], sex: str = "M") -> tuple[dict[str, int], AttributeTable]:
    rows = {f"u{i}": Attributes(sex, age) for i, age in enumerate(ages)}
    return {n: 0 for n in rows}, AttributeTable(rows)


class TestWithinFraction:
    def test_all_within(self):
        g = graph_of([(0, 1), (1, 2)])

        assert within_fraction(g, {"0": 0, "1": 0, "2": 0}) == 1.0

    def test_bipartite_across(self):
        g = graph_of([(0, 1), (0, 3), (2, 1), (2, 3)])

        assert within_fraction(g, {"0": 0, "2": 0, "1": 1, "3": 1}) == 0.0

    def test_three_within_one_across(self):
        g = graph_of([(0, 1), (1, 2), (0, 2), (2, 3)])

        assert within_fraction(g, {"0": 0, "1": 0, "2": 0, "3": 1}) == 0.75

    def test_internal_weight_counts_within(self):
        g = Graph.from_edges(["a", "b"], [(0, 1, 1.0)], internal=[2.0, 0.0])

        assert within_fraction(g, {"a": 0, "b": 1}) == pytest.approx(2 / 3)

    def test_contact_log(self, market_fixture):
        submarkets, _, log = market_fixture

        assert within_fraction(log, submarkets) == pytest.approx(6 / 7)

    def test_empty_log(self):
        with pytest.raises(UndefinedFractionError):
            within_fraction(ContactLog.from_records([]), {})

    def test_missing_submarket(self):
        g = graph_of([(0, 1)])

        with pytest.raises(DataError, match="'1'"):
            within_fraction(g, {"0": 0})


class TestAgeQuantiles:
    def test_five_ages(self):
        submarkets, attrs = ages_table([20, 21, 22, 23, 24])
        (row,) = age_quantiles(submarkets, attrs)

        assert row.p50 == 22.0
        assert row.count == 5
        assert row.low_support

    def test_constant_ages(self):
        submarkets, attrs = ages_table([30.0] * 12)
        (row,) = age_quantiles(submarkets, attrs)

        assert [row.p9, row.p25, row.p50, row.p75, row.p91] == [30.0] * 5
        assert not row.low_support

    def test_interpolation(self):
        submarkets, attrs = ages_table([float(a) for a in range(18, 100)] + [100.0])
        (row,) = age_quantiles(submarkets, attrs)

        # 83 ages 18..100; position 1 + 82 * 0.25 = 21.5
        assert row.p25 == pytest.approx(38.5)

    def test_by_sex(self, market_fixture):
        submarkets, attrs, _ = market_fixture
        rows = {(r.submarket, r.sex): r for r in age_quantiles(submarkets, attrs)}

        assert rows[(0, "M")].p50 == 32.0
        assert rows[(0, "F")].p50 == 23.5
        assert rows[(1, "M")].p50 == 52.0

    def test_pooled(self, market_fixture):
        submarkets, attrs, _ = market_fixture
        rows = age_quantiles(submarkets, attrs, by_sex=False)

        assert [r.sex for r in rows] == ["all", "all"]
        assert rows[0].p50 == 27.5

    def test_missing_cell_omitted(self, caplog):
        submarkets, attrs = ages_table([30, 31])
        rows = age_quantiles(submarkets, attrs)

        assert [r.sex for r in rows] == ["M"]
        assert "cell omitted" in caplog.text


class TestSexRatio:
    def test_sixty_forty(self):
        rows = {f"m{i}": Attributes("M", 30) for i in range(60)}
        rows |= {f"f{i}": Attributes("F", 30) for i in range(40)}
        submarkets = {n: 0 for n in rows}

        first, overall = sex_ratio(submarkets, AttributeTable(rows))

        assert (first.percent_men, first.percent_women) == (60.0, 40.0)
        assert overall.submarket == "overall"

    def test_fixture(self, market_fixture):
        submarkets, attrs, _ = market_fixture
        rows = sex_ratio(submarkets, attrs)

        assert [r.submarket for r in rows] == ["0", "1", "overall"]
        assert rows[-1].percent_men == 50.0
        assert rows[0].men == 2


class TestRelativeMinorityAge:
    def test_fixture(self, market_fixture):
        submarkets, attrs, _ = market_fixture
        rows = {(r.submarket, r.ethnicity): r for r in relative_minority_age(submarkets, attrs)}

        assert rows[(0, "White")].difference == 0.0
        assert rows[(0, "Black")].difference == -3.0
        assert rows[(1, "Hispanic")].difference == -3.0
        assert (0, "Asian") not in rows

    def test_men(self, market_fixture):
        submarkets, attrs, _ = market_fixture
        rows = {
            (r.submarket, r.ethnicity): r.difference
            for r in relative_minority_age(submarkets, attrs, sex="M")
        }

        assert rows == {(0, "Asian"): 4.0, (0, "White"): 0.0, (1, "White"): 0.0}

    def test_message_weighting(self):
        attrs = AttributeTable(
            {
                "a": Attributes("F", 30, "White"),
                "b": Attributes("F", 40, "White"),
                "c": Attributes("F", 30, "Black"),
                "x": Attributes("M", 35, "White"),
                "y": Attributes("M", 36, "White"),
                "z": Attributes("M", 37, "White"),
            }
        )
        submarkets = {n: 0 for n in attrs}
        log = ContactLog.from_records(
            [Contact(s, r, False) for s, r in [("x", "a"), ("y", "a"), ("z", "a"),
                                                ("x", "b"), ("x", "c")]]
        )

        by_users = relative_minority_age(submarkets, attrs)
        by_messages = relative_minority_age(submarkets, attrs, weighting="messages", log=log)

        assert by_users[0].reference_mean_age == 35.0
        assert by_messages[0].reference_mean_age == 32.5
        assert {r.ethnicity: r.difference for r in by_messages}["Black"] == -2.5

    def test_message_weighting_needs_log(self, market_fixture):
        submarkets, attrs, _ = market_fixture

        with pytest.raises(DataError, match="contact log"):
            relative_minority_age(submarkets, attrs, weighting="messages")

    def test_missing_reference_omits_submarket(self, caplog):
        attrs = AttributeTable({"a": Attributes("F", 30, "Black")})
        rows = relative_minority_age({"a": 0}, attrs)

        assert rows == []
        assert "no White users" in caplog.text


class TestEthnicComposition:
    def test_percentages(self, market_fixture):
        submarkets, attrs, _ = market_fixture
        rows = {
            (r.submarket, r.sex, r.ethnicity): r.percent
            for r in ethnic_composition(submarkets, attrs)
        }

        assert rows[(0, "F", "Black")] == 50.0
        assert rows[(1, "M", "White")] == 100.0
        assert rows[(1, "M", "Asian")] == 0.0

    def test_each_cell_sums_to_hundred(self, market_fixture):
        submarkets, attrs, _ = market_fixture
        totals: dict[tuple[int, str], float] = {}
        for r in ethnic_composition(submarkets, attrs, by_sex=False):
            totals[(r.submarket, r.sex)] = totals.get((r.submarket, r.sex), 0.0) + r.percent

        assert totals == {(0, "all"): 100.0, (1, "all"): 100.0}


class TestContactMatrix:
    def test_counts(self, market_fixture):
        submarkets, attrs, log = market_fixture
        m = contact_matrix(log, submarkets, attrs)

        assert m.sent.tolist() == [[3, 0], [1, 2]]
        assert m.replied.tolist() == [[2, 0], [0, 1]]
        assert m.reply_rates()[0, 0] == pytest.approx(2 / 3)
        assert np.isnan(m.reply_rates()[0, 1])

    def test_mixing_rows_are_stochastic(self, market_fixture):
        submarkets, attrs, log = market_fixture
        mixing = mixing_matrix(log, submarkets, attrs)

        assert mixing.tolist() == [[1.0, 0.0], [1 / 3, 2 / 3]]

    def test_identity_when_all_within(self):
        attrs = AttributeTable(
            {n: Attributes(n[0].upper(), 30) for n in ("m1", "f1", "m2", "f2")}
        )
        submarkets = {"m1": 0, "f1": 0, "m2": 1, "f2": 1}
        log = ContactLog.from_records([Contact("m1", "f1", True), Contact("m2", "f2", False)])

        assert mixing_matrix(log, submarkets, attrs).tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_reply_rate(self):
        rows = {f"m{i}": Attributes("M", 30) for i in range(10)}
        rows["f"] = Attributes("F", 30)
        log = ContactLog.from_records(
            [Contact(f"m{i}", "f", i < 4) for i in range(10)]
        )

        rates = reply_matrix(log, {n: 0 for n in rows}, AttributeTable(rows))

        assert rates.tolist() == [[0.4]]

    def test_women_to_men(self, market_fixture, caplog):
        submarkets, attrs, log = market_fixture
        m = contact_matrix(log, submarkets, attrs, direction="F->M")

        assert m.sent.tolist() == [[0, 0], [0, 1]]
        assert np.isnan(m.mixing()[0]).all()
        assert "row omitted" in caplog.text

    def test_bad_direction(self, market_fixture):
        submarkets, attrs, log = market_fixture

        with pytest.raises(DataError):
            contact_matrix(log, submarkets, attrs, direction="M->M")

    def test_tidy_rows_skip_empty_rows(self, market_fixture):
        submarkets, attrs, log = market_fixture
        rows = mixing_rows(contact_matrix(log, submarkets, attrs, direction="F->M"))

        assert [(r.sender_submarket, r.receiver_submarket) for r in rows] == [(1, 0), (1, 1)]
        assert all(r.low_support for r in rows)


class TestAgeGapMatrix:
    def test_sent(self, market_fixture):
        submarkets, attrs, log = market_fixture
        gaps = age_gap_matrix(log, attrs, submarkets)

        assert gaps.cell("White", 0, "White") == 5.0
        assert gaps.cell("White", 0, "Black") == 8.0
        assert gaps.cell("Asian", 0, "White") == 9.0
        assert gaps.cell("White", 1, "White") == 17.0
        assert math.isnan(gaps.cell("Asian", 1, "White"))

    def test_replied(self, market_fixture):
        submarkets, attrs, log = market_fixture
        gaps = age_gap_matrix(log, attrs, submarkets, stage="replied")

        assert gaps.cell("White", 1, "White") == 5.0
        assert math.isnan(gaps.cell("White", 0, "Black"))

    def test_single_record(self):
        attrs = AttributeTable({"m": Attributes("M", 30), "f": Attributes("F", 25)})
        log = ContactLog.from_records([Contact("m", "f", False)])

        gaps = age_gap_matrix(log, attrs, {"m": 0, "f": 0})

        assert gaps.cell("Other", 0, "Other") == 5.0

    def test_user_weighting(self):
        attrs = AttributeTable(
            {
                "m1": Attributes("M", 30),
                "m2": Attributes("M", 40),
                "f1": Attributes("F", 20),
                "f2": Attributes("F", 24),
                "f3": Attributes("F", 28),
            }
        )
        log = ContactLog.from_records(
            [Contact("m1", "f1", False), Contact("m1", "f2", False), Contact("m1", "f3", False),
             Contact("m2", "f1", False)]
        )
        submarkets = {n: 0 for n in attrs}

        by_messages = age_gap_matrix(log, attrs, submarkets)
        by_users = age_gap_matrix(log, attrs, submarkets, weighting="users")

        # m1 gaps 10, 6, 2; m2 gap 20
        assert by_messages.cell("Other", 0, "Other") == 9.5
        assert by_users.cell("Other", 0, "Other") == 13.0

    def test_tidy(self, market_fixture):
        submarkets, attrs, log = market_fixture
        rows = age_gap_matrix(log, attrs, submarkets).tidy()

        assert len(rows) == 5 * 2 * 5
        assert AgeGapRow("sent", "White", 0, "White", 1, 5.0) in rows

    def test_bad_stage(self, market_fixture):
        submarkets, attrs, log = market_fixture

        with pytest.raises(DataError):
            age_gap_matrix(log, attrs, submarkets, stage="read")


class TestOutputFormats:
    def test_format_rows_marks_missing_cells(self, market_fixture):
        submarkets, attrs, log = market_fixture
        text = format_rows(mixing_rows(contact_matrix(log, submarkets, attrs)))
        lines = text.splitlines()

        assert lines[0] == (
            "direction,sender_submarket,receiver_submarket,sent,replied,"
            "fraction,reply_rate,low_support"
        )
        assert lines[2] == "M->F,0,1,0,0,0.0,X,1"

    def test_format_no_rows(self):
        assert format_rows([]) == ""

    def test_bundle_nulls_nan(self, market_fixture):
        submarkets, attrs, log = market_fixture
        data = bundle("fig4", age_gap_matrix(log, attrs, submarkets).tidy(), stage="sent")
        text = json.dumps(data, allow_nan=False)

        assert json.loads(text)["stage"] == "sent"
        assert data["figure"] == "fig4"
        assert any(row["mean_gap"] is None for row in data["rows"])
