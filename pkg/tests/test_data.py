import datetime as dt
import math

import numpy as np
import pytest

from occgen.cli import make_truth
from occgen.data import (
    DRY,
    MISSING,
    WET,
    OccurrenceRecord,
    PrecipRecord,
    SeasonMap,
    binarize,
    date_range,
    load_record,
    month_slice,
    months_of,
    occurrence_to_precip,
    synth_record,
    write_record,
)
from occgen.errors import CalendarGapError, ParseError
from occgen.numerics import RngStream


def make_record(start, rows, sites=("A",)):
    values = np.array(rows, dtype=float)
    return PrecipRecord(date_range(start, len(values)), tuple(sites), values)


def write_csv(path, text):
    path.write_text(text)
    return path


class TestLoadRecord:
    def test_basic_three_rows(self, tmp_path):
        p = write_csv(
            tmp_path / "r.csv",
            "year,month,day,A\n1990,1,1,0\n1990,1,2,1.0\n1990,1,3,NA\n",
        )
        rec = load_record(p)
        assert rec.n_days == 3
        assert rec.sites == ("A",)
        assert rec.values[0, 0] == 0.0
        assert rec.values[1, 0] == 1.0
        assert math.isnan(rec.values[2, 0])

    def test_calendar_gap_names_date(self, tmp_path):
        p = write_csv(
            tmp_path / "r.csv",
            "year,month,day,A\n1990,1,1,0\n1990,1,3,1\n",
        )
        with pytest.raises(CalendarGapError, match="1990-01-02"):
            load_record(p)

    def test_negative_depth_names_row(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "year,month,day,A\n1990,1,1,-3\n")
        with pytest.raises(ParseError, match="row 2"):
            load_record(p)

    def test_trace_counts_as_dry_zero(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "year,month,day,A\n1990,1,1,T\n")
        assert load_record(p).values[0, 0] == 0.0

    def test_unknown_flag_becomes_missing(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "year,month,day,A\n1990,1,1,E\n")
        assert math.isnan(load_record(p).values[0, 0])

    def test_neg_inf_sentinel_accepted(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "year,month,day,A\n1990,1,1,-Inf\n")
        assert math.isnan(load_record(p).values[0, 0])

    def test_tab_delimited(self, tmp_path):
        p = write_csv(tmp_path / "r.tsv", "year\tmonth\tday\tA\n1990\t1\t1\t2.5\n")
        assert load_record(p).values[0, 0] == 2.5

    def test_full_1961_2001_day_count(self, tmp_path):
        days = date_range(dt.date(1961, 1, 1), 14975)
        assert str(days[-1]) == "2001-12-31"  # 41 years incl. leap days
        rec = PrecipRecord(days, tuple(f"S{i}" for i in range(10)), np.zeros((14975, 10)))
        assert rec.n_days == 14975

    def test_round_trip_bit_identical(self, tmp_path):
        rec = make_record(dt.date(1975, 2, 26), [[0.0, 3.7], [math.nan, 0.30000000000000004],
                                                 [1.0, 12.25]], sites=("A", "B"))
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_record(rec, p1)
        rec2 = load_record(p1)
        write_record(rec2, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestBinarize:
    def test_paper_threshold_cases(self):
        rec = make_record(dt.date(2000, 1, 1), [[1.0], [0.9], [math.nan]])
        occ = binarize(rec, 1.0)
        assert occ.states[0, 0] == WET  # exactly at threshold counts wet
        assert occ.states[1, 0] == DRY
        assert occ.states[2, 0] == MISSING

    def test_idempotent_in_effect(self):
        rec = make_record(dt.date(2000, 1, 1), [[0.0], [5.0], [math.nan], [1.0]])
        occ = binarize(rec, 1.0)
        occ2 = binarize(occurrence_to_precip(occ), 1.0)
        assert np.array_equal(occ.states, occ2.states)

    def test_nonpositive_threshold_rejected(self):
        rec = make_record(dt.date(2000, 1, 1), [[0.0]])
        with pytest.raises(ValueError):
            binarize(rec, 0.0)


class TestMonthSlice:
    def test_cross_month_indices(self):
        rec = make_record(dt.date(2001, 1, 1), [[0.0]] * 33)  # Jan 1 - Feb 2
        occ = binarize(rec, 1.0)
        idx = month_slice(occ, 2)
        assert list(idx) == [31, 32]

    def test_table_day_counts_1961_1985(self):
        n = (dt.date(1986, 1, 1) - dt.date(1961, 1, 1)).days
        rec = make_record(dt.date(1961, 1, 1), [[0.0]] * n)
        occ = binarize(rec, 1.0)
        assert len(month_slice(occ, 1)) == 775
        assert len(month_slice(occ, 6)) == 750

    def test_partition_of_days(self):
        rec = make_record(dt.date(1999, 1, 1), [[0.0]] * 800)
        occ = binarize(rec, 1.0)
        all_idx = np.concatenate([month_slice(occ, m) for m in range(1, 13)])
        assert sorted(all_idx) == list(range(800))


class TestSeasonMap:
    def test_contiguous_blocks(self):
        sm = SeasonMap()
        assert [sm.season_of(m) for m in (12, 1, 2)] == ["WINTER"] * 3
        assert [sm.season_of(m) for m in (9, 10, 11)] == ["FALL"] * 3

    def test_december_rolls_forward(self):
        sm = SeasonMap()
        assert sm.season_year(12, 1990) == 1991
        assert sm.season_year(1, 1990) == 1990


@pytest.fixture(scope="module")
def truth():
    return make_truth(2, 1, 0.4, 0.5, 0.3)


class TestSynthRecord:
    def test_one_year_shape(self, truth):
        rec = synth_record(truth, 1, RngStream(3))
        assert rec.n_days == 365  # 1961 is not a leap year
        assert len(rec.sites) == 2

    def test_no_missing_when_rate_zero(self, truth):
        rec = synth_record(truth, 2, RngStream(3))
        assert not np.any(np.isnan(rec.values))

    def test_missing_rate_concentration(self, truth):
        rec = synth_record(truth, 14, RngStream(5), missing_rate=0.1)
        frac = np.isnan(rec.values).mean()
        assert rec.values.size >= 10_000
        assert abs(frac - 0.1) <= 0.01

    def test_binarization_round_trip(self, truth):
        from occgen.simulate import SimulationConfig, simulate

        rec = synth_record(truth, 2, RngStream(11, 4))
        cfg = SimulationConfig(dt.date(1961, 1, 1), dt.date(1962, 12, 31),
                               base_seed=11)
        occ = simulate(truth, cfg, replicate_id=4)
        assert np.array_equal(binarize(rec, 1.0).states, occ.states)

    def test_bad_missing_rate(self, truth):
        with pytest.raises(ValueError):
            synth_record(truth, 1, RngStream(0), missing_rate=1.5)


class TestRecordInvariants:
    def test_gap_in_constructor(self):
        dates = np.concatenate([date_range(dt.date(2000, 1, 1), 2),
                                date_range(dt.date(2000, 1, 4), 1)])
        with pytest.raises(CalendarGapError):
            PrecipRecord(dates, ("A",), np.zeros((3, 1)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            OccurrenceRecord(date_range(dt.date(2000, 1, 1), 2), ("A",),
                             np.zeros((3, 1), dtype=np.int8))

    def test_slice_dates(self):
        rec = make_record(dt.date(2000, 1, 1), [[float(i)] for i in range(60)])
        sub = rec.slice_dates(dt.date(2000, 1, 10), dt.date(2000, 1, 19))
        assert sub.n_days == 10
        assert sub.values[0, 0] == 9.0
        assert months_of(sub.dates)[0] == 1
