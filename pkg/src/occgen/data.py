"""Daily multisite precipitation records: ingestion, binarization, slicing.

File format: delimited text (comma or tab) with header
``year,month,day,<site1>,...,<siteS>``. Depths are decimal mm; missing
cells are empty, ``NA``, or ``-Inf`` (legacy sentinel, accepted on input
but never written). A ``T``/``trace`` token marks a trace observation and
is counted as depth 0 (dry); any other non-numeric token is treated as
missing.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CalendarGapError, ParseError

WET = np.int8(1)
DRY = np.int8(0)
MISSING = np.int8(-1)

_MISSING_TOKENS = {"", "na", "nan", "-inf", "-infinity"}
_TRACE_TOKENS = {"t", "trace"}


def date_range(start: dt.date, n_days: int) -> np.ndarray:
    """Contiguous daily dates as a datetime64[D] array."""
    d0 = np.datetime64(start.isoformat(), "D")
    return d0 + np.arange(n_days)


def months_of(dates: np.ndarray) -> np.ndarray:
    """Calendar month (1..12) of each date."""
    return dates.astype("datetime64[M]").astype(int) % 12 + 1


def years_of(dates: np.ndarray) -> np.ndarray:
    """Calendar year of each date."""
    return dates.astype("datetime64[Y]").astype(int) + 1970


@dataclass(frozen=True)
class SeasonMap:
    """Month -> season assignment.

    Default is the climatological DJF/MAM/JJA/SON split; December belongs
    to the following year's winter when grouping by (season, year).
    """

    assignment: dict = field(
        default_factory=lambda: {
            12: "WINTER", 1: "WINTER", 2: "WINTER",
            3: "SPRING", 4: "SPRING", 5: "SPRING",
            6: "SUMMER", 7: "SUMMER", 8: "SUMMER",
            9: "FALL", 10: "FALL", 11: "FALL",
        }
    )

    def season_of(self, month: int) -> str:
        return self.assignment[month]

    def season_year(self, month: int, year: int) -> int:
        """Year a (month, year) day is attributed to for seasonal statistics."""
        return year + 1 if month == 12 else year

    @property
    def seasons(self) -> tuple:
        return ("WINTER", "SPRING", "SUMMER", "FALL")


@dataclass(frozen=True)
class PrecipRecord:
    """Contiguous daily precipitation depths at s sites; NaN marks missing."""

    dates: np.ndarray  # datetime64[D], strictly one day apart
    sites: tuple
    values: np.ndarray  # (n_days, s) float, depths in mm, NaN = missing

    def __post_init__(self):
        if self.values.shape != (len(self.dates), len(self.sites)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.dates)} days x {len(self.sites)} sites"
            )
        deltas = np.diff(self.dates.astype(int))
        if np.any(deltas != 1):
            bad = int(np.argmax(deltas != 1))
            raise CalendarGapError(self.dates[bad] + 1)
        with np.errstate(invalid="ignore"):
            if np.any(self.values < 0):
                raise ValueError("negative precipitation depth")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def slice_dates(self, start: dt.date, end: dt.date) -> "PrecipRecord":
        """Sub-record covering [start, end] inclusive."""
        mask = (self.dates >= np.datetime64(start.isoformat())) & (
            self.dates <= np.datetime64(end.isoformat())
        )
        return PrecipRecord(self.dates[mask], self.sites, self.values[mask])


@dataclass(frozen=True)
class OccurrenceRecord:
    """Daily WET/DRY/MISSING states, same layout as its source record."""

    dates: np.ndarray
    sites: tuple
    states: np.ndarray  # (n_days, s) int8 in {WET, DRY, MISSING}

    def __post_init__(self):
        if self.states.shape != (len(self.dates), len(self.sites)):
            raise ValueError("states shape does not match dates x sites")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def slice_dates(self, start: dt.date, end: dt.date) -> "OccurrenceRecord":
        mask = (self.dates >= np.datetime64(start.isoformat())) & (
            self.dates <= np.datetime64(end.isoformat())
        )
        return OccurrenceRecord(self.dates[mask], self.sites, self.states[mask])


def _parse_cell(token: str, row: int) -> float:
    t = token.strip().lower()
    if t in _TRACE_TOKENS:
        return 0.0
    try:
        v = float(t) if t else math.nan
    except ValueError:
        # unknown quality flag: treated as missing
        return math.nan
    if math.isnan(v):
        return math.nan
    if v == float("-inf"):
        return math.nan
    if v < 0:
        raise ParseError(f"row {row}: negative depth {token!r}")
    if not math.isfinite(v):
        raise ParseError(f"row {row}: non-finite depth {token!r}")
    return v


def load_record(path, date_columns: Sequence[str] = ("year", "month", "day")) -> PrecipRecord:
    """Read a delimited daily record; all non-date columns are sites."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}: empty file")
    delim = "\t" if "\t" in lines[0] else ","
    header = [h.strip() for h in lines[0].split(delim)]
    try:
        date_idx = [header.index(c) for c in date_columns]
    except ValueError as exc:
        raise ParseError(f"{path}: missing date column ({exc})") from None
    site_idx = [i for i in range(len(header)) if i not in date_idx]
    sites = tuple(header[i] for i in site_idx)
    if not sites:
        raise ParseError(f"{path}: no site columns")

    rows = []
    for rownum, line in enumerate(lines[1:], start=2):
        cells = line.split(delim)
        if len(cells) != len(header):
            raise ParseError(f"row {rownum}: expected {len(header)} fields, got {len(cells)}")
        try:
            y, m, d = (int(cells[i]) for i in date_idx)
            date = dt.date(y, m, d)
        except ValueError as exc:
            raise ParseError(f"row {rownum}: bad date ({exc})") from None
        depths = [_parse_cell(cells[i], rownum) for i in site_idx]
        rows.append((date, depths))
    rows.sort(key=lambda r: r[0])

    expected = rows[0][0]
    for date, _ in rows:
        if date != expected:
            raise CalendarGapError(np.datetime64(expected.isoformat(), "D"))
        expected += dt.timedelta(days=1)

    dates = date_range(rows[0][0], len(rows))
    values = np.array([r[1] for r in rows], dtype=float)
    return PrecipRecord(dates=dates, sites=sites, values=values)


def write_record(record: PrecipRecord, path, delim: str = ",") -> None:
    """Write a record in the ingestion format; deterministic byte output."""
    years = years_of(record.dates)
    months = months_of(record.dates)
    days = (record.dates - record.dates.astype("datetime64[M]")).astype(int) + 1
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(delim.join(("year", "month", "day") + tuple(record.sites)) + "\n")
        for t in range(record.n_days):
            cells = [str(years[t]), str(months[t]), str(days[t])]
            for v in record.values[t]:
                cells.append("" if math.isnan(v) else repr(float(v)))
            fh.write(delim.join(cells) + "\n")


def binarize(record: PrecipRecord, wet_threshold_mm: float = 1.0) -> OccurrenceRecord:
    """Map depths to WET (>= threshold) / DRY (< threshold) / MISSING."""
    if not wet_threshold_mm > 0:
        raise ValueError(f"wet threshold must be positive, got {wet_threshold_mm}")
    states = np.full(record.values.shape, MISSING, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        states[record.values >= wet_threshold_mm] = WET
        states[record.values < wet_threshold_mm] = DRY
    return OccurrenceRecord(dates=record.dates, sites=record.sites, states=states)


def month_slice(occ: OccurrenceRecord, month: int) -> np.ndarray:
    """Global day indices of all days falling in the given calendar month.

    Indices are positions in the full record, so lag-k partners
    (index - k) can reach back across month boundaries.
    """
    if not 1 <= month <= 12:
        raise ValueError(f"month must be in 1..12, got {month}")
    return np.flatnonzero(months_of(occ.dates) == month)


def occurrence_to_precip(occ: OccurrenceRecord, wet_depth_mm: float = 1.0) -> PrecipRecord:
    """WET -> wet_depth_mm, DRY -> 0, MISSING -> NaN."""
    values = np.where(occ.states == WET, wet_depth_mm, 0.0)
    values[occ.states == MISSING] = math.nan
    return PrecipRecord(dates=occ.dates, sites=occ.sites, values=values)


def synth_record(truth, years: int, rng, missing_rate: float = 0.0) -> PrecipRecord:
    """Synthetic daily record drawn from a fitted/constructed truth model.

    Simulates occurrence states for `years` calendar years starting
    1961-01-01, maps WET -> 1.0 mm and DRY -> 0.0, then masks cells
    missing independently at `missing_rate`.
    """
    from .simulate import SimulationConfig, simulate  # deferred: avoids cycle

    if not 0.0 <= missing_rate < 1.0:
        raise ValueError(f"missing_rate must be in [0, 1), got {missing_rate}")
    start = dt.date(1961, 1, 1)
    end = dt.date(1960 + years, 12, 31)
    config = SimulationConfig(start_date=start, end_date=end, n_replicates=1,
                              base_seed=rng.seed)
    occ = simulate(truth, config, replicate_id=rng.stream_id)
    record = occurrence_to_precip(occ)
    if missing_rate > 0.0:
        mask = rng.substream(7).generator().random(record.values.shape) < missing_rate
        values = record.values.copy()
        values[mask] = math.nan
        record = PrecipRecord(record.dates, record.sites, values)
    return record
