"""Evaluation indices and observed-vs-ensemble comparisons.

Index families:

* percent wet days, pooled per season over (site, season-year) cells and
  compared as a Q-Q table against per-rank ensemble medians;
* maximum consecutive dry days per season, same Q-Q treatment;
* lagged interstation correlations (phi coefficient of the 0/1 series)
  per calendar month, lag and ordered site pair, compared as scatter
  points against the ensemble median;
* mean / standard deviation / interstation correlation of the total
  number of wet days at monthly, seasonal and annual scales.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import DRY, MISSING, WET, OccurrenceRecord, SeasonMap, months_of, years_of
from .errors import AlignmentError, EvaluationError

QQ_INDICES = ("pct_wet", "max_dry_run")
SCATTER_INDICES = ("lag_corr", "agg_month", "agg_season", "agg_year")
ALL_INDICES = QQ_INDICES + SCATTER_INDICES

_AGG_SCALE = {"agg_month": "MONTH", "agg_season": "SEASON", "agg_year": "YEAR"}


def _season_keys(occ: OccurrenceRecord, season_map: SeasonMap):
    """Per-day (season label, attributed year) arrays."""
    months = months_of(occ.dates)
    years = years_of(occ.dates)
    seasons = np.array([season_map.season_of(m) for m in months])
    season_years = np.where(months == 12, years + 1, years)
    return seasons, season_years


def pct_wet(
    occ: OccurrenceRecord, season: str, year: int, site, season_map: SeasonMap = None
) -> float:
    """Wet fraction over non-missing days of one (season, year, site) cell.

    NaN when the cell has no observed day (skipped by the pooling, not an
    error).
    """
    season_map = season_map or SeasonMap()
    seasons, season_years = _season_keys(occ, season_map)
    i = site if isinstance(site, (int, np.integer)) else occ.sites.index(site)
    seq = occ.states[(seasons == season) & (season_years == year), i]
    n_obs = int((seq != MISSING).sum())
    if n_obs == 0:
        return math.nan
    return int((seq == WET).sum()) / n_obs


def _max_run(flags: np.ndarray) -> int:
    """Length of the longest run of True values."""
    if flags.size == 0:
        return 0
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return int((ends - starts).max()) if starts.size else 0


def max_dry_run(
    occ: OccurrenceRecord, season: str, year: int, site, season_map: SeasonMap = None
) -> int:
    """Longest run of consecutive DRY days inside one (season, year) window.

    Missing days terminate a run; runs crossing the window edges count
    only their inside portion.
    """
    season_map = season_map or SeasonMap()
    seasons, season_years = _season_keys(occ, season_map)
    i = site if isinstance(site, (int, np.integer)) else occ.sites.index(site)
    seq = occ.states[(seasons == season) & (season_years == year), i]
    return _max_run(seq == DRY)


def lagged_interstation_corr(
    occ: OccurrenceRecord, a, b, k: int, month: int
) -> float:
    """Pearson correlation of O_{t,a} with O_{t-k,b}, t restricted to the month.

    Pairs with a missing member are dropped. NaN when fewer than two
    valid pairs remain or either margin has zero variance.
    """
    ia = a if isinstance(a, (int, np.integer)) else occ.sites.index(a)
    ib = b if isinstance(b, (int, np.integer)) else occ.sites.index(b)
    table = lag_corr_table(occ, max_lag=k, months=(month,), lags=(k,))
    return table[(month, k, ia, ib)]


def lag_corr_table(
    occ: OccurrenceRecord, max_lag: int = 2, months=None, lags=None
) -> dict:
    """All lagged interstation correlations, keyed (month, lag, a, b).

    Covers every ordered site pair for each lag, plus a = b for lags >= 1
    (the lag autocorrelation); a = b at lag 0 is omitted (identically 1).
    """
    from .data import month_slice

    s = len(occ.sites)
    months = months or range(1, 13)
    lags = lags if lags is not None else range(max_lag + 1)
    out = {}
    for month in months:
        base = month_slice(occ, month)
        for k in lags:
            idx = base[base >= k]
            x = occ.states[idx]
            y = occ.states[idx - k]
            wet_x = (x == WET).astype(float)
            wet_y = (y == WET).astype(float)
            obs_x = (x != MISSING).astype(float)
            obs_y = (y != MISSING).astype(float)
            n = obs_x.T @ obs_y
            sx = wet_x.T @ obs_y  # sum of x over valid pairs (x binary: x^2 = x)
            sy = obs_x.T @ wet_y
            sxy = wet_x.T @ wet_y
            with np.errstate(invalid="ignore", divide="ignore"):
                mx = sx / n
                my = sy / n
                cov = sxy / n - mx * my
                var_x = mx * (1.0 - mx)
                var_y = my * (1.0 - my)
                corr = cov / np.sqrt(var_x * var_y)
            corr[n < 2] = math.nan
            for a in range(s):
                for b in range(s):
                    if a == b and k == 0:
                        continue
                    out[(month, k, a, b)] = float(corr[a, b])
    return out


@dataclass(frozen=True)
class AggTotals:
    """Statistics of per-period total wet days at one aggregation scale.

    Keys: mean/std are (group, site_index); corr is (group, a, b) with
    a < b. Groups are calendar months 1..12, season labels, or "ANNUAL".
    """

    scale: str
    mean: dict
    std: dict
    corr: dict


def aggregate_totals(
    occ: OccurrenceRecord, scale: str, season_map: SeasonMap = None
) -> AggTotals:
    """Mean/std per site and correlation per pair of period wet-day totals.

    The total for a period instance is the wet fraction over its observed
    days times the number of calendar days of the period, so partially
    missing periods are scaled rather than undercounted.
    """
    season_map = season_map or SeasonMap()
    months = months_of(occ.dates)
    years = years_of(occ.dates)
    if scale == "MONTH":
        groups = months
        instances = years
        group_labels = list(range(1, 13))
    elif scale == "SEASON":
        groups, instances = _season_keys(occ, season_map)
        group_labels = list(season_map.seasons)
    elif scale == "YEAR":
        groups = np.full(len(months), "ANNUAL")
        instances = years
        group_labels = ["ANNUAL"]
    else:
        raise EvaluationError(f"unknown aggregation scale {scale!r}")

    s = len(occ.sites)
    mean, std, corr = {}, {}, {}
    for g in group_labels:
        g_mask = groups == g
        inst_ids = np.unique(instances[g_mask])
        totals = np.full((len(inst_ids), s), math.nan)
        for row, inst in enumerate(inst_ids):
            states = occ.states[g_mask & (instances == inst)]
            n_days = states.shape[0]
            n_obs = (states != MISSING).sum(axis=0)
            n_wet = (states == WET).sum(axis=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                totals[row] = np.where(n_obs > 0, n_wet / np.maximum(n_obs, 1) * n_days, math.nan)
        for i in range(s):
            col = totals[:, i]
            col = col[~np.isnan(col)]
            mean[(g, i)] = float(col.mean()) if col.size else math.nan
            std[(g, i)] = float(col.std(ddof=1)) if col.size > 1 else math.nan
        for i in range(s):
            for j in range(i + 1, s):
                both = ~np.isnan(totals[:, i]) & ~np.isnan(totals[:, j])
                corr[(g, i, j)] = _pearson(totals[both, i], totals[both, j])
    return AggTotals(scale=scale, mean=mean, std=std, corr=corr)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 2:
        return math.nan
    vx = x - x.mean()
    vy = y - y.mean()
    den = math.sqrt((vx @ vx) * (vy @ vy))
    if den == 0.0:
        return math.nan
    return float((vx @ vy) / den)


@dataclass(frozen=True)
class QQTable:
    """Sorted observed values vs per-rank ensemble quantile medians."""

    observed: np.ndarray
    ensemble_median: np.ndarray
    quantiles: dict  # level -> array


@dataclass(frozen=True)
class ScatterTable:
    """One observed value and the ensemble median per label."""

    labels: list
    observed: np.ndarray
    ensemble_median: np.ndarray
    quantiles: dict  # level -> array


@dataclass(frozen=True)
class EnsembleComparison:
    n_replicates: int
    qq: dict = field(default_factory=dict)       # index -> season -> QQTable
    scatter: dict = field(default_factory=dict)  # index -> ScatterTable


def _pooled_seasonal(occ, season_map, value_fn) -> dict:
    """Season -> pooled values over (site, season-year), NaN cells dropped."""
    seasons, season_years = _season_keys(occ, season_map)
    out = {}
    for season in season_map.seasons:
        s_mask = seasons == season
        vals = []
        for year in np.unique(season_years[s_mask]):
            states = occ.states[s_mask & (season_years == year)]
            for i in range(states.shape[1]):
                v = value_fn(states[:, i])
                if not math.isnan(v):
                    vals.append(v)
        out[season] = np.array(vals)
    return out


def _pct_wet_of(seq: np.ndarray) -> float:
    n_obs = int((seq != MISSING).sum())
    if n_obs == 0:
        return math.nan
    return int((seq == WET).sum()) / n_obs


def _max_dry_of(seq: np.ndarray) -> float:
    if int((seq != MISSING).sum()) == 0:
        return math.nan
    return float(_max_run(seq == DRY))


def _resample_sorted(values: np.ndarray, n: int) -> np.ndarray:
    """Empirical quantile function of `values` at n ranks."""
    if values.size == n:
        return np.sort(values)
    if values.size == 0:
        return np.full(n, math.nan)
    probs = (np.arange(n) + 0.5) / n
    return np.quantile(values, probs, method="linear")


def _check_alignment(observed: OccurrenceRecord, ensemble) -> None:
    if not ensemble:
        raise AlignmentError("ensemble is empty")
    for i, rep in enumerate(ensemble):
        if rep.sites != observed.sites:
            raise AlignmentError(f"replicate {i}: site list differs from observed")
        if len(rep.dates) != len(observed.dates) or not np.array_equal(
            rep.dates, observed.dates
        ):
            raise AlignmentError(f"replicate {i}: calendar differs from observed")


def compare(
    observed: OccurrenceRecord,
    ensemble,
    indices=ALL_INDICES,
    season_map: SeasonMap = None,
    max_lag: int = 2,
    quantile_levels=(0.05, 0.95),
) -> EnsembleComparison:
    """Observed-vs-ensemble comparison for the selected index families."""
    season_map = season_map or SeasonMap()
    _check_alignment(observed, ensemble)
    unknown = set(indices) - set(ALL_INDICES)
    if unknown:
        raise EvaluationError(f"unknown indices: {sorted(unknown)}")

    qq = {}
    for name, value_fn in (("pct_wet", _pct_wet_of), ("max_dry_run", _max_dry_of)):
        if name not in indices:
            continue
        obs_pools = _pooled_seasonal(observed, season_map, value_fn)
        rep_pools = [_pooled_seasonal(rep, season_map, value_fn) for rep in ensemble]
        tables = {}
        for season, obs_vals in obs_pools.items():
            n = obs_vals.size
            if n == 0:
                continue
            stack = np.stack([_resample_sorted(p[season], n) for p in rep_pools])
            tables[season] = QQTable(
                observed=np.sort(obs_vals),
                ensemble_median=np.median(stack, axis=0),
                quantiles={q: np.quantile(stack, q, axis=0) for q in quantile_levels},
            )
        qq[name] = tables

    scatter = {}
    if "lag_corr" in indices:
        obs_table = lag_corr_table(observed, max_lag)
        rep_tables = [lag_corr_table(rep, max_lag) for rep in ensemble]
        labels = sorted(obs_table)
        stack = np.array([[t[lab] for lab in labels] for t in rep_tables])
        scatter["lag_corr"] = _scatter_from_stack(labels, obs_table, stack, quantile_levels)

    for name in ("agg_month", "agg_season", "agg_year"):
        if name not in indices:
            continue
        scale = _AGG_SCALE[name]
        obs_agg = aggregate_totals(observed, scale, season_map)
        rep_aggs = [aggregate_totals(rep, scale, season_map) for rep in ensemble]
        labels, obs_flat = _flatten_agg(obs_agg)
        stack = np.array([_flatten_agg(a)[1] for a in rep_aggs])
        with warnings.catch_warnings():
            # labels undefined in every replicate (e.g. single-instance std)
            # reduce to NaN without complaint
            warnings.simplefilter("ignore", RuntimeWarning)
            scatter[name] = ScatterTable(
                labels=labels,
                observed=np.array(obs_flat),
                ensemble_median=np.nanmedian(stack, axis=0),
                quantiles={q: np.nanquantile(stack, q, axis=0) for q in quantile_levels},
            )

    return EnsembleComparison(n_replicates=len(ensemble), qq=qq, scatter=scatter)


def _scatter_from_stack(labels, obs_table, stack, quantile_levels) -> ScatterTable:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return ScatterTable(
            labels=labels,
            observed=np.array([obs_table[lab] for lab in labels]),
            ensemble_median=np.nanmedian(stack, axis=0),
            quantiles={q: np.nanquantile(stack, q, axis=0) for q in quantile_levels},
        )


def _flatten_agg(agg: AggTotals):
    labels = []
    values = []
    for stat, table in (("mean", agg.mean), ("std", agg.std), ("corr", agg.corr)):
        for key in sorted(table, key=lambda k: tuple(str(x) for x in k)):
            labels.append((stat,) + key)
            values.append(table[key])
    return labels, values
