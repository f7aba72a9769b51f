"""Report emission: delimited tables, JSON documents, simple SVG plots."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .evaluate import EnsembleComparison, QQTable, ScatterTable
from .fileio import atomic_path

REPORT_FORMAT_VERSION = 1


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, np.ndarray):
        return [_jsonable(float(x)) for x in v]
    return v


def _qlabel(q: float) -> str:
    return f"q_{q:g}"


def _write_lines(path, lines) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def _write_json(path, doc) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=1, allow_nan=False)
            fh.write("\n")


def _label_columns(index: str):
    if index == "lag_corr":
        return ["month", "lag", "site_a", "site_b"]
    return ["stat", "group", "site_a", "site_b"]


def _label_cells(index: str, label, sites):
    if index == "lag_corr":
        month, k, a, b = label
        return [str(month), str(k), sites[a], sites[b]]
    stat = label[0]
    if stat == "corr":
        _, g, a, b = label
        return [stat, str(g), sites[a], sites[b]]
    _, g, a = label
    return [stat, str(g), sites[a], ""]


def write_comparison_reports(
    comp: EnsembleComparison,
    out_dir,
    period: str,
    sites,
    emit_svg: bool = False,
) -> list:
    """One CSV + JSON (optionally SVG) per index family; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index, tables in comp.qq.items():
        written += _write_qq(index, tables, comp, out_dir, period, emit_svg)
    for index, table in comp.scatter.items():
        written += _write_scatter(index, table, comp, out_dir, period, sites, emit_svg)
    return written


def _write_qq(index, tables, comp, out_dir, period, emit_svg):
    levels = next(iter(tables.values())).quantiles.keys() if tables else []
    header = ["season", "rank", "observed", "ensemble_median"] + [_qlabel(q) for q in levels]
    lines = [",".join(header)]
    doc_seasons = {}
    xs, ys = [], []
    for season, table in sorted(tables.items()):
        for rank in range(table.observed.size):
            row = [season, str(rank), _fmt(float(table.observed[rank])),
                   _fmt(float(table.ensemble_median[rank]))]
            row += [_fmt(float(table.quantiles[q][rank])) for q in levels]
            lines.append(",".join(row))
        doc_seasons[season] = {
            "observed": _jsonable(table.observed),
            "ensemble_median": _jsonable(table.ensemble_median),
            "quantiles": {_qlabel(q): _jsonable(v) for q, v in table.quantiles.items()},
        }
        xs.append(table.ensemble_median)
        ys.append(table.observed)
    base = out_dir / f"{index}-{period}"
    _write_lines(base.with_suffix(".csv"), lines)
    _write_json(base.with_suffix(".json"), {
        "format_version": REPORT_FORMAT_VERSION,
        "index": index,
        "kind": "qq",
        "period": period,
        "n_replicates": comp.n_replicates,
        "seasons": doc_seasons,
    })
    written = [base.with_suffix(".csv"), base.with_suffix(".json")]
    if emit_svg and xs:
        svg = base.with_suffix(".svg")
        svg_scatter(np.concatenate(xs), np.concatenate(ys), svg,
                    title=f"{index} ({period})",
                    xlabel="ensemble median", ylabel="observed")
        written.append(svg)
    return written


def _write_scatter(index, table: ScatterTable, comp, out_dir, period, sites, emit_svg):
    levels = list(table.quantiles.keys())
    header = _label_columns(index) + ["observed", "ensemble_median"] + [_qlabel(q) for q in levels]
    lines = [",".join(header)]
    doc_rows = []
    for pos, label in enumerate(table.labels):
        cells = _label_cells(index, label, sites)
        obs = float(table.observed[pos])
        med = float(table.ensemble_median[pos])
        row = cells + [_fmt(obs), _fmt(med)]
        row += [_fmt(float(table.quantiles[q][pos])) for q in levels]
        lines.append(",".join(row))
        doc_rows.append({
            "label": cells,
            "observed": _jsonable(obs),
            "ensemble_median": _jsonable(med),
            "quantiles": {_qlabel(q): _jsonable(float(table.quantiles[q][pos]))
                          for q in levels},
        })
    base = out_dir / f"{index}-{period}"
    _write_lines(base.with_suffix(".csv"), lines)
    _write_json(base.with_suffix(".json"), {
        "format_version": REPORT_FORMAT_VERSION,
        "index": index,
        "kind": "scatter",
        "period": period,
        "n_replicates": comp.n_replicates,
        "label_columns": _label_columns(index),
        "rows": doc_rows,
    })
    written = [base.with_suffix(".csv"), base.with_suffix(".json")]
    if emit_svg:
        svg = base.with_suffix(".svg")
        svg_scatter(table.ensemble_median, table.observed, svg,
                    title=f"{index} ({period})",
                    xlabel="ensemble median", ylabel="observed")
        written.append(svg)
    return written


def svg_scatter(x, y, path, title="", xlabel="", ylabel="", size=420, margin=50):
    """Deterministic minimal SVG scatter plot with a 1:1 diagonal."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    if x.size:
        lo = float(min(x.min(), y.min()))
        hi = float(max(x.max(), y.max()))
    else:
        lo, hi = 0.0, 1.0
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    span = size - 2 * margin

    def px(v):
        return margin + (v - lo) / (hi - lo) * span

    def py(v):
        return size - margin - (v - lo) / (hi - lo) * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        'fill="white" stroke="black"/>',
        f'<line x1="{px(lo):.2f}" y1="{py(lo):.2f}" x2="{px(hi):.2f}" y2="{py(hi):.2f}" '
        'stroke="grey" stroke-dasharray="4 3"/>',
    ]
    for xi, yi in zip(x, y):
        parts.append(
            f'<circle cx="{px(xi):.2f}" cy="{py(yi):.2f}" r="2.5" '
            'fill="none" stroke="steelblue"/>'
        )
    if title:
        parts.append(
            f'<text x="{size / 2:.0f}" y="{margin - 14}" text-anchor="middle" '
            f'font-size="14">{title}</text>'
        )
    if xlabel:
        parts.append(
            f'<text x="{size / 2:.0f}" y="{size - 10}" text-anchor="middle" '
            f'font-size="12">{xlabel}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="14" y="{size / 2:.0f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 14 {size / 2:.0f})">{ylabel}</text>'
        )
    parts.append("</svg>")
    _write_lines(path, parts)
