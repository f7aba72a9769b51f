"""Command-line orchestration: synth, fit, simulate, evaluate.

Every subcommand echoes its fully-resolved configuration into the output
directory, so a run is reproducible from the echoed config alone. Exit
codes partition failures: 2 data, 3 estimation, 4 simulation,
5 evaluation.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import data as _data
from . import evaluate as _evaluate
from . import model as _model
from . import reports as _reports
from . import simulate as _simulate
from .errors import DataError, EstimationError, EvaluationError, SimulationError
from .fileio import atomic_path, sha256_file
from .numerics import RngStream

MANIFEST_FORMAT_VERSION = 1

EXIT_DATA = 2
EXIT_ESTIMATION = 3
EXIT_SIMULATION = 4
EXIT_EVALUATION = 5


def _parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"bad date {text!r}: {exc}") from None


def _load_config_file(path) -> dict:
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc


def _resolve_config(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    return resolved


def _echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    # threads is an execution knob with no effect on results; omitting it
    # keeps output trees identical across --threads settings
    doc = {k: (str(v) if isinstance(v, Path) else v)
           for k, v in sorted(cfg.items()) if k != "threads"}
    with atomic_path(out_dir / "config.json") as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")


def _write_occurrence(occ, path, as_depth: bool) -> None:
    years = _data.years_of(occ.dates)
    months = _data.months_of(occ.dates)
    days = (occ.dates - occ.dates.astype("datetime64[M]")).astype(int) + 1
    wet, dry = ("1.0", "0.0") if as_depth else ("1", "0")
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(("year", "month", "day") + tuple(occ.sites)) + "\n")
            for t in range(occ.n_days):
                cells = [str(years[t]), str(months[t]), str(days[t])]
                cells += [wet if s == _data.WET else dry for s in occ.states[t]]
                fh.write(",".join(cells) + "\n")


# --- synth -----------------------------------------------------------------

_SYNTH_DEFAULTS = {
    "out": "synth-out",
    "sites": 4,
    "years": 50,
    "seed": 0,
    "max_lag": 2,
    "p_wet": 0.4,
    "rho0": 0.5,
    "phi": 0.3,
    "missing_rate": 0.0,
}


def make_truth(sites: int, max_lag: int, p_wet: float, rho0: float, phi: float):
    """Separable truth model: spatial base rho0^|i-j|, temporal decay phi^k."""
    if not (0.0 < p_wet < 1.0):
        raise DataError(f"p_wet must be in (0, 1), got {p_wet}")
    if abs(rho0) > 1.0 or abs(phi) > 1.0:
        raise DataError(f"rho0 and phi must lie in [-1, 1], got {rho0}, {phi}")
    names = tuple(f"S{i + 1:02d}" for i in range(sites))
    idx = np.arange(sites)
    spatial = rho0 ** np.abs(idx[:, None] - idx[None, :])
    blocks = [phi ** k * spatial for k in range(max_lag + 1)]
    try:
        return _model.make_model(names, np.full(sites, p_wet), blocks)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def cmd_synth(args) -> int:
    cfg = _resolve_config(args, _SYNTH_DEFAULTS)
    out = Path(cfg["out"])
    truth = make_truth(int(cfg["sites"]), int(cfg["max_lag"]), float(cfg["p_wet"]),
                       float(cfg["rho0"]), float(cfg["phi"]))
    record = _data.synth_record(
        truth, int(cfg["years"]), RngStream(int(cfg["seed"])),
        missing_rate=float(cfg["missing_rate"]),
    )
    out.mkdir(parents=True, exist_ok=True)
    with atomic_path(out / "record.csv") as tmp:
        _data.write_record(record, tmp)
    with atomic_path(out / "truth-model.json") as tmp:
        _model.save_model(truth, tmp)
    _echo_config(cfg, out)
    print(f"wrote {out / 'record.csv'} ({record.n_days} days, "
          f"{len(record.sites)} sites) and truth model")
    return 0


# --- fit -------------------------------------------------------------------

_FIT_DEFAULTS = {
    "input": None,
    "out": "fit-out",
    "wet_threshold": 1.0,
    "max_lag": 2,
    "eps2": 0.05,
    "calibration_start": None,
    "calibration_end": None,
}


def cmd_fit(args) -> int:
    cfg = _resolve_config(args, _FIT_DEFAULTS)
    if not cfg["input"]:
        raise DataError("fit requires --input")
    src = Path(cfg["input"])
    record = _data.load_record(src)
    if cfg["calibration_start"] and cfg["calibration_end"]:
        record = record.slice_dates(_parse_date(str(cfg["calibration_start"])),
                                    _parse_date(str(cfg["calibration_end"])))
    occ = _data.binarize(record, float(cfg["wet_threshold"]))
    provenance = {
        "source_path": src.name,
        "source_digest": sha256_file(src),
        "calibration_start": str(record.dates[0]),
        "calibration_end": str(record.dates[-1]),
    }
    fitted = _model.fit(
        occ,
        max_lag=int(cfg["max_lag"]),
        eps2=float(cfg["eps2"]),
        wet_threshold_mm=float(cfg["wet_threshold"]),
        provenance=provenance,
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with atomic_path(out / "model.json") as tmp:
        _model.save_model(fitted, tmp)
    diag_lines = ["month,min_eigenvalue_raw,eps1,max_abs_delta"]
    for month in range(1, 13):
        d = fitted.diagnostics["per_month"][str(month)]
        diag_lines.append(
            f"{month},{d['min_eigenvalue_raw']!r},{d['eps1']!r},{d['max_abs_delta']!r}"
        )
    with atomic_path(out / "diagnostics.csv") as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(diag_lines) + "\n")
    _echo_config(cfg, out)
    print(f"wrote {out / 'model.json'}")
    return 0


# --- simulate --------------------------------------------------------------

_SIM_DEFAULTS = {
    "model": None,
    "out": "sim-out",
    "replicates": 1,
    "seed": 0,
    "start": None,
    "end": None,
    "threads": 1,
    "as_depth": False,
}


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args, _SIM_DEFAULTS)
    if not cfg["model"]:
        raise DataError("simulate requires --model")
    model_path = Path(cfg["model"])
    if not model_path.exists():
        raise DataError(f"model file {model_path} does not exist")
    digest = sha256_file(model_path)
    out = Path(cfg["out"])
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path, "r", encoding="utf-8") as fh:
            old = json.load(fh)
        if old.get("model_digest") != digest:
            raise SimulationError(
                f"manifest {manifest_path} was produced from a different model "
                f"(digest mismatch)"
            )
    try:
        fitted = _model.load_model(model_path)
    except (ValueError, KeyError, EstimationError) as exc:
        raise DataError(f"cannot load model {model_path}: {exc}") from exc
    start = cfg["start"] or fitted.provenance.get("calibration_start")
    end = cfg["end"] or fitted.provenance.get("calibration_end")
    if not start or not end:
        raise DataError("simulate requires --start/--end (model has no provenance dates)")
    config = _simulate.SimulationConfig(
        start_date=_parse_date(str(start)),
        end_date=_parse_date(str(end)),
        n_replicates=int(cfg["replicates"]),
        base_seed=int(cfg["seed"]),
    )
    ensemble = _simulate.simulate_ensemble(fitted, config, threads=int(cfg["threads"]))
    sim_dir = out / "sim"
    sim_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for rep, occ in enumerate(ensemble):
        name = f"rep-{rep:04d}.csv"
        _write_occurrence(occ, sim_dir / name, as_depth=bool(cfg["as_depth"]))
        files.append(f"sim/{name}")
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "model_path": model_path.name,
        "model_digest": digest,
        "base_seed": int(cfg["seed"]),
        "start_date": str(start),
        "end_date": str(end),
        "n_replicates": int(cfg["replicates"]),
        "max_lag": fitted.max_lag,
        "sites": list(fitted.sites),
        "as_depth": bool(cfg["as_depth"]),
        "replicate_ids": list(range(int(cfg["replicates"]))),
        "files": files,
    }
    with atomic_path(manifest_path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
    _echo_config(cfg, out)
    print(f"wrote {len(files)} replicates under {sim_dir}")
    return 0


# --- evaluate --------------------------------------------------------------

_EVAL_DEFAULTS = {
    "observed": None,
    "manifest": None,
    "out": "eval-out",
    "wet_threshold": 1.0,
    "calibration_start": None,
    "calibration_end": None,
    "validation_start": None,
    "validation_end": None,
    "emit_svg": False,
}


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args, _EVAL_DEFAULTS)
    if not cfg["observed"] or not cfg["manifest"]:
        raise DataError("evaluate requires --observed and --manifest")
    record = _data.load_record(Path(cfg["observed"]))
    observed = _data.binarize(record, float(cfg["wet_threshold"]))
    manifest_path = Path(cfg["manifest"])
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise EvaluationError(f"cannot read manifest {manifest_path}: {exc}") from exc
    ensemble = []
    for rep, rel in zip(manifest["replicate_ids"], manifest["files"]):
        path = manifest_path.parent / rel
        if not path.exists():
            raise EvaluationError(f"replicate {rep}: missing ensemble file {path}")
        # 0/1 states and 1.0/0.0 mm encodings both binarize correctly at 0.5
        ensemble.append(_data.binarize(_data.load_record(path), 0.5))

    periods = []
    if cfg["calibration_start"] and cfg["calibration_end"]:
        periods.append(("calibration", cfg["calibration_start"], cfg["calibration_end"]))
    if cfg["validation_start"] and cfg["validation_end"]:
        periods.append(("validation", cfg["validation_start"], cfg["validation_end"]))
    if not periods:
        periods.append(("full", str(observed.dates[0]), str(observed.dates[-1])))

    out = Path(cfg["out"])
    report_dir = out / "reports"
    for label, start, end in periods:
        lo, hi = _parse_date(str(start)), _parse_date(str(end))
        obs_slice = observed.slice_dates(lo, hi)
        ens_slice = [rep.slice_dates(lo, hi) for rep in ensemble]
        comp = _evaluate.compare(
            obs_slice, ens_slice, max_lag=int(manifest.get("max_lag", 2))
        )
        _reports.write_comparison_reports(
            comp, report_dir, label, observed.sites, emit_svg=bool(cfg["emit_svg"])
        )
    _echo_config(cfg, out)
    print(f"wrote reports for {len(periods)} period(s) under {report_dir}")
    return 0


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occgen",
        description="Multisite precipitation occurrence modeling and simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic record and truth model")
    add_common(p)
    p.add_argument("--sites", type=int)
    p.add_argument("--years", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-lag", dest="max_lag", type=int)
    p.add_argument("--p-wet", dest="p_wet", type=float)
    p.add_argument("--rho0", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--missing-rate", dest="missing_rate", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="calibrate a model from a daily record")
    add_common(p)
    p.add_argument("--input", help="delimited daily precipitation record")
    p.add_argument("--wet-threshold", dest="wet_threshold", type=float)
    p.add_argument("--max-lag", dest="max_lag", type=int)
    p.add_argument("--eps2", type=float)
    p.add_argument("--calibration-start", dest="calibration_start")
    p.add_argument("--calibration-end", dest="calibration_end")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="generate an occurrence ensemble")
    add_common(p)
    p.add_argument("--model", help="fitted model JSON")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--threads", type=int)
    p.add_argument("--as-depth", dest="as_depth", action="store_const", const=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="compare observed record with an ensemble")
    add_common(p)
    p.add_argument("--observed", help="observed daily record")
    p.add_argument("--manifest", help="ensemble manifest from `occgen simulate`")
    p.add_argument("--wet-threshold", dest="wet_threshold", type=float)
    p.add_argument("--calibration-start", dest="calibration_start")
    p.add_argument("--calibration-end", dest="calibration_end")
    p.add_argument("--validation-start", dest="validation_start")
    p.add_argument("--validation-end", dest="validation_end")
    p.add_argument("--emit-svg", dest="emit_svg", action="store_const", const=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVALUATION


if __name__ == "__main__":
    sys.exit(main())
