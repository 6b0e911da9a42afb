"""Dataset ingestion and result files.

Output schemas
--------------
fit.json        {"orders": [k_dx, k_dy, k_dz, k_g, k_h], "loglik", "init_loglik",
                 "converged", "n_iter", "n_fev", "grid": {lower, upper, step},
                 "settings": {...}, "params": ModelParams.to_dict(), "n_obs"}
curves.csv      x_star, g_hat, h_hat
densities.csv   v, f_dx, f_dy, f_dz
report.csv      x_star, true_g, robust_q05, robust_q50, robust_q95, naive_q05, naive_q50, naive_q95
report_h.csv    the same columns for h
selection.csv   k_dx, k_dy, k_dz, k_g, k_h, mean_heldout_loglik, std_error, rank
manifest.json   command inputs, seed and sha256 digests of the outputs

Floats are written with ``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .estimator import FitResult, SieveOrders
from .exceptions import ConfigError
from .likelihood import Dataset, QuadratureGrid
from .sieve import ModelParams

REQUIRED_COLUMNS = ("x", "y", "z")


def read_dataset(path) -> Dataset:
    """Read a CSV with a header naming at least ``x``, ``y`` and ``z``.

    Row numbers in error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise ConfigError(f"{path}: empty file")
        names = [h.strip().lower() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in names]
        if missing:
            raise ConfigError(f"{path}: missing column(s) {', '.join(missing)} in header {header}")
        idx = [names.index(c) for c in REQUIRED_COLUMNS]
        rows = []
        for rownum, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < len(names):
                raise ConfigError(f"{path}: row {rownum} has {len(rec)} fields, expected {len(names)}")
            vals = []
            for col, j in zip(REQUIRED_COLUMNS, idx):
                cell = rec[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise ConfigError(f"{path}: row {rownum}, column {col}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise ConfigError(f"{path}: row {rownum}, column {col}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return Dataset.from_rows(rows)


def _write_columns(path, columns: dict) -> None:
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([repr(float(v)) for v in row])


def write_dataset(path, data: Dataset) -> None:
    _write_columns(path, {"x": data.x, "y": data.y, "z": data.z})


def fit_to_dict(res: FitResult, settings=None, n_obs: int | None = None) -> dict:
    out = {
        "orders": list(res.orders.as_tuple()),
        "loglik": res.loglik,
        "init_loglik": res.init_loglik,
        "converged": bool(res.converged),
        "n_iter": int(res.n_iter),
        "n_fev": int(res.n_fev),
        "grid": {"lower": res.grid.lower, "upper": res.grid.upper, "step": res.grid.step},
        "params": res.params.to_dict(),
    }
    if settings is not None:
        out["settings"] = asdict(settings)
    if n_obs is not None:
        out["n_obs"] = int(n_obs)
    return out


def dump_json(path, obj) -> None:
    # json uses repr for floats, which is the shortest round-tripping form
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=True)
        fh.write("\n")


def write_fit(out_dir, res: FitResult, settings=None, n_obs=None) -> None:
    out_dir = Path(out_dir)
    dump_json(out_dir / "fit.json", fit_to_dict(res, settings, n_obs))
    _write_columns(out_dir / "curves.csv", {"x_star": res.curves["x"], "g_hat": res.curves["g_hat"], "h_hat": res.curves["h_hat"]})
    _write_columns(out_dir / "densities.csv", res.density_traces)


def load_fit(path) -> tuple[ModelParams, SieveOrders, QuadratureGrid, dict]:
    """Reload fit.json; returns ``(params, orders, grid, raw_dict)``."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        params = ModelParams.from_dict(raw["params"])
        orders = SieveOrders.parse(tuple(raw["orders"]))
        grid = QuadratureGrid(**raw["grid"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed fit file ({exc})") from None
    return params, orders, grid, raw


def write_report(out_dir, report) -> None:
    out_dir = Path(out_dir)
    _write_columns(out_dir / "report.csv", report.table("g"))
    _write_columns(out_dir / "report_h.csv", report.table("h"))


def write_curves(path, x, g, h) -> None:
    _write_columns(path, {"x_star": x, "g_hat": g, "h_hat": h})


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, info: dict, outputs=()) -> None:
    """Manifest of a run; contains no timings or thread counts."""
    out_dir = Path(out_dir)
    info = dict(info)
    info["outputs"] = {name: file_digest(out_dir / name) for name in outputs}
    dump_json(out_dir / "manifest.json", info)
