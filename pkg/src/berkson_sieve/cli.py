"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import COMMANDS, build_config, read_config_file
from .estimator import fit, naive_fit
from .exceptions import ConfigError, NumericalError
from .selection import select
from .sieve import horner
from .simulation import generate, replicate
from .spectral import gaussian_model, round_trip

log = logging.getLogger("berkson_sieve")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="berkson-sieve", description="Sieve ML regression with Berkson covariate error.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--input", help="CSV with columns x, y, z")
    p.add_argument("--out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--orders", help="kdx,kdy,kdz,kg,kh")
    p.add_argument("--grid", help="lower,upper,step of the latent grid")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(argv=None):
    args = _parser().parse_args(argv)
    file_values = read_config_file(args.config) if args.config else {}
    over = {"input": args.input, "out": args.out, "seed": args.seed, "threads": args.threads, "orders": args.orders}
    if args.grid is not None:
        parts = args.grid.split(",")
        if len(parts) != 3:
            raise ConfigError(f"--grid expects lower,upper,step, got {args.grid!r}")
        over.update({"grid.lower": parts[0], "grid.upper": parts[1], "grid.step": parts[2]})
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    over = {k: (str(v) if isinstance(v, int) and not isinstance(v, bool) else v) for k, v in over.items()}
    return build_config(args.command, file_values, over), args.verbose


def _out_dir(cfg) -> Path:
    out = cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def cmd_simulate(cfg) -> None:
    out = _out_dir(cfg)
    sc = cfg.scenario()
    io.write_dataset(out / "data.csv", generate(sc))
    io.write_manifest(out, {"command": "simulate", "seed": cfg.seed, "scenario": sc.to_dict()}, ["data.csv"])


def cmd_fit(cfg) -> None:
    out = _out_dir(cfg)
    data = io.read_dataset(cfg.input_path)
    settings = cfg.settings()
    res = fit(data, cfg.orders, cfg.grid(data.x), cfg.optimizer(), settings)
    if res.loglik is None:
        raise NumericalError("fitted parameters are infeasible")
    io.write_fit(out, res, settings, n_obs=data.n)
    log.info("loglik %.10g (converged=%s)", res.loglik, res.converged)


def cmd_naive(cfg) -> None:
    out = _out_dir(cfg)
    data = io.read_dataset(cfg.input_path)
    nf = naive_fit(data, cfg.orders.k_g, cfg.orders.k_h)
    x = np.linspace(data.x.min(), data.x.max(), 101)
    io.write_curves(out / "curves.csv", x, horner(nf.beta_g, x), horner(nf.beta_h, x))
    io.dump_json(out / "naive.json", {
        "beta_g": [float(b) for b in nf.beta_g],
        "beta_h": [float(b) for b in nf.beta_h],
        "resid_var_y": nf.resid_var_y,
        "resid_var_z": nf.resid_var_z,
    })


def cmd_select(cfg) -> None:
    out = _out_dir(cfg)
    data = io.read_dataset(cfg.input_path)
    plan = cfg.selection_plan()
    best, table = select(data, plan, cfg.grid(data.x), cfg.optimizer(), cfg.settings(), threads=cfg.threads)
    table.to_csv(out / "selection.csv")
    info = {"command": "select", "seed": cfg.seed, "best": list(best.as_tuple()), "config": cfg.describe(),
            "input": io.file_digest(cfg.input_path)}
    io.write_manifest(out, info, ["selection.csv"])
    print(f"selected orders {best}")


def cmd_replicate(cfg) -> None:
    out = _out_dir(cfg)
    v = cfg.values
    eval_points = np.linspace(v["replicate.eval_lower"], v["replicate.eval_upper"], v["replicate.eval_count"])
    sc = cfg.scenario()
    report = replicate(sc, v["replicate.R"], cfg.orders, cfg.grid(), cfg.optimizer(), eval_points,
                       cfg.settings(), threads=cfg.threads)
    io.write_report(out, report)
    info = {
        "command": "replicate",
        "seed": cfg.seed,
        "scenario": sc.to_dict(),
        "config": cfg.describe(),
        "replication_seeds": report.seeds,
        "failed": [bool(f) for f in report.failed],
        "converged": [bool(c) for c in report.converged],
        "errors": report.errors,
    }
    io.write_manifest(out, info, ["report.csv", "report_h.csv"])


def cmd_spectral(cfg) -> None:
    out = _out_dir(cfg)
    v = cfg.values
    m = gaussian_model(n_nodes=v["spectral.n_nodes"], n_y=v["spectral.n_y"], sd_dx=v["spectral.sd_dx"],
                       sd_dy=v["spectral.sd_dy"], sd_dz=v["spectral.sd_dz"])
    _, report = round_trip(m)
    io.dump_json(out / "diagnostics.json", report)


_DISPATCH = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "naive": cmd_naive,
    "select": cmd_select,
    "replicate": cmd_replicate,
    "spectral-check": cmd_spectral,
}


def run(cfg) -> int:
    try:
        _DISPATCH[cfg.command](cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    try:
        cfg, verbose = config_from_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
