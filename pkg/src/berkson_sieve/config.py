"""Run configuration: flat ``key = value`` files with dotted section names.

Example::

    # reference design at desk scale
    seed = 7
    orders = 3,3,3,6,6
    grid.step = 0.05
    scenario.n = 500
    replicate.R = 20

Lines starting with ``#`` are comments.  Unknown and repeated keys are
errors.  Command-line flags override values from the file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .estimator import SieveOrders, SieveSettings
from .exceptions import ConfigError
from .likelihood import QuadratureGrid
from .selection import SelectionPlan
from .sieve import BASELINES, CENTERINGS
from .simplex import SimplexOptions
from .simulation import Scenario

COMMANDS = ("simulate", "fit", "select", "replicate", "naive", "spectral-check")
READS_INPUT = ("fit", "select", "naive")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _orders_list(text: str) -> tuple[SieveOrders, ...]:
    return tuple(SieveOrders.parse(p) for p in text.split(";") if p.strip())


def _choice(options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    return parse


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


_SC = Scenario()
_DEFAULT_SCENARIO = _SC.to_dict()

# key -> (parser, default)
SCHEMA: dict = {
    "seed": (int, 0),
    "threads": (_optional_int, None),
    "input": (str, None),
    "out": (str, "."),
    "orders": (SieveOrders.parse, SieveOrders(3, 3, 3, 6, 6)),
    "grid.lower": (float, -3.0),
    "grid.upper": (float, 3.0),
    "grid.step": (float, 0.05),
    "grid.auto": (_bool, False),
    "optimizer.max_iters": (int, SimplexOptions.max_iters),
    "optimizer.f_tol": (float, SimplexOptions.f_tol),
    "optimizer.x_tol": (float, SimplexOptions.x_tol),
    "optimizer.restarts": (int, SimplexOptions.restarts),
    "optimizer.staged": (_bool, SieveSettings.staged),
    "model.centering": (_choice(CENTERINGS), "mean_zero"),
    "model.baseline": (_choice(BASELINES), "gaussian"),
    "model.coeff_bound": (float, SieveSettings.coeff_bound),
    **{f"scenario.{k}": (str if k not in ("n", "seed") else int, v) for k, v in _DEFAULT_SCENARIO.items() if k != "seed"},
    "replicate.R": (int, 20),
    "replicate.eval_lower": (float, -1.5),
    "replicate.eval_upper": (float, 1.5),
    "replicate.eval_count": (int, 31),
    "selection.candidates": (_orders_list, None),
    "selection.density_orders": (_int_list, (1, 2, 3, 4)),
    "selection.series_orders": (_int_list, (4, 5, 6, 7)),
    "selection.holdout_fraction": (float, 1.0 / 8.0),
    "selection.partitions": (int, 100),
    "spectral.n_nodes": (int, 15),
    "spectral.n_y": (int, 11),
    "spectral.sd_dx": (float, 0.25),
    "spectral.sd_dy": (float, 1.2),
    "spectral.sd_dz": (float, 0.4),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: key {key!r} given twice")
        out[key] = value
    return out


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def input_path(self):
        return self.values["input"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["out"])

    @property
    def threads(self) -> int:
        t = self.values["threads"]
        if t is None:
            return (os.cpu_count() or 1) if self.command in ("replicate", "select") else 1
        return t

    @property
    def orders(self) -> SieveOrders:
        return self.values["orders"]

    def grid(self, x=None) -> QuadratureGrid:
        if self.values["grid.auto"] and x is not None:
            return QuadratureGrid.around(x, step=self.values["grid.step"])
        return QuadratureGrid(self.values["grid.lower"], self.values["grid.upper"], self.values["grid.step"])

    def optimizer(self) -> SimplexOptions:
        v = self.values
        return SimplexOptions(
            max_iters=v["optimizer.max_iters"], f_tol=v["optimizer.f_tol"],
            x_tol=v["optimizer.x_tol"], restarts=v["optimizer.restarts"],
        )

    def settings(self) -> SieveSettings:
        v = self.values
        return SieveSettings(
            centering=v["model.centering"], baseline_kind=v["model.baseline"],
            coeff_bound=v["model.coeff_bound"], staged=v["optimizer.staged"],
        )

    def scenario(self) -> Scenario:
        kw = {k.split(".", 1)[1]: val for k, val in self.values.items() if k.startswith("scenario.")}
        return Scenario(seed=self.seed, **kw)

    def selection_plan(self) -> SelectionPlan:
        v = self.values
        kw = dict(holdout_fraction=v["selection.holdout_fraction"], partitions=v["selection.partitions"], seed=self.seed)
        if v["selection.candidates"]:
            return SelectionPlan(v["selection.candidates"], **kw)
        return SelectionPlan.grid(v["selection.density_orders"], v["selection.series_orders"], **kw)

    def describe(self) -> dict:
        """JSON-friendly view of every setting except paths and threads."""
        skip = ("threads", "input", "out")
        return {k: (str(v) if isinstance(v, SieveOrders) else [str(c) for c in v] if k == "selection.candidates" and v else v)
                for k, v in sorted(self.values.items()) if k not in skip}


def build_config(command: str, file_values: dict[str, str] | None = None, overrides: dict | None = None) -> RunConfig:
    """Typed configuration from file strings overlaid with already-typed or string overrides."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    values = {k: default for k, (_, default) in SCHEMA.items()}
    raw = dict(file_values or {})
    for k, v in (overrides or {}).items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown key {k!r}")
        if v is not None:
            raw[k] = v
    for k, v in raw.items():
        parser = SCHEMA[k][0]
        try:
            values[k] = parser(v) if isinstance(v, str) else v
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {k}: {exc}") from None
    cfg = RunConfig(command, values)
    _check(cfg)
    return cfg


def _check(cfg: RunConfig) -> None:
    try:
        cfg.grid()
        cfg.optimizer()
        if cfg.command in ("simulate", "replicate"):
            cfg.scenario()
        if cfg.command == "select":
            cfg.selection_plan()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.values["threads"] is not None and cfg.values["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.command in READS_INPUT:
        if cfg.input_path is None:
            raise ConfigError(f"{cfg.command} needs --input")
        if not Path(cfg.input_path).is_file():
            raise ConfigError(f"input file not found: {cfg.input_path}")
    if cfg.command == "replicate" and cfg.values["replicate.R"] < 1:
        raise ConfigError("replicate.R must be >= 1")
