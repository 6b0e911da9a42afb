"""Synthetic Berkson-error data and the robust-versus-naive replication study.

Random numbers come from NumPy's Philox4x64 counter-based generator.  Every
variable of every replication draws from its own substream, identified by
the ``SeedSequence`` spawn key ``(replication, variable)`` with variables
numbered X=0, dX*=1, dY=2, dZ=3, so the draws for one variable never depend
on how many values another variable consumed.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .estimator import SieveOrders, SieveSettings, fit, naive_fit
from .exceptions import ConfigError, NumericalError
from .likelihood import Dataset, QuadratureGrid
from .simplex import SimplexOptions
from .sieve import horner

VARIABLES = ("x", "dx", "dy", "dz")

_DIST_ARITY = {"uniform": 2, "gaussian": 1, "scaled_t": 2, "scaled_logistic": 1}
_CALL_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^)]*)\)\s*$")


def substream(seed: int, replication: int, variable: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication), VARIABLES.index(variable)))
    return np.random.Generator(np.random.Philox(ss))


def _parse_call(text: str) -> tuple[str, tuple[float, ...]]:
    m = _CALL_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse {text!r}; expected name(arg, ...)")
    args = tuple(float(a) for a in m.group(2).split(",") if a.strip())
    return m.group(1), args


@dataclass(frozen=True)
class Distribution:
    """One of ``uniform(a, b)``, ``gaussian(s)``, ``scaled_t(df, s)``, ``scaled_logistic(s)``."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind not in _DIST_ARITY:
            raise ConfigError(f"unknown distribution {self.kind!r}")
        if len(self.params) != _DIST_ARITY[self.kind]:
            raise ConfigError(f"{self.kind} takes {_DIST_ARITY[self.kind]} parameters, got {self.params}")
        if self.kind == "uniform":
            if not self.params[0] < self.params[1]:
                raise ConfigError("uniform(a, b) needs a < b")
        elif self.kind == "scaled_t":
            if not self.params[0] > 2:
                raise ConfigError("scaled_t needs df > 2 (finite variance)")
            if not self.params[1] > 0:
                raise ConfigError("scale must be positive")
        elif not self.params[0] > 0:
            raise ConfigError("scale must be positive")

    @classmethod
    def parse(cls, text) -> "Distribution":
        if isinstance(text, Distribution):
            return text
        return cls(*_parse_call(text))

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(repr(p) for p in self.params)})"

    @property
    def std(self) -> float:
        if self.kind == "uniform":
            a, b = self.params
            return (b - a) / math.sqrt(12.0)
        if self.kind == "gaussian":
            return self.params[0]
        if self.kind == "scaled_t":
            df, s = self.params
            return s * math.sqrt(df / (df - 2.0))
        return self.params[0] * math.pi / math.sqrt(3.0)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            a, b = self.params
            return a + (b - a) * gen.random(n)
        if self.kind == "gaussian":
            return self.params[0] * gen.standard_normal(n)
        if self.kind == "scaled_t":
            df, s = self.params
            normal = gen.standard_normal(n)
            chi2 = gen.chisquare(df, n)
            return s * normal / np.sqrt(chi2 / df)
        # inverse CDF on the open interval (0, 1)
        u = (gen.integers(0, 2**53, n, dtype=np.int64) + 0.5) / 2.0**53
        return self.params[0] * np.log(u / (1.0 - u))


_NAMED_FUNCTIONS = {
    "abs_quadratic": lambda x: np.abs(x) * x,
    "softplus2x": lambda x: np.logaddexp(0.0, 2.0 * x),
    "identity": lambda x: np.asarray(x, dtype=float) * 1.0,
}


@dataclass(frozen=True)
class TrueFunction:
    """A named regression function, or ``poly(c0, c1, ...)`` for a custom polynomial."""

    name: str
    coeffs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.name == "poly":
            if not self.coeffs:
                raise ConfigError("poly(...) needs at least one coefficient")
        elif self.name not in _NAMED_FUNCTIONS:
            raise ConfigError(f"unknown function {self.name!r}; choose from {sorted(_NAMED_FUNCTIONS)} or poly(...)")

    @classmethod
    def parse(cls, text) -> "TrueFunction":
        if isinstance(text, TrueFunction):
            return text
        text = text.strip()
        if "(" in text:
            name, args = _parse_call(text)
            return cls(name, args)
        return cls(text)

    def __call__(self, x):
        if self.name == "poly":
            return horner(self.coeffs, x)
        return _NAMED_FUNCTIONS[self.name](x)

    def __str__(self) -> str:
        if self.name == "poly":
            return f"poly({', '.join(repr(c) for c in self.coeffs)})"
        return self.name


@dataclass(frozen=True)
class Scenario:
    x_dist: Distribution = Distribution("uniform", (-1.0, 1.0))
    dx_dist: Distribution = Distribution("scaled_t", (6.0, 0.5))
    dy_dist: Distribution = Distribution("scaled_logistic", (0.125,))
    dz_dist: Distribution = Distribution("scaled_t", (6.0, 0.25))
    g_true: TrueFunction = TrueFunction("abs_quadratic")
    h_true: TrueFunction = TrueFunction("softplus2x")
    n: int = 500
    seed: int = 0

    def __post_init__(self):
        for name in ("x_dist", "dx_dist", "dy_dist", "dz_dist"):
            object.__setattr__(self, name, Distribution.parse(getattr(self, name)))
        for name in ("g_true", "h_true"):
            object.__setattr__(self, name, TrueFunction.parse(getattr(self, name)))
        if self.x_dist.kind != "uniform":
            raise ConfigError("x_dist must be uniform(a, b)")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def gaussian_identity(cls, n: int = 2000, seed: int = 0, x_dist="uniform(-1, 1)") -> "Scenario":
        return cls(
            x_dist=x_dist, dx_dist="gaussian(1)", dy_dist="gaussian(1)", dz_dist="gaussian(1)",
            g_true="identity", h_true="identity", n=n, seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "x_dist": str(self.x_dist),
            "dx_dist": str(self.dx_dist),
            "dy_dist": str(self.dy_dist),
            "dz_dist": str(self.dz_dist),
            "g_true": str(self.g_true),
            "h_true": str(self.h_true),
            "n": self.n,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class Latent:
    x_star: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray


def generate(sc: Scenario, replication: int = 0, return_latent: bool = False):
    """Draw a dataset; deterministic in ``(sc.seed, replication)``."""
    x = sc.x_dist.sample(substream(sc.seed, replication, "x"), sc.n)
    dx = sc.dx_dist.sample(substream(sc.seed, replication, "dx"), sc.n)
    dy = sc.dy_dist.sample(substream(sc.seed, replication, "dy"), sc.n)
    dz = sc.dz_dist.sample(substream(sc.seed, replication, "dz"), sc.n)
    x_star = x + dx
    data = Dataset(x, sc.g_true(x_star) + dy, sc.h_true(x_star) + dz)
    if return_latent:
        return data, Latent(x_star, dx, dy, dz)
    return data


def default_eval_points() -> np.ndarray:
    return np.linspace(-1.5, 1.5, 31)


@dataclass(eq=False)
class ReplicationReport:
    eval_points: np.ndarray
    true_g: np.ndarray
    true_h: np.ndarray
    robust_g: np.ndarray
    robust_h: np.ndarray
    naive_g: np.ndarray
    naive_h: np.ndarray
    converged: np.ndarray
    failed: np.ndarray
    seeds: list
    errors: list = field(default_factory=list)
    params: list = field(default_factory=list, repr=False)

    QUANTILES = (0.05, 0.5, 0.95)

    @property
    def n_replications(self) -> int:
        return len(self.seeds)

    def quantiles(self, curves: str) -> np.ndarray:
        """Pointwise 5/50/95% quantiles (rows) over the successful replications."""
        arr = getattr(self, curves)[~self.failed]
        q = np.quantile(arr, self.QUANTILES, axis=0)
        # interpolation rounding must not break the ordering
        return np.maximum.accumulate(q, axis=0)

    def table(self, which: str = "g") -> dict:
        rob = self.quantiles(f"robust_{which}")
        nai = self.quantiles(f"naive_{which}")
        return {
            "x_star": self.eval_points,
            f"true_{which}": getattr(self, f"true_{which}"),
            "robust_q05": rob[0], "robust_q50": rob[1], "robust_q95": rob[2],
            "naive_q05": nai[0], "naive_q50": nai[1], "naive_q95": nai[2],
        }


def _one_replication(sc: Scenario, r: int, orders, grid, opts, settings, eval_points):
    sc_r = replace(sc, seed=sc.seed + r)
    data = generate(sc_r)
    out = {"seed": sc_r.seed}
    try:
        nf = naive_fit(data, orders.k_g, orders.k_h)
        out["naive_g"] = horner(nf.beta_g, eval_points)
        out["naive_h"] = horner(nf.beta_h, eval_points)
        res = fit(data, orders, grid, opts, settings, eval_points=eval_points)
        out["robust_g"] = res.curves["g_hat"]
        out["robust_h"] = res.curves["h_hat"]
        out["converged"] = res.converged
        out["params"] = res.params
        out["error"] = None
    except (NumericalError, ValueError, ArithmeticError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def replicate(
    sc: Scenario,
    R: int,
    orders: SieveOrders,
    grid: QuadratureGrid | None = None,
    opts: SimplexOptions | None = None,
    eval_points=None,
    settings: SieveSettings | None = None,
    threads: int = 1,
) -> ReplicationReport:
    """Fit the robust and naive estimators on ``R`` datasets with seeds ``sc.seed + r``.

    Failed replications are kept as flagged rows.  Raises ``NumericalError``
    if fewer than half of them succeed.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    orders = SieveOrders.parse(orders)
    grid = grid or QuadratureGrid()
    opts = opts or SimplexOptions()
    settings = settings or SieveSettings()
    eval_points = default_eval_points() if eval_points is None else np.asarray(eval_points, dtype=float)

    tasks = (delayed(_one_replication)(sc, r, orders, grid, opts, settings, eval_points) for r in range(R))
    if threads == 1:
        rows = [t[0](*t[1], **t[2]) for t in tasks]
    else:
        rows = Parallel(n_jobs=threads)(tasks)

    E = eval_points.size
    nan_curve = np.full(E, np.nan)
    failed = np.array([row["error"] is not None for row in rows])
    if failed.sum() * 2 > R:
        raise NumericalError(f"{failed.sum()} of {R} replications failed: {[r['error'] for r in rows if r['error']]}")

    def stack(key):
        return np.array([row.get(key, nan_curve) if row["error"] is None else nan_curve for row in rows])

    return ReplicationReport(
        eval_points=eval_points,
        true_g=sc.g_true(eval_points),
        true_h=sc.h_true(eval_points),
        robust_g=stack("robust_g"),
        robust_h=stack("robust_h"),
        naive_g=stack("naive_g"),
        naive_h=stack("naive_h"),
        converged=np.array([bool(row.get("converged", False)) for row in rows]),
        failed=failed,
        seeds=[row["seed"] for row in rows],
        errors=[row["error"] for row in rows],
        params=[row.get("params") for row in rows],
    )


def scenario_from_dict(data: dict) -> Scenario:
    return Scenario(**data)


__all__ = [
    "Distribution",
    "TrueFunction",
    "Scenario",
    "Latent",
    "ReplicationReport",
    "generate",
    "replicate",
    "substream",
    "default_eval_points",
    "scenario_from_dict",
]
