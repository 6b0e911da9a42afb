"""Series representations of the regression functions and error densities.

Regression functions are truncated power series

    m(x) = sum_k beta_k * x**(k-1).

Error densities are a polynomial times a scaled baseline,

    f(v) = (1/s) * phi0(v/s) * sum_k theta_k * v**(k-1),

where ``phi0`` is the standard normal pdf (``"gaussian"``) or the indicator
of ``[-1, 1]`` (``"flat"``).  Unit mass and the centering restriction are
linear in ``theta``; :func:`eliminate_constraints` solves them for the first
two coefficients given the rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate

from .exceptions import NumericalError

BASELINES = ("gaussian", "flat")
CENTERINGS = ("mean_zero", "median_zero")
CONSTRAINT_KINDS = ("area",) + CENTERINGS

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

DEFAULT_COEFF_BOUND = 50.0
SCALE_MIN = 1e-3
SCALE_MAX = 1e3


@dataclass(frozen=True)
class PolySieve:
    """Truncated monomial series ``sum_k coeffs[k] * x**k``."""

    coeffs: tuple[float, ...]
    basis_kind: str = "monomial"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) < 1:
            raise ValueError("PolySieve needs at least one coefficient")
        if self.basis_kind != "monomial":
            raise ValueError(f"unsupported basis_kind {self.basis_kind!r}")

    @property
    def n_terms(self) -> int:
        return len(self.coeffs)

    def __call__(self, x):
        return eval_poly(self, x)

    def within_bound(self, coeff_bound: float = DEFAULT_COEFF_BOUND) -> bool:
        return all(abs(c) <= coeff_bound for c in self.coeffs)


@dataclass(frozen=True)
class DensitySieve:
    """Baseline-weighted polynomial density.

    ``coeffs`` holds the full vector theta_1..theta_K in the raw monomial
    basis ``v**(k-1)``.  Construction only checks structural validity so that
    trial points produced by an optimizer can be represented; use
    :meth:`check_invariants` for the full set of constraints.
    """

    scale: float
    coeffs: tuple[float, ...]
    baseline_kind: str = "gaussian"
    centering: str = "mean_zero"

    def __post_init__(self):
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"density scale must be positive and finite, got {self.scale}")
        if len(self.coeffs) < 1:
            raise ValueError("DensitySieve needs at least one coefficient")
        if self.baseline_kind not in BASELINES:
            raise ValueError(f"baseline_kind must be one of {BASELINES}")
        if self.centering not in CENTERINGS:
            raise ValueError(f"centering must be one of {CENTERINGS}")

    @property
    def n_coeffs(self) -> int:
        return len(self.coeffs)

    @property
    def free_tail(self) -> tuple[float, ...]:
        return self.coeffs[2:]

    def standardized_coeffs(self) -> np.ndarray:
        """Coefficients in the basis ``(v/scale)**(k-1)``."""
        c = np.asarray(self.coeffs)
        return c * self.scale ** np.arange(c.size)

    def __call__(self, v):
        return eval_density(self, v)

    def constraint_residuals(self) -> tuple[float, float]:
        """(area - 1, centering moment); both are zero for a valid density."""
        c = np.asarray(self.coeffs)
        area = constraint_coeffs(self.scale, c.size, "area", self.baseline_kind) @ c
        centre = constraint_coeffs(self.scale, c.size, self.centering, self.baseline_kind) @ c
        return float(area - 1.0), float(centre)

    def check_invariants(
        self,
        coeff_bound: float = DEFAULT_COEFF_BOUND,
        scale_min: float = SCALE_MIN,
        scale_max: float = SCALE_MAX,
        tol: float = 1e-10,
    ) -> None:
        """Raise ``ValueError`` if any density invariant is violated.

        The coefficient bound is applied to :meth:`standardized_coeffs`.
        """
        if not scale_min <= self.scale <= scale_max:
            raise ValueError(f"scale {self.scale} outside [{scale_min}, {scale_max}]")
        area_err, centre_err = self.constraint_residuals()
        if abs(area_err) > tol:
            raise ValueError(f"unit-mass constraint violated by {area_err:.3g}")
        if abs(centre_err) > tol:
            raise ValueError(f"{self.centering} constraint violated by {centre_err:.3g}")
        if np.any(np.abs(self.standardized_coeffs()) > coeff_bound):
            raise ValueError(f"coefficient magnitude exceeds bound {coeff_bound}")


@dataclass(frozen=True)
class ModelParams:
    g: PolySieve
    h: PolySieve
    f_dx: DensitySieve
    f_dy: DensitySieve
    f_dz: DensitySieve

    def densities(self) -> dict[str, DensitySieve]:
        return {"f_dx": self.f_dx, "f_dy": self.f_dy, "f_dz": self.f_dz}

    def check_invariants(self, coeff_bound: float = DEFAULT_COEFF_BOUND, **kw) -> None:
        for name, poly in (("g", self.g), ("h", self.h)):
            if not poly.within_bound(coeff_bound):
                raise ValueError(f"{name} coefficient magnitude exceeds bound {coeff_bound}")
        for d in self.densities().values():
            d.check_invariants(coeff_bound=coeff_bound, **kw)

    def to_dict(self) -> dict:
        out = {"g": list(self.g.coeffs), "h": list(self.h.coeffs)}
        for name, d in self.densities().items():
            out[name] = {
                "scale": d.scale,
                "coeffs": list(d.coeffs),
                "baseline_kind": d.baseline_kind,
                "centering": d.centering,
            }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        dens = {name: DensitySieve(**data[name]) for name in ("f_dx", "f_dy", "f_dz")}
        return cls(g=PolySieve(tuple(data["g"])), h=PolySieve(tuple(data["h"])), **dens)


def horner(coeffs, x):
    """Evaluate ``sum_k coeffs[k] * x**k`` for scalar or array ``x``."""
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc if acc.ndim else float(acc)


def eval_poly(s: PolySieve, x):
    return horner(s.coeffs, x)


def baseline(u, kind: str = "gaussian"):
    u = np.asarray(u, dtype=float)
    if kind == "gaussian":
        out = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    elif kind == "flat":
        out = (np.abs(u) <= 1.0).astype(float)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    return out if out.ndim else float(out)


def eval_density(d: DensitySieve, v):
    """Density value at ``v``; negative for some unconstrained trial parameters."""
    v = np.asarray(v, dtype=float)
    out = baseline(v / d.scale, d.baseline_kind) * horner(d.coeffs, v) / d.scale
    return out if np.ndim(out) else float(out)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def baseline_moment(scale: float, m: int, kind: str = "gaussian") -> float:
    """``int v**m (1/scale) phi0(v/scale) dv`` in closed form."""
    if m % 2:
        return 0.0
    if kind == "gaussian":
        return scale**m * _double_factorial(m - 1)
    if kind == "flat":
        return 2.0 * scale**m / (m + 1)
    raise ValueError(f"unknown baseline {kind!r}")


def _negative_half_moment(scale: float, m: int, kind: str) -> float:
    """``int_{v<=0} v**m (1/scale) phi0(v/scale) dv`` by adaptive quadrature."""
    lower = -np.inf if kind == "gaussian" else -1.0
    val, err = integrate.quad(
        lambda u: baseline(u, kind) * u**m, lower, 0.0, epsabs=1e-13, epsrel=1e-12, limit=200
    )
    if err > 1e-10:
        raise NumericalError(f"half-moment quadrature error {err:.2g} exceeds 1e-10")
    return scale**m * val


@lru_cache(maxsize=256)
def _unit_scale_row(K: int, which: str, baseline_kind: str) -> tuple[float, ...]:
    if which == "area":
        return tuple(baseline_moment(1.0, k, baseline_kind) for k in range(K))
    if which == "mean_zero":
        return tuple(baseline_moment(1.0, k + 1, baseline_kind) for k in range(K))
    if which == "median_zero":
        return tuple(
            _negative_half_moment(1.0, k, baseline_kind) - 0.5 * baseline_moment(1.0, k, baseline_kind)
            for k in range(K)
        )
    raise ValueError(f"constraint kind must be one of {CONSTRAINT_KINDS}, got {which!r}")


def constraint_coeffs(scale: float, K: int, which: str, baseline_kind: str = "gaussian") -> np.ndarray:
    """Linear-constraint row ``C_k = int c(v) (1/scale) phi0(v/scale) v**(k-1) dv``.

    ``which`` selects ``c(v)``: 1 (``"area"``), v (``"mean_zero"``) or
    ``1(v<=0) - 1/2`` (``"median_zero"``).  Rows are computed at unit scale
    and rescaled, which is exact for every ``c`` above.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    row = np.array(_unit_scale_row(int(K), which, baseline_kind))
    powers = np.arange(K) + (1 if which == "mean_zero" else 0)
    return row * float(scale) ** powers


def eliminate_constraints(
    scale: float,
    free_coeffs: Sequence[float] = (),
    centering: str = "mean_zero",
    baseline_kind: str = "gaussian",
    n_coeffs: int | None = None,
) -> np.ndarray:
    """Complete ``free_coeffs`` (theta_3..theta_K) into a constrained vector.

    theta_1 and theta_2 are solved from the unit-mass and centering rows.
    With ``n_coeffs=1`` only the mass constraint is imposed; centering then
    holds by symmetry of the baseline.
    """
    free = np.asarray(free_coeffs, dtype=float).ravel()
    K = free.size + 2 if n_coeffs is None else int(n_coeffs)
    if K < 1:
        raise ValueError(f"n_coeffs must be >= 1, got {K}")
    if K <= 2 and free.size:
        raise ValueError(f"{free.size} free coefficients given but K={K} leaves none free")
    if K > 2 and free.size != K - 2:
        raise ValueError(f"expected {K - 2} free coefficients, got {free.size}")

    area = constraint_coeffs(scale, K, "area", baseline_kind)
    if K == 1:
        return np.array([1.0 / area[0]])
    centre = constraint_coeffs(scale, K, centering, baseline_kind)
    A = np.array([[area[0], area[1]], [centre[0], centre[1]]])
    rhs = np.array([1.0 - area[2:] @ free, -(centre[2:] @ free)])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if abs(det) <= 1e-14 * max(1.0, np.abs(A).max() ** 2):
        raise NumericalError(f"singular constraint elimination system (det={det:.3g})")
    head = np.linalg.solve(A, rhs)
    return np.concatenate([head, free])


def make_density(
    scale: float,
    free_coeffs: Sequence[float] = (),
    centering: str = "mean_zero",
    baseline_kind: str = "gaussian",
    n_coeffs: int | None = None,
) -> DensitySieve:
    """Build a constrained :class:`DensitySieve` from its scale and free tail."""
    coeffs = eliminate_constraints(scale, free_coeffs, centering, baseline_kind, n_coeffs)
    return DensitySieve(scale, tuple(coeffs), baseline_kind, centering)
