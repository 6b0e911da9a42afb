"""Conditional likelihood of (y, z) given x with the latent x* integrated out.

The latent integral is replaced by an equal-weight Riemann sum on a fixed
grid of x* nodes:

    f(y, z | x) ~= step * sum_j f_dz(z - h(x*_j)) f_dy(y - g(x*_j)) f_dx(x*_j - x)
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numba
import numpy as np

from .sieve import ModelParams, horner

DENSITY_FLOOR = 1e-300

_BASELINE_CODES = {"gaussian": 0, "flat": 1}
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# exp() of anything below this is exactly 0.0
_EXP_UNDERFLOW = -745.2
# exp() of anything below this is subnormal; such terms are dropped (set to
# exactly zero) because subnormal exp results are very slow to produce
_EXP_NORMAL_MIN = -708.0
# observations per block of the (observations x nodes) work matrices
_CHUNK = 2048


@dataclass(frozen=True)
class QuadratureGrid:
    lower: float = -3.0
    upper: float = 3.0
    step: float = 0.05

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)) or self.lower >= self.upper:
            raise ValueError(f"grid needs finite lower < upper, got [{self.lower}, {self.upper}]")
        if not self.step > 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        if self.n_nodes < 3:
            raise ValueError("grid must have at least 3 nodes")

    @property
    def n_nodes(self) -> int:
        return int(math.floor((self.upper - self.lower) / self.step + 1e-9)) + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.lower + self.step * np.arange(self.n_nodes)

    def refined(self, factor: int = 2) -> "QuadratureGrid":
        return QuadratureGrid(self.lower, self.upper, self.step / factor)

    @classmethod
    def around(cls, x, half_width: float = 3.0, step: float = 0.05, reference_sd: float = 1 / math.sqrt(3)):
        """Grid recentred on ``mean(x)`` and stretched by ``sd(x)/reference_sd``.

        With the defaults, a sample with the spread of a uniform on [-1, 1]
        gets (approximately) the standard [-3, 3] grid at step 0.05.
        """
        x = np.asarray(x, dtype=float)
        factor = float(np.std(x)) / reference_sd if x.size > 1 else 1.0
        if not factor > 0:
            factor = 1.0
        centre = float(np.mean(x))
        return cls(centre - half_width * factor, centre + half_width * factor, step * factor)


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        cols = []
        for name in ("x", "y", "z"):
            a = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float).ravel())
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            cols.append(a)
        if not cols[0].size:
            raise ValueError("dataset must contain at least one observation")
        if not cols[0].size == cols[1].size == cols[2].size:
            raise ValueError("x, y and z must have the same length")
        for name, a in zip("xyz", cols):
            bad = np.flatnonzero(~np.isfinite(a))
            if bad.size:
                raise ValueError(f"non-finite {name} at observation index {bad[0]}")

    @property
    def n(self) -> int:
        return self.x.size

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in "xyz")

    @classmethod
    def from_rows(cls, rows) -> "Dataset":
        arr = np.asarray(rows, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def take(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.z[idx])

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.x, self.y, self.z])


@numba.njit(cache=True)
def _horner_vec(c, r, acc):
    K = c.size
    for j in range(r.size):
        acc[j] = c[K - 1]
    for k in range(K - 2, -1, -1):
        ck = c[k]
        for j in range(r.size):
            acc[j] = acc[j] * r[j] + ck


@numba.njit(cache=True)
def _factor(c, s, kind, check_sign, r, tmp, poly, expo, start, i, neg_out):
    """Add one disturbance factor into ``poly``/``expo``; return True if negative somewhere live."""
    m = r.size
    _horner_vec(c, r, tmp)
    negative = False
    if kind == 0:
        a = -0.5 / (s * s)
        for j in range(m):
            expo[j] += a * r[j] * r[j]
            poly[j] *= tmp[j]
        if check_sign:
            for j in range(m):
                if tmp[j] < 0.0 and a * r[j] * r[j] > _EXP_UNDERFLOW:
                    negative = True
                    break
    else:
        inv = 1.0 / s
        for j in range(m):
            if abs(r[j] * inv) <= 1.0:
                if check_sign and tmp[j] < 0.0:
                    negative = True
                poly[j] *= tmp[j]
            else:
                expo[j] = -np.inf
                poly[j] = 0.0
    if negative:
        neg_out[start + i] = True
    return negative


@numba.njit(cache=True)
def _exponent_and_poly(x, y, z, start, nodes, g_nodes, h_nodes,
                       c_dx, s_dx, b_dx, n_dx, c_dy, s_dy, b_dy, n_dy, c_dz, s_dz, b_dz, n_dz,
                       stop_on_negative, Q, P, neg_out):
    """Fill rows of the exponent matrix ``Q`` and polynomial-product matrix ``P``.

    The ``n_*`` flags say whether a factor's polynomial can be negative at all;
    when set, its sign is checked at every node where the baseline is nonzero
    in floating point.  Returns True if any checked factor was negative.
    """
    rows, m = Q.shape
    r = np.empty(m)
    tmp = np.empty(m)
    negative = False
    for i in range(rows):
        xi = x[start + i]
        yi = y[start + i]
        zi = z[start + i]
        poly = P[i]
        expo = Q[i]
        for j in range(m):
            poly[j] = 1.0
            expo[j] = 0.0
        for j in range(m):
            r[j] = nodes[j] - xi
        neg = _factor(c_dx, s_dx, b_dx, n_dx, r, tmp, poly, expo, start, i, neg_out)
        for j in range(m):
            r[j] = yi - g_nodes[j]
        neg = _factor(c_dy, s_dy, b_dy, n_dy, r, tmp, poly, expo, start, i, neg_out) or neg
        for j in range(m):
            r[j] = zi - h_nodes[j]
        neg = _factor(c_dz, s_dz, b_dz, n_dz, r, tmp, poly, expo, start, i, neg_out) or neg
        for j in range(m):
            if expo[j] < _EXP_NORMAL_MIN:
                expo[j] = 0.0
                poly[j] = 0.0
        if neg:
            negative = True
            if stop_on_negative:
                return True
    return negative


def may_be_negative(coeffs) -> bool:
    """Whether ``sum_k coeffs[k] v**k`` is negative for some real ``v``."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if c.size == 0:
        return False
    if c.size == 1:
        return c[0] < 0
    if c[-1] < 0 or c[0] < 0:
        return True
    roots = np.roots(c[::-1])
    real = roots[np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots))]
    return real.size > 0


def _node_values(params: ModelParams, grid: QuadratureGrid):
    nodes = grid.nodes
    return nodes, horner(params.g.coeffs, nodes), horner(params.h.coeffs, nodes)


_local = threading.local()


def _workspace(rows: int, m: int):
    """Per-thread scratch matrices, reused across calls to avoid page faults."""
    buf = getattr(_local, "buf", None)
    if buf is None or buf[0].shape[0] < rows or buf[0].shape[1] != m:
        buf = (np.empty((rows, m)), np.empty((rows, m)))
        _local.buf = buf
    return buf[0][:rows], buf[1][:rows]


def latent_integral(x, y, z, nodes, step, g_nodes, h_nodes, dens, stop_on_negative=False, per_observation=False):
    """Low-level entry point used by the estimator's objective.

    ``dens`` is a sequence of three ``(coeffs, scale, baseline_kind)`` triples
    for the x*, y and z disturbances.  Returns ``(densities, negative)``, where
    ``negative`` is a per-observation boolean array if ``per_observation``.
    """
    n = x.size
    m = nodes.size
    out = np.zeros(n)
    neg_out = np.zeros(n, dtype=np.bool_)
    (c_dx, s_dx, k_dx), (c_dy, s_dy, k_dy), (c_dz, s_dz, k_dz) = dens
    c_dx, c_dy, c_dz = (np.ascontiguousarray(c, dtype=float) for c in (c_dx, c_dy, c_dz))
    flags = [may_be_negative(c) for c in (c_dx, c_dy, c_dz)]
    rows = min(n, _CHUNK)
    Q, P = _workspace(rows, m)
    negative = False
    for start in range(0, n, rows):
        stop = min(start + rows, n)
        q, p = Q[: stop - start], P[: stop - start]
        neg = _exponent_and_poly(
            x, y, z, start, nodes, g_nodes, h_nodes,
            c_dx, float(s_dx), _BASELINE_CODES[k_dx], flags[0],
            c_dy, float(s_dy), _BASELINE_CODES[k_dy], flags[1],
            c_dz, float(s_dz), _BASELINE_CODES[k_dz], flags[2],
            stop_on_negative, q, p, neg_out,
        )
        negative = negative or neg
        if neg and stop_on_negative:
            return out, (neg_out if per_observation else True)
        np.exp(q, out=q)
        out[start:stop] = np.einsum("ij,ij->i", p, q)
    norm = step
    for _, s, kind in dens:
        norm /= s
        if kind == "gaussian":
            norm *= _INV_SQRT_2PI
    out *= norm
    if per_observation:
        return out, neg_out
    return out, negative


def observation_densities(params: ModelParams, data: Dataset, grid: QuadratureGrid,
                          stop_on_negative=False, per_observation=False):
    """Model density of every observation; returns ``(densities, negative_flag)``."""
    nodes, g_nodes, h_nodes = _node_values(params, grid)
    dens = [
        (np.asarray(d.coeffs, dtype=float), d.scale, d.baseline_kind)
        for d in (params.f_dx, params.f_dy, params.f_dz)
    ]
    return latent_integral(
        data.x, data.y, data.z, nodes, grid.step, g_nodes, h_nodes, dens, stop_on_negative, per_observation
    )


def conditional_density(params: ModelParams, y: float, z: float, x: float, grid: QuadratureGrid):
    """``(f(y, z | x), infeasible)`` where the flag marks a negative integrand factor."""
    data = Dataset([x], [y], [z])
    dens, negative = observation_densities(params, data, grid)
    return float(dens[0]), bool(negative)


def log_likelihood(params: ModelParams, data: Dataset, grid: QuadratureGrid) -> float | None:
    """Mean log conditional density, or ``None`` when the point is infeasible.

    Infeasible means a negative integrand factor somewhere on the node set or
    an observation density at or below :data:`DENSITY_FLOOR`.
    """
    dens, negative = observation_densities(params, data, grid, stop_on_negative=True)
    return mean_log_density(dens, negative)


def mean_log_density(dens: np.ndarray, negative: bool) -> float | None:
    if negative or not np.all(dens > DENSITY_FLOOR):
        return None
    return float(np.mean(np.log(dens)))


def heldout_log_densities(params: ModelParams, data: Dataset, grid: QuadratureGrid) -> np.ndarray:
    """Per-observation log density, with infeasible observations scored ``log(DENSITY_FLOOR)``."""
    dens, negative = observation_densities(params, data, grid, per_observation=True)
    bad = negative | ~(dens > DENSITY_FLOOR)
    out = np.full(dens.size, math.log(DENSITY_FLOOR))
    out[~bad] = np.log(dens[~bad])
    return out
