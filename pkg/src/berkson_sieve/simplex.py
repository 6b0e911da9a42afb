"""Nelder-Mead simplex minimizer with rejection of infeasible points.

The objective may return ``None`` or ``+inf`` to reject a trial point; such
points simply lose every comparison, so the simplex never moves onto them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import InfeasibleStartError, NumericalError


@dataclass(frozen=True)
class SimplexOptions:
    max_iters: int = 20000
    f_tol: float = 1e-9
    x_tol: float = 1e-8
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    restarts: int = 2

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.f_tol > 0 and self.x_tol > 0):
            raise ValueError("f_tol and x_tol must be positive")
        if not self.reflection > 0:
            raise ValueError("reflection coefficient must be > 0")
        if not self.expansion > self.reflection:
            raise ValueError("expansion coefficient must exceed reflection")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction coefficient must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink coefficient must lie in (0, 1)")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    converged: bool
    restarts_used: int = 0
    trace: list = field(default_factory=list, repr=False)


def initial_simplex(x0: np.ndarray) -> np.ndarray:
    """``x0`` plus one vertex per coordinate, displaced by max(0.05, 0.1*|x0_j|)."""
    n = x0.size
    verts = np.tile(x0, (n + 1, 1))
    for j in range(n):
        verts[j + 1, j] += max(0.05, 0.1 * abs(x0[j]))
    return verts


class _Objective:
    def __init__(self, func):
        self.func = func
        self.nfev = 0

    def __call__(self, x) -> float:
        self.nfev += 1
        val = self.func(x)
        if val is None:
            return math.inf
        val = float(val)
        if math.isnan(val):
            raise NumericalError(f"objective returned NaN at {x!r}")
        return val


def _converged(fvals, verts, opts) -> bool:
    f_lo, f_hi = fvals[0], fvals[-1]
    if math.isfinite(f_hi) and 2.0 * abs(f_hi - f_lo) <= opts.f_tol * (abs(f_hi) + abs(f_lo) + 1e-10):
        return True
    return float(np.max(np.abs(verts[1:] - verts[0]))) <= opts.x_tol


def _run(fun: _Objective, verts: np.ndarray, fvals: np.ndarray, opts: SimplexOptions, trace: list):
    n = verts.shape[1]
    rho, chi, gamma, sigma = opts.reflection, opts.expansion, opts.contraction, opts.shrink
    for it in range(1, opts.max_iters + 1):
        order = np.argsort(fvals, kind="stable")
        verts, fvals = verts[order], fvals[order]
        if _converged(fvals, verts, opts):
            return verts, fvals, it - 1, True
        centroid = verts[:-1].mean(axis=0)
        worst = verts[-1]
        xr = centroid + rho * (centroid - worst)
        fr = fun(xr)
        if fr < fvals[0]:
            xe = centroid + chi * (xr - centroid)
            fe = fun(xe)
            if fe < fr:
                verts[-1], fvals[-1] = xe, fe
            else:
                verts[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            verts[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + gamma * (xr - centroid)
                fc = fun(xc)
                accept = fc <= fr
            else:
                xc = centroid + gamma * (worst - centroid)
                fc = fun(xc)
                accept = fc < fvals[-1]
            if accept:
                verts[-1], fvals[-1] = xc, fc
            else:
                best = verts[0]
                for k in range(1, n + 1):
                    verts[k] = best + sigma * (verts[k] - best)
                    fvals[k] = fun(verts[k])
        trace.append(float(np.min(fvals)))
    order = np.argsort(fvals, kind="stable")
    verts, fvals = verts[order], fvals[order]
    return verts, fvals, opts.max_iters, _converged(fvals, verts, opts)


def minimize(
    objective: Callable[[np.ndarray], Optional[float]],
    x0,
    opts: SimplexOptions | None = None,
) -> SimplexResult:
    """Minimize ``objective`` from ``x0``.

    After each converged run the simplex is rebuilt around the incumbent and
    the search repeated, up to ``opts.restarts`` times; a restart is kept only
    if it improves the incumbent, and the loop stops at the first restart that
    does not.
    """
    opts = opts or SimplexOptions()
    x0 = np.array(x0, dtype=float).ravel()
    fun = _Objective(objective)
    f0 = fun(x0)
    if not math.isfinite(f0):
        raise InfeasibleStartError("objective is infeasible at the initial point")

    trace = [f0]
    x_best, f_best = x0, f0
    total_iters = 0
    converged = False
    restarts_used = 0
    for attempt in range(opts.restarts + 1):
        verts = initial_simplex(x_best)
        fvals = np.array([f_best] + [fun(v) for v in verts[1:]])
        verts, fvals, nit, converged = _run(fun, verts, fvals, opts, trace)
        total_iters += nit
        improved = fvals[0] < f_best
        gain = f_best - fvals[0]
        if improved:
            x_best, f_best = verts[0].copy(), float(fvals[0])
        if attempt > 0:
            restarts_used += 1
        if attempt > 0 and gain <= opts.f_tol * (abs(f_best) + 1e-10):
            break
    return SimplexResult(
        x=x_best, fun=f_best, nit=total_iters, nfev=fun.nfev,
        converged=bool(converged), restarts_used=restarts_used, trace=trace,
    )
