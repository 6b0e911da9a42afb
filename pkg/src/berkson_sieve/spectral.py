"""Numerical check of the operator-diagonalisation identification argument.

Kernels are stored as conditional density values on grids; operators acting
on functions of the column variable are ``kernel * column_step``.  With

    A_y = F_{Z|X*} D_y F_{X*|X}   and   B = F_{Z|X*} F_{X*|X},

``A_y B^-1 = F_{Z|X*} D_y F_{Z|X*}^-1``, so an eigendecomposition of the
observable ``A_y B^-1`` returns the outcome densities ``f(y|x*)`` as
eigenvalues and the instrument densities ``f(.|x*)`` as eigenvectors.  The
eigenvector indexing is pinned down by requiring the implied ``f(x*|x)`` to
have mean ``x`` in every column.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment

from .exceptions import NumericalError

MAX_CONDITION = 1e10
EXHAUSTIVE_MAX_NODES = 8


def _step(grid: np.ndarray) -> float:
    d = np.diff(grid)
    if grid.size < 2 or not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise ValueError("grids must be equispaced with at least two nodes")
    return float(d[0])


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    x_grid: np.ndarray
    xstar_grid: np.ndarray
    z_grid: np.ndarray
    y_grid: np.ndarray
    f_z_xstar: np.ndarray  # (nz, nx*)
    f_xstar_x: np.ndarray  # (nx*, nx)
    f_y_xstar: np.ndarray  # (ny, nx*) eigenvalue table

    def __post_init__(self):
        for name in ("x_grid", "xstar_grid", "z_grid", "y_grid", "f_z_xstar", "f_xstar_x", "f_y_xstar"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        nx, ns, nz, ny = (g.size for g in (self.x_grid, self.xstar_grid, self.z_grid, self.y_grid))
        if self.f_z_xstar.shape != (nz, ns) or self.f_xstar_x.shape != (ns, nx) or self.f_y_xstar.shape != (ny, ns):
            raise ValueError("kernel shapes do not match the grids")
        for name, K, step in (("f_z_xstar", self.f_z_xstar, self.dz), ("f_xstar_x", self.f_xstar_x, self.dxstar)):
            if np.any(K < 0):
                raise ValueError(f"{name} has negative entries")
            mass = K.sum(axis=0) * step
            if np.max(np.abs(mass - 1.0)) > 1e-10:
                raise ValueError(f"{name} columns do not integrate to one (max error {np.max(np.abs(mass - 1)):.2g})")

    @property
    def dx(self) -> float:
        return _step(self.x_grid)

    @property
    def dxstar(self) -> float:
        return _step(self.xstar_grid)

    @property
    def dz(self) -> float:
        return _step(self.z_grid)

    def y_index(self, y: float) -> int:
        hits = np.flatnonzero(np.isclose(self.y_grid, y, rtol=0, atol=1e-12))
        if not hits.size:
            raise ValueError(f"y={y} is not a node of the y grid")
        return int(hits[0])


def _normalise_columns(K: np.ndarray, step: float) -> np.ndarray:
    return K / (K.sum(axis=0, keepdims=True) * step)


def _tilted_column(values: np.ndarray, base: np.ndarray, target: float) -> np.ndarray:
    """Exponentially tilt ``base`` weights on ``values`` so their mean is ``target``."""
    span = values.max() - values.min()

    def mean_gap(lam):
        logw = np.log(base) + lam * (values - target) / span
        w = np.exp(logw - logw.max())
        return float(w @ (values - target)) / w.sum()

    lo, hi = -50.0, 50.0
    while mean_gap(lo) > 0:
        lo *= 2
    while mean_gap(hi) < 0:
        hi *= 2
    lam = brentq(mean_gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    logw = np.log(base) + lam * (values - target) / span
    w = np.exp(logw - logw.max())
    return w / w.sum()


def gaussian_model(
    n_nodes: int = 15,
    xstar_range: tuple[float, float] = (-2.0, 2.0),
    x_range: tuple[float, float] = (-1.6, 1.6),
    z_range: tuple[float, float] = (-3.0, 3.0),
    y_range: tuple[float, float] = (-2.5, 2.5),
    n_y: int = 11,
    sd_dx: float = 0.25,
    sd_dy: float = 1.2,
    sd_dz: float = 0.4,
    g=lambda s: s,
    h=lambda s: s,
) -> DiscreteModel:
    """Discretised Gaussian Berkson model.

    ``f(x*|x)`` columns are Gaussian weights tilted so that each column has
    discrete mean exactly ``x``; this needs the x grid strictly inside the
    x* grid.
    """
    xs = np.linspace(*xstar_range, n_nodes)
    x = np.linspace(*x_range, n_nodes)
    z = np.linspace(*z_range, n_nodes)
    y = np.linspace(*y_range, n_y)
    if not (xs.min() < x.min() and x.max() < xs.max()):
        raise ValueError("x grid must lie strictly inside the x* grid for centred columns")
    d_s = _step(xs)

    K_xs = np.empty((n_nodes, n_nodes))
    for k, xk in enumerate(x):
        base = np.exp(-0.5 * ((xs - xk) / sd_dx) ** 2) + 1e-300
        K_xs[:, k] = _tilted_column(xs, base, xk) / d_s
    K_z = _normalise_columns(np.exp(-0.5 * ((z[:, None] - h(xs)[None, :]) / sd_dz) ** 2), _step(z))
    T_y = _normalise_columns(np.exp(-0.5 * ((y[:, None] - g(xs)[None, :]) / sd_dy) ** 2), _step(y))
    return DiscreteModel(x, xs, z, y, K_z, K_xs, T_y)


def operator_matrices(m: DiscreteModel):
    """(F_{Z|X*}, F_{X*|X}) as matrices acting on grid values."""
    return m.f_z_xstar * m.dxstar, m.f_xstar_x * m.dx


def build_observed(m: DiscreteModel, y: float):
    """``(A_y, B)`` for the node ``y`` of the y grid."""
    F_zs, F_sx = operator_matrices(m)
    d = m.f_y_xstar[m.y_index(y)]
    return F_zs @ (d[:, None] * F_sx), F_zs @ F_sx


def build_all(m: DiscreteModel):
    F_zs, F_sx = operator_matrices(m)
    B = F_zs @ F_sx
    return [F_zs @ (d[:, None] * F_sx) for d in m.f_y_xstar], B


def centering_violation(P: np.ndarray, x_grid: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Column mean minus ``x`` when row ``r`` of the mass matrix ``P`` sits at ``labels[r]``."""
    return labels @ P - x_grid


def resolve_ordering(P: np.ndarray, x_grid: np.ndarray, xstar_grid: np.ndarray, exhaustive: bool | None = None):
    """Assign each row of ``P`` to an x* node so that every column is centred.

    ``P`` holds the recovered ``f(x*|x)`` masses (columns sum to one) with rows
    in eigenvector order.  Returns ``(perm, violation)`` where ``perm[r]`` is
    the node index of row ``r``.  The centring equations ``P.T @ u = x`` give
    the label ``u_r`` of every row directly; rows are then matched to nodes by
    minimum total distance.  For small grids the minimum-violation ordering is
    also found by enumeration.
    """
    n = P.shape[0]
    if exhaustive is None:
        exhaustive = n <= EXHAUSTIVE_MAX_NODES
    if exhaustive:
        best, best_val = None, math.inf
        for perm in itertools.permutations(range(n)):
            perm = np.array(perm)
            val = float(np.abs(centering_violation(P, x_grid, xstar_grid[perm])).sum())
            if val < best_val:
                best, best_val = perm, val
        perm = best
    else:
        labels = np.linalg.solve(P.T, x_grid)
        cost = np.abs(labels[:, None] - xstar_grid[None, :])
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(n, dtype=int)
        perm[rows] = cols
    return perm, centering_violation(P, x_grid, xstar_grid[perm])


@dataclass(eq=False)
class SpectralRecovery:
    eigenvalues: np.ndarray  # (ny, nx*) in node order
    f_z_xstar: np.ndarray  # recovered eigenvectors, unit mass, node order
    f_xstar_x: np.ndarray  # recovered kernel
    permutation: np.ndarray
    centering_violation: np.ndarray
    condition_B: float
    min_singular_B: float
    max_imag: float
    degenerate_y: np.ndarray
    reference_y: int
    diagnostics: dict = field(default_factory=dict)


def _min_rel_gap(vals: np.ndarray) -> float:
    v = np.sort(vals.real)
    scale = max(np.abs(v).max(), 1e-300)
    return float(np.min(np.diff(v)) / scale) if v.size > 1 else math.inf


def _unit_mass(V: np.ndarray, dz: float) -> np.ndarray:
    return V / (V.sum(axis=0, keepdims=True) * dz)


def recover_latents(
    A_list,
    B: np.ndarray,
    x_grid: np.ndarray,
    xstar_grid: np.ndarray,
    dz: float,
    tol: float = 1e-8,
    degenerate_gap: float = 1e-6,
    exhaustive: bool | None = None,
) -> SpectralRecovery:
    """Recover f(y|x*), f(z|x*) and f(x*|x) from the observable operators."""
    x_grid = np.asarray(x_grid, dtype=float)
    xstar_grid = np.asarray(xstar_grid, dtype=float)
    sv = np.linalg.svd(B, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if cond > MAX_CONDITION:
        raise NumericalError(f"B is numerically singular (condition number {cond:.3g})")
    B_inv = np.linalg.inv(B)

    decomps = []
    max_imag = 0.0
    for A in A_list:
        vals, vecs = np.linalg.eig(A @ B_inv)
        max_imag = max(max_imag, float(np.max(np.abs(vals.imag))), float(np.max(np.abs(vecs.imag))))
        decomps.append((vals.real, vecs.real))
    gaps = np.array([_min_rel_gap(v) for v, _ in decomps])
    degenerate = gaps < degenerate_gap
    ref = int(np.argmax(gaps))
    if degenerate[ref]:
        raise NumericalError("every y in the collection has (near-)degenerate eigenvalues")
    V = _unit_mass(decomps[ref][1], dz)
    V_inv = np.linalg.inv(V)

    # align eigenpairs with the reference basis
    n = V.shape[1]
    eig = np.empty((len(A_list), n))
    unit = V / np.linalg.norm(V, axis=0)
    for i, (vals, vecs) in enumerate(decomps):
        if degenerate[i]:
            eig[i] = np.diag(V_inv @ (A_list[i] @ B_inv) @ V)
            continue
        w = vecs / np.linalg.norm(vecs, axis=0)
        overlap = np.abs(unit.T @ w)
        rows, cols = linear_sum_assignment(-overlap)
        eig[i, rows] = vals[cols]

    W = V_inv @ B
    P = W / W.sum(axis=0, keepdims=True)
    perm, violation = resolve_ordering(P, x_grid, xstar_grid, exhaustive)
    scale = float(np.max(np.abs(xstar_grid))) or 1.0
    if np.max(np.abs(violation)) > tol * scale:
        raise NumericalError(
            f"no eigenvector ordering centres f(x*|x); violation profile {np.array2string(violation, precision=3)}"
        )
    inv = np.argsort(perm)
    d_s = _step(xstar_grid)
    rec_xs = P[inv] / d_s
    rec_z = V[:, inv]
    eig = eig[:, inv]
    return SpectralRecovery(
        eigenvalues=eig,
        f_z_xstar=rec_z,
        f_xstar_x=rec_xs,
        permutation=perm,
        centering_violation=violation,
        condition_B=cond,
        min_singular_B=float(sv[-1]),
        max_imag=max_imag,
        degenerate_y=degenerate,
        reference_y=ref,
    )


def _rel_err(est, true) -> float:
    return float(np.max(np.abs(est - true)) / np.max(np.abs(true)))


def round_trip(m: DiscreteModel, **kw) -> tuple[SpectralRecovery, dict]:
    """Build observables from ``m``, recover the latents and report errors."""
    A_list, B = build_all(m)
    rec = recover_latents(A_list, B, m.x_grid, m.xstar_grid, m.dz, **kw)
    report = {
        "n_nodes": int(m.xstar_grid.size),
        "n_y": int(m.y_grid.size),
        "condition_number_B": rec.condition_B,
        "min_singular_value_B": rec.min_singular_B,
        "max_imag_part": rec.max_imag,
        "degenerate_y_count": int(rec.degenerate_y.sum()),
        "reference_y": float(m.y_grid[rec.reference_y]),
        "max_centering_violation": float(np.max(np.abs(rec.centering_violation))),
        "eigenvalue_rel_error": _rel_err(rec.eigenvalues, m.f_y_xstar),
        "f_xstar_x_rel_error": _rel_err(rec.f_xstar_x, m.f_xstar_x),
        "f_z_xstar_rel_error": _rel_err(rec.f_z_xstar, m.f_z_xstar),
        "permutation_is_identity": bool(np.array_equal(rec.permutation, np.arange(rec.permutation.size))),
    }
    rec.diagnostics = report
    return rec, report
