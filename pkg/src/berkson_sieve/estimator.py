"""Sieve maximum likelihood fit and the naive least-squares comparator.

Functional entry points are :func:`naive_fit`, :func:`initialize` and
:func:`fit`; :class:`BerksonSieveRegressor` and :class:`NaiveSeriesRegressor`
wrap them in the scikit-learn estimator protocol.

Parameter vector layout used by the optimizer::

    [ beta_g | beta_h | log s_dx, tail_dx | log s_dy, tail_dy | log s_dz, tail_dz ]

Density tails are held in the standardised basis ``(v/s)**(k-1)`` so that the
simplex works on quantities of comparable size; the returned
:class:`~berkson_sieve.sieve.DensitySieve` objects use the raw basis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_dataset, check_covariate
from .exceptions import InfeasibleStartError, RankDeficientError
from .likelihood import (
    Dataset,
    QuadratureGrid,
    heldout_log_densities,
    latent_integral,
    log_likelihood,
    mean_log_density,
)
from .sieve import (
    DEFAULT_COEFF_BOUND,
    SCALE_MAX,
    SCALE_MIN,
    DensitySieve,
    ModelParams,
    PolySieve,
    eliminate_constraints,
    eval_density,
    horner,
)
from .simplex import SimplexOptions, minimize

INIT_SPLIT = 1.0 / math.sqrt(2.0)
INIT_DX_FRACTION = 0.5


@dataclass(frozen=True, order=True)
class SieveOrders:
    """Free-parameter counts: density tails (k_dx, k_dy, k_dz) and series terms (k_g, k_h).

    A density with ``k`` free tail coefficients has ``k + 2`` coefficients in
    total; the scale is not counted.
    """

    k_dx: int
    k_dy: int
    k_dz: int
    k_g: int
    k_h: int

    def __post_init__(self):
        for name, val in zip(("k_dx", "k_dy", "k_dz", "k_g", "k_h"), self.as_tuple()):
            if int(val) != val or val < 1:
                raise ValueError(f"{name} must be a positive integer, got {val}")

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.k_dx, self.k_dy, self.k_dz, self.k_g, self.k_h)

    @property
    def n_free(self) -> int:
        return sum(self.as_tuple())

    @property
    def n_packed(self) -> int:
        """Length of the optimizer vector (free counts plus three log-scales)."""
        return self.n_free + 3

    @classmethod
    def parse(cls, text) -> "SieveOrders":
        if isinstance(text, SieveOrders):
            return text
        if isinstance(text, str):
            parts = [p for p in text.replace(" ", "").split(",") if p]
        else:
            parts = list(text)
        if len(parts) != 5:
            raise ValueError(f"orders need 5 entries kdx,kdy,kdz,kg,kh, got {text!r}")
        return cls(*(int(p) for p in parts))

    def __str__(self) -> str:
        return ",".join(str(v) for v in self.as_tuple())


@dataclass(frozen=True)
class SieveSettings:
    """Model-family and search settings that are not sieve orders."""

    centering: str = "mean_zero"
    baseline_kind: str = "gaussian"
    coeff_bound: float = DEFAULT_COEFF_BOUND
    scale_min: float = SCALE_MIN
    scale_max: float = SCALE_MAX
    init_split: float = INIT_SPLIT
    init_dx_fraction: float = INIT_DX_FRACTION
    staged: bool = True


@dataclass(frozen=True)
class NaiveFit:
    beta_g: np.ndarray
    beta_h: np.ndarray
    resid_var_y: float
    resid_var_z: float


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    loglik: float
    orders: SieveOrders
    converged: bool
    grid: QuadratureGrid
    curves: dict = field(repr=False)
    density_traces: dict = field(repr=False)
    init_loglik: float = float("nan")
    n_iter: int = 0
    n_fev: int = 0

    def g_hat(self, x):
        return horner(self.params.g.coeffs, x)

    def h_hat(self, x):
        return horner(self.params.h.coeffs, x)


def _polyfit_normal_equations(x: np.ndarray, t: np.ndarray, n_terms: int, label: str):
    V = np.vander(x, n_terms, increasing=True)
    XtX = V.T @ V
    Xty = V.T @ t
    Q, R, piv = scipy.linalg.qr(XtX, pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[-1] <= max(diag[0], 1.0) * n_terms * np.finfo(float).eps * 1e3:
        raise RankDeficientError(f"design for {label} with {n_terms} terms is rank deficient")
    sol = np.empty(n_terms)
    sol[piv] = scipy.linalg.solve_triangular(R, Q.T @ Xty)
    resid = t - V @ sol
    return sol, float(resid @ resid / t.size)


def naive_fit(data: Dataset, n_terms_g: int, n_terms_h: int) -> NaiveFit:
    """Least squares of y on x and z on x, ignoring the measurement error.

    The normal equations are solved through a column-pivoted QR factorisation.
    Residual variances use the ``1/n`` normalisation.
    """
    for label, k in (("g", n_terms_g), ("h", n_terms_h)):
        if k < 1:
            raise ValueError(f"{label} needs at least one term")
        if data.n <= k:
            raise RankDeficientError(f"{data.n} observations cannot identify {k} terms for {label}")
    bg, vy = _polyfit_normal_equations(data.x, data.y, n_terms_g, "g (y on x)")
    bh, vz = _polyfit_normal_equations(data.x, data.z, n_terms_h, "h (z on x)")
    return NaiveFit(bg, bh, vy, vz)


def _gaussian_start(scale: float, k_free: int, settings: SieveSettings) -> DensitySieve:
    scale = min(max(scale, settings.scale_min), settings.scale_max)
    std = eliminate_constraints(1.0, np.zeros(k_free), settings.centering, settings.baseline_kind)
    coeffs = std / scale ** np.arange(std.size)
    return DensitySieve(scale, tuple(coeffs), settings.baseline_kind, settings.centering)


def initialize(data: Dataset, orders: SieveOrders, settings: SieveSettings | None = None) -> ModelParams:
    """Starting point: naive series fits and Gaussian error densities."""
    settings = settings or SieveSettings()
    nf = naive_fit(data, orders.k_g, orders.k_h)
    return ModelParams(
        g=PolySieve(tuple(nf.beta_g)),
        h=PolySieve(tuple(nf.beta_h)),
        f_dx=_gaussian_start(settings.init_dx_fraction * float(np.std(data.x)), orders.k_dx, settings),
        f_dy=_gaussian_start(math.sqrt(nf.resid_var_y) * settings.init_split, orders.k_dy, settings),
        f_dz=_gaussian_start(math.sqrt(nf.resid_var_z) * settings.init_split, orders.k_dz, settings),
    )


def pack(params: ModelParams, orders: SieveOrders) -> np.ndarray:
    parts = [np.asarray(params.g.coeffs), np.asarray(params.h.coeffs)]
    for d, k in zip((params.f_dx, params.f_dy, params.f_dz), (orders.k_dx, orders.k_dy, orders.k_dz)):
        std = d.standardized_coeffs()
        if std.size != k + 2:
            raise ValueError(f"density has {std.size} coefficients, orders expect {k + 2}")
        parts.append(np.concatenate([[math.log(d.scale)], std[2:]]))
    return np.concatenate(parts)


class _Unpacker:
    def __init__(self, orders: SieveOrders, settings: SieveSettings):
        self.orders = orders
        self.settings = settings
        bounds = np.cumsum([0, orders.k_g, orders.k_h, orders.k_dx + 1, orders.k_dy + 1, orders.k_dz + 1])
        self.slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def raw(self, vec):
        """(beta_g, beta_h, [(coeffs, scale), ...]) or ``None`` if out of bounds."""
        st = self.settings
        bound = st.coeff_bound
        beta_g = vec[self.slices[0]]
        beta_h = vec[self.slices[1]]
        if np.any(np.abs(beta_g) > bound) or np.any(np.abs(beta_h) > bound):
            return None
        dens = []
        for sl in self.slices[2:]:
            block = vec[sl]
            scale = math.exp(block[0])
            if not st.scale_min <= scale <= st.scale_max:
                return None
            std = eliminate_constraints(1.0, block[1:], st.centering, st.baseline_kind)
            if np.any(np.abs(std) > bound):
                return None
            dens.append((std / scale ** np.arange(std.size), scale))
        return beta_g, beta_h, dens

    def params(self, vec) -> ModelParams:
        beta_g, beta_h, dens = self.raw(vec)
        st = self.settings
        sieves = [DensitySieve(s, tuple(c), st.baseline_kind, st.centering) for c, s in dens]
        return ModelParams(PolySieve(tuple(beta_g)), PolySieve(tuple(beta_h)), *sieves)


def make_objective(data: Dataset, orders: SieveOrders, grid: QuadratureGrid, settings: SieveSettings):
    """Negative mean log-likelihood of the packed vector; ``None`` when infeasible."""
    unpack = _Unpacker(orders, settings)
    nodes = grid.nodes
    kind = settings.baseline_kind

    def objective(vec):
        raw = unpack.raw(vec)
        if raw is None:
            return None
        beta_g, beta_h, dens = raw
        triples = [(c, s, kind) for c, s in dens]
        values, negative = latent_integral(
            data.x, data.y, data.z, nodes, grid.step,
            horner(beta_g, nodes), horner(beta_h, nodes), triples, stop_on_negative=True,
        )
        ll = mean_log_density(values, negative)
        return None if ll is None else -ll

    return objective, unpack


def _feasible_start(params: ModelParams, data, grid, settings):
    for _ in range(6):
        ll = log_likelihood(params, data, grid)
        if ll is not None:
            return params, ll
        params = replace(
            params,
            **{
                name: _rescaled(d, min(2.0 * d.scale, settings.scale_max))
                for name, d in params.densities().items()
            },
        )
    raise InfeasibleStartError("no feasible starting point after inflating the density scales 5 times")


def _rescaled(d: DensitySieve, scale: float) -> DensitySieve:
    std = d.standardized_coeffs()
    return DensitySieve(scale, tuple(std / scale ** np.arange(std.size)), d.baseline_kind, d.centering)


def _padded(params: ModelParams, orders: SieveOrders) -> ModelParams:
    """Embed ``params`` in larger orders by appending zero coefficients."""

    def poly(s, k):
        return PolySieve(tuple(s.coeffs) + (0.0,) * (k - len(s.coeffs)))

    def dens(d, k):
        return DensitySieve(d.scale, tuple(d.coeffs) + (0.0,) * (k + 2 - len(d.coeffs)), d.baseline_kind, d.centering)

    return ModelParams(
        poly(params.g, orders.k_g), poly(params.h, orders.k_h),
        dens(params.f_dx, orders.k_dx), dens(params.f_dy, orders.k_dy), dens(params.f_dz, orders.k_dz),
    )


def stage_orders(orders: SieveOrders) -> list[SieveOrders]:
    """Continuation path: short tails and series, then full series, then full orders."""
    first = SieveOrders(1, 1, 1, min(orders.k_g, 3), min(orders.k_h, 3))
    second = SieveOrders(1, 1, 1, orders.k_g, orders.k_h)
    path = []
    for o in (first, second, orders):
        if o not in path:
            path.append(o)
    return path


def density_traces(params: ModelParams, n_points: int = 201, width: float = 5.0) -> dict:
    s = max(d.scale for d in params.densities().values())
    v = np.linspace(-width * s, width * s, n_points)
    out = {"v": v}
    for name, d in params.densities().items():
        out[name] = eval_density(d, v)
    return out


def fit(
    data: Dataset,
    orders: SieveOrders,
    grid: QuadratureGrid | None = None,
    opts: SimplexOptions | None = None,
    settings: SieveSettings | None = None,
    eval_points=None,
    start: ModelParams | None = None,
) -> FitResult:
    """Maximise the mean conditional log-likelihood over the sieve family.

    With ``settings.staged`` (the default) and no explicit ``start``, the
    search runs along :func:`stage_orders`, each stage starting from the
    previous optimum padded with zeros.  The likelihood is non-decreasing
    along the path, and the result is still a point of the requested family.
    """
    orders = SieveOrders.parse(orders)
    grid = grid or QuadratureGrid()
    opts = opts or SimplexOptions()
    settings = settings or SieveSettings()

    if start is not None or not settings.staged:
        path = [orders]
    else:
        path = stage_orders(orders)

    init_ll = None
    params = None
    nit = nfev = 0
    converged = True
    for o in path:
        if params is None:
            init = start if start is not None else initialize(data, o, settings)
        else:
            init = _padded(params, o)
        if o == orders and params is not None:
            # never start the last stage below the plain full-order start
            direct = initialize(data, o, settings)
            if (log_likelihood(direct, data, grid) or -np.inf) > log_likelihood(init, data, grid):
                init = direct
        init, ll0 = _feasible_start(init, data, grid, settings)
        init_ll = ll0 if init_ll is None else init_ll
        objective, unpack = make_objective(data, o, grid, settings)
        res = minimize(objective, pack(init, o), opts)
        params = unpack.params(res.x)
        nit += res.nit
        nfev += res.nfev
        converged = res.converged
    loglik = log_likelihood(params, data, grid)

    if eval_points is None:
        eval_points = np.linspace(data.x.min(), data.x.max(), 101)
    eval_points = np.asarray(eval_points, dtype=float)
    curves = {
        "x": eval_points,
        "g_hat": horner(params.g.coeffs, eval_points),
        "h_hat": horner(params.h.coeffs, eval_points),
    }
    return FitResult(
        params=params,
        loglik=loglik,
        orders=orders,
        converged=converged,
        grid=grid,
        curves=curves,
        density_traces=density_traces(params),
        init_loglik=init_ll,
        n_iter=nit,
        n_fev=nfev,
    )


class BerksonSieveRegressor(RegressorMixin, BaseEstimator):
    """Nonparametric regression robust to Berkson error in the covariate.

    ``fit(X, y)`` takes the observed covariate ``X`` (one column) and a
    two-column target holding the outcome and the instrument.  ``predict``
    evaluates the estimated regression function at the supplied points,
    which are interpreted as values of the true covariate.

    Parameters
    ----------
    orders : str or tuple of 5 ints, default (3, 3, 3, 6, 6)
        Free parameter counts ``k_dx, k_dy, k_dz, k_g, k_h``.
    grid_lower, grid_upper, grid_step : float
        Latent quadrature grid.  Ignored when ``auto_grid`` is true, in which
        case the grid is placed around the observed covariate.
    centering : {"mean_zero", "median_zero"}
    baseline : {"gaussian", "flat"}
    coeff_bound : float
        Magnitude bound on regression coefficients and standardised density
        coefficients; trial points beyond it are rejected.
    max_iters, f_tol, x_tol, restarts :
        Simplex search controls.
    staged : bool, default True
        Reach the requested orders through smaller ones (see :func:`fit`).
    """

    def __init__(
        self,
        orders=(3, 3, 3, 6, 6),
        grid_lower=-3.0,
        grid_upper=3.0,
        grid_step=0.05,
        auto_grid=False,
        centering="mean_zero",
        baseline="gaussian",
        coeff_bound=DEFAULT_COEFF_BOUND,
        max_iters=20000,
        f_tol=1e-9,
        x_tol=1e-8,
        restarts=2,
        init_split=INIT_SPLIT,
        init_dx_fraction=INIT_DX_FRACTION,
        staged=True,
    ):
        self.orders = orders
        self.grid_lower = grid_lower
        self.grid_upper = grid_upper
        self.grid_step = grid_step
        self.auto_grid = auto_grid
        self.centering = centering
        self.baseline = baseline
        self.coeff_bound = coeff_bound
        self.max_iters = max_iters
        self.f_tol = f_tol
        self.x_tol = x_tol
        self.restarts = restarts
        self.init_split = init_split
        self.init_dx_fraction = init_dx_fraction
        self.staged = staged

    def _settings(self) -> SieveSettings:
        return SieveSettings(
            centering=self.centering,
            baseline_kind=self.baseline,
            coeff_bound=self.coeff_bound,
            init_split=self.init_split,
            init_dx_fraction=self.init_dx_fraction,
            staged=self.staged,
        )

    def _options(self) -> SimplexOptions:
        return SimplexOptions(max_iters=self.max_iters, f_tol=self.f_tol, x_tol=self.x_tol, restarts=self.restarts)

    def fit(self, X, y):
        data = as_dataset(X, y)
        if self.auto_grid:
            grid = QuadratureGrid.around(data.x, step=self.grid_step)
        else:
            grid = QuadratureGrid(self.grid_lower, self.grid_upper, self.grid_step)
        self.result_ = fit(data, SieveOrders.parse(self.orders), grid, self._options(), self._settings())
        self.params_ = self.result_.params
        self.grid_ = grid
        self.loglik_ = self.result_.loglik
        self.converged_ = self.result_.converged
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return horner(self.params_.g.coeffs, check_covariate(X))

    def predict_instrument(self, X):
        check_is_fitted(self, "params_")
        return horner(self.params_.h.coeffs, check_covariate(X))

    def score(self, X, y, sample_weight=None):
        """Mean held-out log conditional density (higher is better)."""
        check_is_fitted(self, "params_")
        vals = heldout_log_densities(self.params_, as_dataset(X, y), self.grid_)
        return float(np.average(vals, weights=sample_weight))


class NaiveSeriesRegressor(RegressorMixin, BaseEstimator):
    """Polynomial least squares of the outcome and the instrument on the observed covariate."""

    def __init__(self, n_terms_g=6, n_terms_h=6):
        self.n_terms_g = n_terms_g
        self.n_terms_h = n_terms_h

    def fit(self, X, y):
        data = as_dataset(X, y)
        nf = naive_fit(data, self.n_terms_g, self.n_terms_h)
        self.coef_g_ = nf.beta_g
        self.coef_h_ = nf.beta_h
        self.resid_var_ = np.array([nf.resid_var_y, nf.resid_var_z])
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_g_")
        return horner(self.coef_g_, check_covariate(X))

    def predict_instrument(self, X):
        check_is_fitted(self, "coef_h_")
        return horner(self.coef_h_, check_covariate(X))

    def score(self, X, y, sample_weight=None):
        """R^2 of the outcome equation."""
        y = np.asarray(y, dtype=float)
        y = y[:, 0] if y.ndim == 2 else y
        return super().score(X, y, sample_weight)
