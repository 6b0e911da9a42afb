import math

import numpy as np
import pytest
from sklearn.base import clone

from berkson_sieve.estimator import (
    _padded,
    BerksonSieveRegressor,
    NaiveSeriesRegressor,
    SieveOrders,
    SieveSettings,
    fit,
    initialize,
    make_objective,
    naive_fit,
    pack,
    stage_orders,
)
from berkson_sieve.exceptions import RankDeficientError
from berkson_sieve.likelihood import Dataset, QuadratureGrid, log_likelihood
from berkson_sieve.simplex import SimplexOptions
from berkson_sieve.simulation import Scenario, generate

FAST = SimplexOptions(f_tol=1e-7, restarts=0)
WIDE = QuadratureGrid(-6.0, 6.0, 0.05)


@pytest.fixture(scope="module")
def design_sample():
    return generate(Scenario(n=500, seed=11))


def test_orders_parse_and_validate():
    o = SieveOrders.parse("3,3,3,6,6")
    assert o == SieveOrders(3, 3, 3, 6, 6) == SieveOrders.parse((3, 3, 3, 6, 6))
    assert str(o) == "3,3,3,6,6"
    assert o.n_packed == 24
    with pytest.raises(ValueError):
        SieveOrders.parse("3,3,3,6")
    with pytest.raises(ValueError):
        SieveOrders(0, 1, 1, 1, 1)


def test_naive_exact_line():
    x = np.linspace(-1, 1, 9)
    nf = naive_fit(Dataset(x, 2 * x, 1 + x**2), 2, 3)
    np.testing.assert_allclose(nf.beta_g, [0, 2], atol=1e-12)
    np.testing.assert_allclose(nf.beta_h, [1, 0, 1], atol=1e-12)
    assert nf.resid_var_y == pytest.approx(0, abs=1e-24)
    assert nf.resid_var_z == pytest.approx(0, abs=1e-24)


def test_naive_matches_lstsq_oracle(design_sample):
    nf = naive_fit(design_sample, 6, 6)
    V = np.vander(design_sample.x, 6, increasing=True)
    for beta, t in ((nf.beta_g, design_sample.y), (nf.beta_h, design_sample.z)):
        oracle = np.linalg.lstsq(V, t, rcond=None)[0]
        np.testing.assert_allclose(beta, oracle, atol=1e-8)
    r = design_sample.y - V @ nf.beta_g
    assert nf.resid_var_y == pytest.approx(r @ r / design_sample.n, rel=1e-10)


def test_naive_rank_deficiency_names_order():
    x = np.repeat([0.0, 1.0], 5)
    with pytest.raises(RankDeficientError, match="g"):
        naive_fit(Dataset(x, x, x), 4, 2)
    with pytest.raises(RankDeficientError):
        naive_fit(Dataset([0.0, 1.0], [0, 1], [0, 1]), 3, 1)


def test_initialize_contract(design_sample):
    o = SieveOrders(3, 3, 3, 6, 6)
    p = initialize(design_sample, o)
    p.check_invariants()
    nf = naive_fit(design_sample, 6, 6)
    assert p.f_dy.scale == pytest.approx(math.sqrt(nf.resid_var_y) / math.sqrt(2))
    assert p.f_dz.scale == pytest.approx(math.sqrt(nf.resid_var_z) / math.sqrt(2))
    assert p.f_dx.scale == pytest.approx(0.5 * np.std(design_sample.x))
    assert all(d.n_coeffs == 5 for d in p.densities().values())
    q = initialize(design_sample, o)
    assert p == q


def test_initialize_floors_scale_on_exact_data():
    x = np.linspace(-1, 1, 50)
    p = initialize(Dataset(x, 2 * x, 1 + x), SieveOrders(1, 1, 1, 2, 2))
    assert p.f_dy.scale == 1e-3 and p.f_dz.scale == 1e-3


def test_pack_round_trip(design_sample):
    o = SieveOrders(2, 1, 3, 4, 5)
    p = initialize(design_sample, o)
    vec = pack(p, o)
    assert vec.size == o.n_packed
    objective, unpack = make_objective(design_sample, o, QuadratureGrid(), SieveSettings())
    q = unpack.params(vec)
    np.testing.assert_allclose(q.f_dz.coeffs, p.f_dz.coeffs, rtol=1e-12, atol=1e-14)
    assert -objective(vec) == pytest.approx(log_likelihood(p, design_sample, QuadratureGrid()), rel=1e-12)
    # coefficient bound rejects
    bad = vec.copy()
    bad[0] = 60.0
    assert objective(bad) is None


def test_fit_contracts(design_sample):
    o = SieveOrders(1, 1, 1, 3, 3)
    res = fit(design_sample, o, opts=FAST)
    res.params.check_invariants(tol=1e-8)
    assert res.loglik == log_likelihood(res.params, design_sample, res.grid)
    assert res.loglik >= res.init_loglik
    assert res.loglik >= log_likelihood(initialize(design_sample, o), design_sample, res.grid)
    assert set(res.curves) == {"x", "g_hat", "h_hat"}
    assert set(res.density_traces) == {"v", "f_dx", "f_dy", "f_dz"}


def test_fit_is_permutation_invariant(design_sample):
    o = SieveOrders(1, 1, 1, 2, 2)
    perm = np.random.default_rng(0).permutation(design_sample.n)
    a = fit(design_sample, o, opts=FAST)
    b = fit(design_sample.take(perm), o, opts=FAST)
    np.testing.assert_allclose(a.params.g.coeffs, b.params.g.coeffs, rtol=1e-8, atol=1e-10)
    assert a.loglik == pytest.approx(b.loglik, rel=1e-12)


def test_location_shift_of_outcome(design_sample):
    o = SieveOrders(1, 1, 1, 3, 3)
    res = fit(design_sample, o, opts=FAST)
    c = 0.7
    shifted = Dataset(design_sample.x, design_sample.y + c, design_sample.z)
    moved = res.params.__class__(
        res.params.g.__class__((res.params.g.coeffs[0] + c,) + res.params.g.coeffs[1:]),
        res.params.h, res.params.f_dx, res.params.f_dy, res.params.f_dz,
    )
    assert log_likelihood(moved, shifted, res.grid) == pytest.approx(res.loglik, abs=1e-12)
    refit = fit(shifted, o, opts=FAST)
    assert refit.loglik == pytest.approx(res.loglik, abs=1e-4)


def test_identity_gaussian_recovery():
    data = generate(Scenario.gaussian_identity(n=2000, seed=1))
    res = fit(data, SieveOrders(1, 1, 1, 2, 2), WIDE, SimplexOptions(f_tol=1e-8, restarts=1))
    assert abs(res.params.g.coeffs[1] - 1) < 0.1
    assert abs(res.params.h.coeffs[1] - 1) < 0.1
    assert abs(res.params.g.coeffs[0]) < 0.1
    # the fitted error densities have unit standard deviation
    for d in res.params.densities().values():
        v = np.linspace(-12, 12, 24001)
        sd = math.sqrt(np.sum(v**2 * d(v)) * (v[1] - v[0]))
        assert abs(sd - 1) < 0.15


@pytest.mark.xfail(strict=True, reason="scale and first tail coefficient trade off at a Gaussian truth; see decisions ledger")
def test_identity_gaussian_scales_near_one():
    data = generate(Scenario.gaussian_identity(n=2000, seed=1))
    res = fit(data, SieveOrders(1, 1, 1, 2, 2), WIDE, SimplexOptions(f_tol=1e-8, restarts=1))
    assert all(abs(d.scale - 1) < 0.15 for d in res.params.densities().values())


def test_regressor_api(design_sample):
    X = design_sample.x.reshape(-1, 1)
    Y = np.column_stack([design_sample.y, design_sample.z])
    est = BerksonSieveRegressor(orders="1,1,1,3,3", f_tol=1e-7, restarts=0)
    params = est.get_params()
    assert params["orders"] == "1,1,1,3,3" and params["grid_step"] == 0.05
    twin = clone(est)
    assert twin.get_params() == params
    est.fit(X, Y)
    pred = est.predict(np.array([-1.0, 0.0, 1.0]))
    assert pred.shape == (3,)
    np.testing.assert_allclose(pred, est.result_.g_hat(np.array([-1.0, 0.0, 1.0])))
    assert est.predict_instrument([[0.0]]).shape == (1,)
    assert est.score(X, Y) == pytest.approx(est.loglik_, rel=1e-12)
    with pytest.raises(ValueError):
        est.predict(np.ones((3, 2)))


def test_regressor_input_validation():
    est = BerksonSieveRegressor()
    with pytest.raises(ValueError):
        est.fit(np.zeros((5, 1)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        est.fit(np.array([0.0, np.nan, 1.0]), np.zeros((3, 2)))
    with pytest.raises(Exception):
        BerksonSieveRegressor().predict([0.0])


def test_naive_regressor(design_sample):
    X = design_sample.x
    Y = np.column_stack([design_sample.y, design_sample.z])
    est = NaiveSeriesRegressor(n_terms_g=3, n_terms_h=2).fit(X, Y)
    nf = naive_fit(design_sample, 3, 2)
    np.testing.assert_allclose(est.coef_g_, nf.beta_g)
    assert 0 < est.score(X, Y) <= 1
    assert clone(est).get_params() == {"n_terms_g": 3, "n_terms_h": 2}


def test_stage_path():
    assert stage_orders(SieveOrders(3, 3, 3, 6, 6)) == [
        SieveOrders(1, 1, 1, 3, 3), SieveOrders(1, 1, 1, 6, 6), SieveOrders(3, 3, 3, 6, 6)]
    assert stage_orders(SieveOrders(1, 1, 1, 2, 2)) == [SieveOrders(1, 1, 1, 2, 2)]
    assert stage_orders(SieveOrders(2, 1, 1, 3, 2)) == [SieveOrders(1, 1, 1, 3, 2), SieveOrders(2, 1, 1, 3, 2)]


def test_zero_padding_keeps_likelihood(design_sample):
    p = fit(design_sample, "1,1,1,3,3", opts=FAST).params
    big = SieveOrders(3, 2, 4, 6, 5)
    q = _padded(p, big)
    q.check_invariants(tol=1e-10)
    assert log_likelihood(q, design_sample, QuadratureGrid()) == pytest.approx(
        log_likelihood(p, design_sample, QuadratureGrid()), abs=1e-13)
    assert pack(q, big).size == big.n_packed


def test_staged_fit_is_monotone_along_path(design_sample):
    o = SieveOrders(2, 1, 1, 4, 3)
    first = fit(design_sample, "1,1,1,3,3", opts=FAST)
    staged = fit(design_sample, o, opts=FAST)
    assert staged.loglik >= first.loglik - 1e-12
    assert staged.init_loglik == pytest.approx(first.init_loglik, abs=1e-12)
