import itertools

import numpy as np
import pytest

from berkson_sieve.exceptions import NumericalError
from berkson_sieve.spectral import (
    DiscreteModel,
    build_all,
    build_observed,
    centering_violation,
    gaussian_model,
    recover_latents,
    resolve_ordering,
    round_trip,
)


@pytest.fixture(scope="module")
def model15():
    return gaussian_model()


def _identity_dx(m):
    n = m.xstar_grid.size
    return DiscreteModel(m.xstar_grid, m.xstar_grid, m.z_grid, m.y_grid, m.f_z_xstar, np.eye(n) / m.dxstar, m.f_y_xstar)


def test_model_invariants(model15):
    for K, step in ((model15.f_z_xstar, model15.dz), (model15.f_xstar_x, model15.dxstar)):
        assert np.all(K >= 0)
        np.testing.assert_allclose(K.sum(axis=0) * step, 1.0, atol=1e-10)
    # columns of f(x*|x) are centred at x
    means = model15.xstar_grid @ model15.f_xstar_x * model15.dxstar
    np.testing.assert_allclose(means, model15.x_grid, atol=1e-12)


def test_model_rejects_bad_kernel(model15):
    with pytest.raises(ValueError):
        DiscreteModel(model15.x_grid, model15.xstar_grid, model15.z_grid, model15.y_grid,
                      model15.f_z_xstar * 1.1, model15.f_xstar_x, model15.f_y_xstar)


def test_identity_berkson_kernel_gives_plain_products(model15):
    m = _identity_dx(model15)
    y = m.y_grid[3]
    A, B = build_observed(m, y)
    F_zs = m.f_z_xstar * m.dxstar
    np.testing.assert_allclose(B, F_zs, atol=1e-15)
    np.testing.assert_allclose(A, F_zs @ np.diag(m.f_y_xstar[3]), atol=1e-15)


def test_flat_outcome_gives_B(model15):
    m = DiscreteModel(model15.x_grid, model15.xstar_grid, model15.z_grid, model15.y_grid,
                      model15.f_z_xstar, model15.f_xstar_x, np.ones_like(model15.f_y_xstar))
    A, B = build_observed(m, m.y_grid[0])
    np.testing.assert_allclose(A, B, atol=1e-15)


def test_build_observed_matches_double_sum():
    rng = np.random.default_rng(0)
    grid = np.array([0.0, 0.5, 1.0])
    step = 0.5
    Kz = rng.random((3, 3))
    Kz /= Kz.sum(axis=0) * step
    Kx = rng.random((3, 3))
    Kx /= Kx.sum(axis=0) * step
    T = rng.random((2, 3))
    m = DiscreteModel(grid, grid, grid, np.array([0.0, 1.0]), Kz, Kx, T)
    A, B = build_observed(m, 1.0)
    for i in range(3):
        for k in range(3):
            a = sum(Kz[i, j] * T[1, j] * Kx[j, k] * step * step for j in range(3))
            b = sum(Kz[i, j] * Kx[j, k] * step * step for j in range(3))
            assert A[i, k] == pytest.approx(a, abs=1e-12)
            assert B[i, k] == pytest.approx(b, abs=1e-12)


def test_unknown_y_node(model15):
    with pytest.raises(ValueError):
        build_observed(model15, 0.123)


def test_outcome_integrates_to_B(model15):
    A_list, B = build_all(model15)
    dy = model15.y_grid[1] - model15.y_grid[0]
    np.testing.assert_allclose(sum(A_list) * dy, B, atol=1e-14)


def test_round_trip_15_nodes(model15):
    rec, rep = round_trip(model15)
    assert rep["eigenvalue_rel_error"] < 1e-6
    assert rep["f_xstar_x_rel_error"] < 1e-6
    assert rep["f_z_xstar_rel_error"] < 1e-6
    assert rep["max_imag_part"] < 1e-8
    assert rep["min_singular_value_B"] > 0
    assert rep["condition_number_B"] < 1e10
    assert rec.permutation.tolist() == list(range(15))


def test_degenerate_berkson_noise_recovers_identity(model15):
    m = _identity_dx(model15)
    rec, _ = round_trip(m)
    np.testing.assert_allclose(rec.f_xstar_x * m.dxstar, np.eye(m.xstar_grid.size), atol=1e-8)


def test_symmetric_y_is_flagged_degenerate(model15):
    rec, rep = round_trip(model15)
    mid = int(np.flatnonzero(np.isclose(model15.y_grid, 0.0))[0])
    assert rec.degenerate_y[mid]
    assert rep["degenerate_y_count"] >= 1


def test_singular_B_is_an_error(model15):
    A_list, B = build_all(model15)
    B = B.copy()
    B[:, 1] = B[:, 0]
    with pytest.raises(NumericalError):
        recover_latents(A_list, B, model15.x_grid, model15.xstar_grid, model15.dz)


def test_all_y_degenerate_is_an_error(model15):
    A_list, B = build_all(model15)
    with pytest.raises(NumericalError):
        recover_latents([B, B], B, model15.x_grid, model15.xstar_grid, model15.dz)


def test_uncentred_kernel_is_reported(model15):
    m = model15
    shifted = DiscreteModel(m.x_grid + 0.05, m.xstar_grid, m.z_grid, m.y_grid, m.f_z_xstar, m.f_xstar_x, m.f_y_xstar)
    A_list, B = build_all(shifted)
    with pytest.raises(NumericalError, match="violation profile"):
        recover_latents(A_list, B, shifted.x_grid, shifted.xstar_grid, shifted.dz)


def test_permutation_attack_five_nodes():
    m = gaussian_model(n_nodes=5, n_y=5)
    P = m.f_xstar_x * m.dxstar  # rows in true order
    hits = 0
    for sigma in itertools.permutations(range(5)):
        sigma = np.array(sigma)
        scrambled = P[sigma]  # row r is node sigma[r]
        identity_labels = m.xstar_grid  # naive: assume rows are in grid order
        v = centering_violation(scrambled, m.x_grid, identity_labels)
        if not np.array_equal(sigma, np.arange(5)):
            assert np.abs(v).max() > 1e-6
        # exhaustive oracle independent of the module
        best = min(itertools.permutations(range(5)),
                   key=lambda p: np.abs(m.xstar_grid[list(p)] @ scrambled - m.x_grid).sum())
        perm, viol = resolve_ordering(scrambled, m.x_grid, m.xstar_grid)
        perm_fast, _ = resolve_ordering(scrambled, m.x_grid, m.xstar_grid, exhaustive=False)
        assert perm.tolist() == list(best) == sigma.tolist() == perm_fast.tolist()
        assert np.abs(viol).max() < 1e-12
        hits += 1
    assert hits == 120
