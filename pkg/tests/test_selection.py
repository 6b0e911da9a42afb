import numpy as np
import pytest

from berkson_sieve.estimator import SieveOrders
from berkson_sieve.selection import (
    SelectionPlan,
    SelectionTable,
    candidates_varying,
    partitions,
    select,
)
from berkson_sieve.simplex import SimplexOptions
from berkson_sieve.simulation import Scenario, generate

QUICK = SimplexOptions(f_tol=1e-5, restarts=0, max_iters=400)
TINY = SimplexOptions(f_tol=1e-4, restarts=0, max_iters=60)


@pytest.fixture(scope="module")
def small():
    return generate(Scenario(dx_dist="gaussian(0.3)", dy_dist="gaussian(0.2)", dz_dist="gaussian(0.2)",
                             g_true="poly(0, 0, 1)", h_true="identity", n=160, seed=1))


@pytest.mark.parametrize(
    "kw",
    [dict(partitions=0), dict(holdout_fraction=0.0), dict(holdout_fraction=1.0), dict(candidates=())],
)
def test_plan_validation(kw):
    args = dict(candidates=("1,1,1,2,2",), holdout_fraction=0.125, partitions=3)
    args.update(kw)
    with pytest.raises(ValueError):
        SelectionPlan(**args)


def test_plan_rejects_duplicates():
    with pytest.raises(ValueError):
        SelectionPlan(("1,1,1,2,2", (1, 1, 1, 2, 2)))


def test_default_grid_plan():
    plan = SelectionPlan.grid()
    assert len(plan.candidates) == 1024
    assert plan.holdout_fraction == 1 / 8 and plan.partitions == 100


def test_partitions_reproducible_and_disjoint_within():
    plan = SelectionPlan(("1,1,1,2,2",), partitions=5, seed=9)
    a, b = partitions(80, plan), partitions(80, plan)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(x.size == 10 and np.unique(x).size == 10 for x in a)
    other = partitions(80, SelectionPlan(("1,1,1,2,2",), partitions=5, seed=10))
    assert not all(np.array_equal(x, y) for x, y in zip(a, other))


def test_single_candidate(small):
    plan = SelectionPlan(("1,1,1,2,2",), partitions=2)
    best, table = select(small, plan, opts=QUICK)
    assert best == SieveOrders(1, 1, 1, 2, 2)
    assert len(list(table.rows())) == 1
    assert table.ranks.tolist() == [1]


def test_select_reproducible_across_threads(small, tmp_path):
    plan = SelectionPlan(candidates_varying(SieveOrders(1, 1, 1, 2, 2), "k_g", [1, 3]), partitions=3, seed=4)
    _, t1 = select(small, plan, opts=QUICK, threads=1)
    _, t2 = select(small, plan, opts=QUICK, threads=2)
    np.testing.assert_array_equal(t1.scores, t2.scores)
    t1.to_csv(tmp_path / "a.csv")
    t2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "k_dx,k_dy,k_dz,k_g,k_h,mean_heldout_loglik,std_error,rank"


def test_preconditions(small):
    with pytest.raises(ValueError):
        select(small.take(np.arange(10)), SelectionPlan(("1,1,1,2,2",), partitions=1), opts=QUICK)
    with pytest.raises(ValueError):
        select(small.take(np.arange(12)), SelectionPlan(("4,4,4,7,7",), partitions=1, holdout_fraction=0.5))


def test_tie_break_and_ranks():
    cands = [SieveOrders(2, 1, 1, 2, 2), SieveOrders(1, 1, 1, 3, 2), SieveOrders(1, 1, 1, 2, 2)]
    table = SelectionTable(cands, np.array([[1.0, 2.0], [1.5, 1.5], [0.0, 0.0]]))
    assert table.best == SieveOrders(1, 1, 1, 3, 2)  # equal means, smallest tuple wins
    assert table.ranks.tolist() == [2, 1, 3]
    np.testing.assert_allclose(table.std_error, [0.5, 0.0, 0.0])


def test_std_error_shrinks_with_more_partitions():
    rng = np.random.default_rng(0)
    cands = [SieveOrders(1, 1, 1, 2, 2)]
    se = [SelectionTable(cands, rng.normal(size=(1, b))).std_error[0] for b in (10, 40, 160)]
    assert all(s >= 0 for s in se)
    assert se[0] > se[1] > se[2]


def test_std_error_trend_on_fits(small):
    se = []
    for b in (10, 40, 160):
        _, t = select(small, SelectionPlan(("1,1,1,3,2",), partitions=b, seed=2), opts=TINY)
        se.append(t.std_error[0])
    assert all(s >= 0 for s in se)
    # a fourfold increase in B halves the standard error in expectation
    assert se[2] < se[1] < se[0]
