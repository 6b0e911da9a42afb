"""Bootstrap cross-validation over candidate sieve orders.

Each partition holds out a random fraction ``p`` of the sample (drawn without
replacement); every candidate is fitted on the remaining ``1 - p`` and scored
by the mean held-out log conditional density.  All candidates share the same
partitions.  The held-out log-likelihood differs from the Kullback-Leibler
criterion by a term that does not depend on the candidate, so both select the
same orders.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .estimator import SieveOrders, SieveSettings, fit
from .exceptions import NumericalError
from .likelihood import Dataset, QuadratureGrid, heldout_log_densities
from .simplex import SimplexOptions


@dataclass(frozen=True)
class SelectionPlan:
    candidates: tuple[SieveOrders, ...]
    holdout_fraction: float = 1.0 / 8.0
    partitions: int = 100
    seed: int = 0

    def __post_init__(self):
        cands = tuple(SieveOrders.parse(c) for c in self.candidates)
        object.__setattr__(self, "candidates", cands)
        if not cands:
            raise ValueError("candidate list is empty")
        if len(set(cands)) != len(cands):
            raise ValueError("candidate list has duplicates")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError(f"holdout fraction must lie in (0, 1), got {self.holdout_fraction}")
        if int(self.partitions) != self.partitions or self.partitions < 1:
            raise ValueError(f"number of partitions must be >= 1, got {self.partitions}")

    @classmethod
    def grid(cls, density_orders=(1, 2, 3, 4), series_orders=(4, 5, 6, 7), **kw) -> "SelectionPlan":
        """Full Cartesian candidate set; the defaults give 4**5 = 1024 tuples."""
        cands = [
            SieveOrders(a, b, c, d, e)
            for a in density_orders for b in density_orders for c in density_orders
            for d in series_orders for e in series_orders
        ]
        return cls(tuple(cands), **kw)


@dataclass(eq=False)
class SelectionTable:
    candidates: list
    scores: np.ndarray  # (candidate, partition) mean held-out log density
    failures: np.ndarray = field(default=None)

    @property
    def mean(self) -> np.ndarray:
        return self.scores.mean(axis=1)

    @property
    def std_error(self) -> np.ndarray:
        B = self.scores.shape[1]
        if B < 2:
            return np.zeros(len(self.candidates))
        return self.scores.std(axis=1, ddof=1) / math.sqrt(B)

    @property
    def ranks(self) -> np.ndarray:
        order = sorted(range(len(self.candidates)), key=lambda i: (-self.mean[i], self.candidates[i].as_tuple()))
        ranks = np.empty(len(order), dtype=int)
        ranks[order] = np.arange(1, len(order) + 1)
        return ranks

    @property
    def best(self) -> SieveOrders:
        return self.candidates[int(np.argmin(self.ranks))]

    def rows(self):
        for cand, m, se, rk in zip(self.candidates, self.mean, self.std_error, self.ranks):
            yield (*cand.as_tuple(), float(m), float(se), int(rk))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k_dx", "k_dy", "k_dz", "k_g", "k_h", "mean_heldout_loglik", "std_error", "rank"])
            for row in self.rows():
                w.writerow([*row[:5], repr(row[5]), repr(row[6]), row[7]])


def partitions(n: int, plan: SelectionPlan) -> list[np.ndarray]:
    """Held-out index sets, one per partition, reproducible from ``plan.seed``."""
    n_out = int(round(n * plan.holdout_fraction))
    children = np.random.SeedSequence(plan.seed).spawn(plan.partitions)
    out = []
    for ss in children:
        gen = np.random.Generator(np.random.Philox(ss))
        out.append(np.sort(gen.choice(n, size=n_out, replace=False)))
    return out


def _score(data: Dataset, held: np.ndarray, orders, grid, opts, settings) -> tuple[float, bool]:
    mask = np.zeros(data.n, dtype=bool)
    mask[held] = True
    try:
        res = fit(data.take(~mask), orders, grid, opts, settings)
    except NumericalError:
        return math.log(1e-300), True
    return float(np.mean(heldout_log_densities(res.params, data.take(mask), grid))), False


def select(
    data: Dataset,
    plan: SelectionPlan,
    grid: QuadratureGrid | None = None,
    opts: SimplexOptions | None = None,
    settings: SieveSettings | None = None,
    threads: int = 1,
) -> tuple[SieveOrders, SelectionTable]:
    """Pick the candidate with the largest mean held-out log-likelihood.

    Ties go to the lexicographically smallest order tuple.  A fit that fails
    outright scores every held-out observation at the density floor.
    """
    grid = grid or QuadratureGrid()
    opts = opts or SimplexOptions()
    settings = settings or SieveSettings()
    n_out = int(round(data.n * plan.holdout_fraction))
    largest = max(c.n_packed for c in plan.candidates)
    if n_out < 2:
        raise ValueError(f"held-out fraction leaves only {n_out} observations; need at least 2")
    if data.n - n_out <= largest:
        raise ValueError(f"{data.n - n_out} training observations cannot fit {largest} parameters")

    parts = partitions(data.n, plan)
    jobs = [(ci, b) for ci in range(len(plan.candidates)) for b in range(plan.partitions)]
    tasks = [delayed(_score)(data, parts[b], plan.candidates[ci], grid, opts, settings) for ci, b in jobs]
    if threads == 1:
        results = [fn(*a, **kw) for fn, a, kw in tasks]
    else:
        results = Parallel(n_jobs=threads)(tasks)

    scores = np.empty((len(plan.candidates), plan.partitions))
    failures = np.zeros_like(scores, dtype=bool)
    for (ci, b), (val, failed) in zip(jobs, results):
        scores[ci, b] = val
        failures[ci, b] = failed
    table = SelectionTable(list(plan.candidates), scores, failures)
    return table.best, table


def candidates_varying(base: SieveOrders, field_name: str, values: Sequence[int]) -> tuple[SieveOrders, ...]:
    """Candidates that differ from ``base`` only in one order."""
    return tuple(replace(base, **{field_name: int(v)}) for v in values)
