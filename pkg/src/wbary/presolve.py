"""Sparse-marginal reduction: drop zero-weight columns, solve small, re-expand.

Any feasible plan must put zero mass on columns whose marginal entry is zero,
so those columns (and the matching cost columns) can be removed before
solving and re-inserted as zeros afterwards without changing the optimal
value. Entries at or below ``ZERO_THRESHOLD`` count as structural zeros to
absorb file round-trip noise.
"""

from dataclasses import dataclass

import numpy as np

from .model import BarycenterInstance, PrimalSolution

__all__ = ["ZERO_THRESHOLD", "ReductionMap", "reduce_instance", "expand_solution"]

ZERO_THRESHOLD = 1e-15


@dataclass(frozen=True)
class ReductionMap:
    """Per-distribution index sets of the retained (nonzero-weight) columns."""

    support_sets: list
    original_sizes: list

    def __post_init__(self):
        for t, (idx, mt) in enumerate(zip(self.support_sets, self.original_sizes)):
            if idx.size == 0:
                raise ValueError(f"marginal {t} is entirely zero")
            if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= mt:
                raise ValueError(f"support set {t} must be strictly increasing in range")

    @property
    def reduced_sizes(self):
        return [idx.size for idx in self.support_sets]

    def is_identity(self) -> bool:
        return all(idx.size == mt for idx, mt in zip(self.support_sets, self.original_sizes))


def reduce_instance(instance: BarycenterInstance):
    """Drop zero-weight marginal entries and the matching cost columns.

    Returns (reduced instance, ReductionMap). The reduced marginals are
    strictly positive and renormalized exactly.
    """
    support_sets = []
    for t, a in enumerate(instance.marginals):
        idx = np.nonzero(a > ZERO_THRESHOLD)[0]
        if idx.size == 0:
            raise ValueError(f"marginal {t} is entirely zero")
        support_sets.append(idx)
    rmap = ReductionMap(support_sets=support_sets, original_sizes=list(instance.sizes))
    reduced = BarycenterInstance(
        cost_matrices=[D[:, idx] for D, idx in zip(instance.cost_matrices, support_sets)],
        marginals=[a[idx] / a[idx].sum() for a, idx in zip(instance.marginals, support_sets)],
        gammas=instance.gammas,
        barycenter_supports=instance.barycenter_supports,
        p=instance.p,
    )
    return reduced, rmap


def expand_solution(reduced_solution: PrimalSolution, rmap: ReductionMap, original_sizes=None) -> PrimalSolution:
    """Re-insert zero columns; w passes through unchanged.

    The expanded objective equals the reduced one exactly (zero columns
    contribute nothing).
    """
    sizes = list(original_sizes) if original_sizes is not None else rmap.original_sizes
    if sizes != rmap.original_sizes:
        raise ValueError("original_sizes disagree with the reduction map")
    if len(reduced_solution.plans) != len(sizes):
        raise ValueError("solution has wrong number of plans for this map")
    m = reduced_solution.w.size
    plans = []
    for P, idx, mt in zip(reduced_solution.plans, rmap.support_sets, sizes):
        if P.shape != (m, idx.size):
            raise ValueError(f"reduced plan shape {P.shape} != ({m}, {idx.size})")
        full = np.zeros((m, mt))
        full[:, idx] = P
        plans.append(full)
    return PrimalSolution(w=reduced_solution.w, plans=plans)
