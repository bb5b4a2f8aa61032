"""Exact reference solver for small barycenter LPs.

Assembles the fixed-support barycenter problem in equality standard form
(variables w and the row-major vectorized plans; constraints: plan row sums
equal w, plan column sums equal the marginals, w sums to one) and hands it to
scipy's HiGHS backend. Basic solutions come back with machine-level primal
residuals and exact complementarity, which is what the residual tests of the
iterative solvers rely on. Guarded to small instances by variable count.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import BarycenterInstance, PrimalSolution, primal_objective
from .simplex import project_simplex

__all__ = ["SIZE_GUARD", "LpStandardForm", "build_standard_form", "solve_lp_exact", "verify_kkt"]

SIZE_GUARD = 2 * 10**5  # max m * sum(m_t) plan variables


@dataclass
class LpStandardForm:
    """Equality-form LP data: min c@x s.t. A_eq x = b_eq, x >= 0.

    Variable order: w (m entries), then each plan row-major. Row order: the N
    row-sum blocks (m rows each), the N column-sum blocks (m_t rows each),
    then the single normalization row.
    """

    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    m: int
    sizes: list


def build_standard_form(instance: BarycenterInstance) -> LpStandardForm:
    m, sizes = instance.m, instance.sizes
    n_plan = m * sum(sizes)
    n_var = m + n_plan
    c = np.concatenate([np.zeros(m)] + [D.ravel() for D in instance.cost_matrices])

    blocks = []
    rhs = []
    offset = m
    for mt in sizes:
        row = sp.hstack(
            [
                -sp.identity(m, format="csr"),
                sp.csr_matrix((m, offset - m)),
                sp.kron(sp.identity(m, format="csr"), np.ones((1, mt))),
                sp.csr_matrix((m, n_var - offset - m * mt)),
            ],
            format="csr",
        )
        blocks.append(row)
        rhs.append(np.zeros(m))
        offset += m * mt
    offset = m
    for mt, a in zip(sizes, instance.marginals):
        row = sp.hstack(
            [
                sp.csr_matrix((mt, offset)),
                sp.kron(np.ones((1, m)), sp.identity(mt, format="csr")),
                sp.csr_matrix((mt, n_var - offset - m * mt)),
            ],
            format="csr",
        )
        blocks.append(row)
        rhs.append(a)
        offset += m * mt
    last = sp.csr_matrix((np.ones(m), (np.zeros(m, dtype=int), np.arange(m))), shape=(1, n_var))
    blocks.append(last)
    rhs.append(np.array([1.0]))

    A_eq = sp.vstack(blocks, format="csr")
    b_eq = np.concatenate(rhs)
    expected_rows = len(sizes) * m + sum(sizes) + 1
    assert A_eq.shape == (expected_rows, n_var)
    return LpStandardForm(c=c, A_eq=A_eq, b_eq=b_eq, m=m, sizes=sizes)


def solve_lp_exact(instance: BarycenterInstance):
    """Solve the barycenter LP to optimality.

    Returns (PrimalSolution, (y, z) dual lists, objective). The duals are
    oriented so that D_t + y_t e^T + e z_t^T >= 0 with equality on the support
    of the optimal plans. Raises ValueError past the size guard; a valid
    instance is always feasible and bounded, so solver failure is an internal
    error.
    """
    m, sizes = instance.m, instance.sizes
    if m * sum(sizes) > SIZE_GUARD:
        raise ValueError(
            f"instance has {m * sum(sizes)} plan variables, oracle guard is {SIZE_GUARD}"
        )
    form = build_standard_form(instance)
    res = linprog(
        form.c,
        A_eq=form.A_eq,
        b_eq=form.b_eq,
        bounds=(0, None),
        method="highs",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if res.status != 0:
        raise RuntimeError(f"LP oracle failed unexpectedly: {res.message}")
    x = res.x
    w = x[:m]
    plans = []
    offset = m
    for mt in sizes:
        plans.append(x[offset : offset + m * mt].reshape(m, mt))
        offset += m * mt
    marg = np.asarray(res.eqlin.marginals, dtype=float)
    n = len(sizes)
    y = [-marg[t * m : (t + 1) * m] for t in range(n)]
    z = []
    offset = n * m
    for mt in sizes:
        z.append(-marg[offset : offset + mt])
        offset += mt
    solution = PrimalSolution(w=w, plans=plans)
    return solution, (y, z), primal_objective(instance, solution)


def verify_kkt(instance: BarycenterInstance, primal: PrimalSolution, duals) -> float:
    """Maximum relative violation of the four optimality blocks.

    Blocks: the simplex normal-cone condition on (w, sum_t y_t), plan
    complementarity against the reduced costs D_t + y_t e^T + e z_t^T, row
    sums vs w, and column sums vs the marginals.
    """
    y, z = duals
    w, plans = primal.w, primal.plans
    if len(y) != instance.n_distributions or len(z) != instance.n_distributions:
        raise ValueError("one y and one z vector per distribution required")
    sum_y = np.sum(y, axis=0)
    norm_w = float(np.linalg.norm(w))
    norm_plans = float(np.sqrt(sum(np.vdot(P, P) for P in plans)))
    v1 = float(np.linalg.norm(w - project_simplex(w + sum_y))) / (
        1.0 + norm_w + float(np.linalg.norm(sum_y))
    )
    reduced = [
        D + np.add.outer(yt, zt)
        for D, yt, zt in zip(instance.cost_matrices, y, z)
    ]
    norm_red = float(np.sqrt(sum(np.vdot(G, G) for G in reduced)))
    v2 = float(
        np.sqrt(
            sum(
                np.vdot(P - np.maximum(P - G, 0.0), P - np.maximum(P - G, 0.0))
                for P, G in zip(plans, reduced)
            )
        )
    ) / (1.0 + norm_plans + norm_red)
    v3 = float(
        np.sqrt(sum(np.vdot(P.sum(axis=1) - w, P.sum(axis=1) - w) for P in plans))
    ) / (1.0 + norm_w + norm_plans)
    v4 = float(
        np.sqrt(
            sum(
                np.vdot(P.sum(axis=0) - a, P.sum(axis=0) - a)
                for P, a in zip(plans, instance.marginals)
            )
        )
    ) / (1.0 + float(np.sqrt(sum(np.vdot(a, a) for a in instance.marginals))) + norm_plans)
    return max(v1, v2, v3, v4)
