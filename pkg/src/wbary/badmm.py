"""Bregman ADMM baseline with KL proximal terms.

Splits the plans into two copies: Pi_t carries the column-sum (marginal)
constraints and Gamma_t the row-sum (barycenter) constraints, with
multipliers Lam_t on Pi_t = Gamma_t. Both half-updates are multiplicative
scalings and therefore satisfy their marginal constraints exactly by
construction; the residual Pi - Gamma is what converges. The barycenter
weights are combined across distributions by one of three rules:

* 'geometric' — normalized geometric mean of the per-distribution row masses;
* 'R1'        — normalized arithmetic mean;
* 'R2'        — normalized square of the summed square roots (default).

No convergence guarantee is known for this scheme; it is provided as a
baseline and reports the same feasibility residuals as the other solvers.
"""

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    BarycenterInstance,
    PrimalSolution,
    SolveReport,
    primal_residual_report,
    stacked_norm,
)

__all__ = [
    "BadmmState",
    "default_rho",
    "init_badmm_state",
    "badmm_pi_update",
    "badmm_gamma_w_update",
    "badmm_multiplier_update",
    "solve_badmm",
]

W_RULES = ("R1", "R2", "geometric")


@dataclass
class BadmmState:
    """Plans, their row-constrained copies, multipliers, weights, penalty."""

    Pi: list
    Gamma: list
    Lam: list
    w: np.ndarray
    rho: float


def default_rho(instance: BarycenterInstance) -> float:
    """Twice the mean cost entry; an artifact default, expose via options."""
    total = sum(float(D.sum()) for D in instance.cost_matrices)
    count = sum(D.size for D in instance.cost_matrices)
    mean = total / count
    return 2.0 * mean if mean > 0 else 1.0


def init_badmm_state(instance: BarycenterInstance, rho: float) -> BadmmState:
    """Uniform-weight product-plan start; requires strictly positive marginals."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    for t, a in enumerate(instance.marginals):
        if np.any(a <= 0.0):
            raise ValueError(
                f"marginal {t} has zero entries; reduce the instance with "
                "presolve before running this solver"
            )
    m = instance.m
    w = np.full(m, 1.0 / m)
    Gamma = [np.outer(w, a) for a in instance.marginals]
    return BadmmState(
        Pi=[G.copy() for G in Gamma],
        Gamma=Gamma,
        Lam=[np.zeros_like(G) for G in Gamma],
        w=w,
        rho=rho,
    )


def badmm_pi_update(state: BadmmState, instance: BarycenterInstance):
    """Closed-form Pi update: column rescaling of Gamma ⊙ exp(-(D+Lam)/rho).

    Column sums equal the marginals exactly by construction. Exponentials are
    max-shifted per column; the shift cancels between numerator and column
    scaling, so the result is unchanged.
    """
    rho = state.rho
    for t, (D, a) in enumerate(zip(instance.cost_matrices, instance.marginals)):
        E = -(D + state.Lam[t]) / rho
        E -= E.max(axis=0, keepdims=True)
        scaled = state.Gamma[t] * np.exp(E)
        col = scaled.sum(axis=0)
        if np.any(col <= 0.0) or not np.all(np.isfinite(col)):
            raise RuntimeError(
                f"plan update has a degenerate column scaling on distribution {t}"
            )
        state.Pi[t] = scaled * (a / col)[None, :]
    return state.Pi


def badmm_gamma_w_update(state: BadmmState, instance: BarycenterInstance, w_rule: str = "R2"):
    """Closed-form (Gamma, w) update.

    Each distribution contributes row masses of Pi ⊙ exp(Lam/rho); the chosen
    rule combines them into w, and Gamma rescales rows so Gamma e = w exactly.
    Row-wise max shifts cancel inside Gamma; the unshifted row masses feed the
    w rule.
    """
    if w_rule not in W_RULES:
        raise ValueError(f"w_rule must be one of {W_RULES}")
    rho = state.rho
    n = len(state.Pi)
    masses = []
    scaled_rows = []
    for t in range(n):
        E = state.Lam[t] / rho
        shift = E.max(axis=1, keepdims=True)
        scaled = state.Pi[t] * np.exp(E - shift)
        rowsum = scaled.sum(axis=1)
        if np.any(rowsum <= 0.0) or not np.all(np.isfinite(rowsum)):
            raise RuntimeError(
                f"weight update has a degenerate row scaling on distribution {t}"
            )
        scaled_rows.append((scaled, rowsum))
        masses.append(np.exp(np.log(rowsum) + shift[:, 0]))
    if w_rule == "R1":
        w = sum(masses)
    elif w_rule == "R2":
        w = sum(np.sqrt(mass) for mass in masses) ** 2
    else:
        w = np.exp(sum(np.log(mass) for mass in masses) / n)
    w = w / w.sum()
    for t, (scaled, rowsum) in enumerate(scaled_rows):
        state.Gamma[t] = scaled * (w / rowsum)[:, None]
    state.w = w
    return state.Gamma, state.w


def badmm_multiplier_update(state: BadmmState):
    """Dual ascent on Pi = Gamma."""
    for t in range(len(state.Pi)):
        state.Lam[t] = state.Lam[t] + state.rho * (state.Pi[t] - state.Gamma[t])
    return state.Lam


def _rel(diff_norm, *norms):
    return diff_norm / (1.0 + sum(norms))


def solve_badmm(
    instance: BarycenterInstance,
    rho: Optional[float] = None,
    tol: float = 1e-5,
    max_iter: int = 3000,
    w_rule: str = "R2",
    check_every: int = 200,
    check_marginals: bool = False,
    initial: Optional[BadmmState] = None,
    trace: Optional[list] = None,
):
    """Run BADMM until all six termination metrics drop below tol.

    The metrics, checked every ``check_every`` iterations: the row/column
    marginal residuals of (w, Gamma) and (Pi), the successive changes of w,
    Pi, Gamma and Lam, and the split residual Pi - Gamma. ``trace`` receives
    one (iter, metric1..metric6) row per check. Returns
    (PrimalSolution, SolveReport) built from (w, Pi).
    """
    if w_rule not in W_RULES:
        raise ValueError(f"w_rule must be one of {W_RULES}")
    start = time.perf_counter()
    rho = default_rho(instance) if rho is None else float(rho)
    state = initial if initial is not None else init_badmm_state(instance, rho)

    converged = False
    iterations = 0
    max_col_dev = 0.0
    max_row_dev = 0.0
    for k in range(1, max_iter + 1):
        checking = k % check_every == 0 or k == max_iter
        if checking:
            prev = (
                state.w.copy(),
                [P.copy() for P in state.Pi],
                [G.copy() for G in state.Gamma],
                [L.copy() for L in state.Lam],
            )
        badmm_pi_update(state, instance)
        badmm_gamma_w_update(state, instance, w_rule)
        badmm_multiplier_update(state)
        iterations = k
        if checking and check_marginals:
            col = stacked_norm(
                [P.sum(axis=0) - a for P, a in zip(state.Pi, instance.marginals)]
            ) / (1.0 + stacked_norm(instance.marginals))
            row = stacked_norm([G.sum(axis=1) - state.w for G in state.Gamma]) / (
                1.0 + float(np.linalg.norm(state.w))
            )
            max_col_dev = max(max_col_dev, col)
            max_row_dev = max(max_row_dev, row)
        if checking:
            w_prev, Pi_prev, Gamma_prev, Lam_prev = prev
            norm_w = float(np.linalg.norm(state.w))
            norm_Pi = stacked_norm(state.Pi)
            norm_Gamma = stacked_norm(state.Gamma)
            m1 = max(
                _rel(
                    stacked_norm([G.sum(axis=1) - state.w for G in state.Gamma]),
                    norm_w,
                    norm_Gamma,
                ),
                _rel(
                    stacked_norm(
                        [P.sum(axis=0) - a for P, a in zip(state.Pi, instance.marginals)]
                    ),
                    stacked_norm(instance.marginals),
                    norm_Pi,
                ),
            )
            m2 = _rel(
                float(np.linalg.norm(state.w - w_prev)),
                norm_w,
                float(np.linalg.norm(w_prev)),
            )
            m3 = _rel(
                stacked_norm([P - G for P, G in zip(state.Pi, state.Gamma)]),
                norm_Pi,
                norm_Gamma,
            )
            m4 = _rel(
                stacked_norm([P - Q for P, Q in zip(state.Pi, Pi_prev)]),
                stacked_norm(Pi_prev),
                norm_Pi,
            )
            m5 = _rel(
                stacked_norm([G - H for G, H in zip(state.Gamma, Gamma_prev)]),
                stacked_norm(Gamma_prev),
                norm_Gamma,
            )
            m6 = _rel(
                stacked_norm([L - M for L, M in zip(state.Lam, Lam_prev)]),
                stacked_norm(Lam_prev),
                stacked_norm(state.Lam),
            )
            if trace is not None:
                trace.append((k, m1, m2, m3, m4, m5, m6))
            if max(m1, m2, m3, m4, m5, m6) < tol:
                converged = True
                break

    solution = PrimalSolution(w=state.w, plans=state.Pi)
    residuals = primal_residual_report(instance, solution)
    obj = residuals.obj_P
    diagnostics = {}
    if check_marginals:
        diagnostics["max_col_marginal_dev"] = max_col_dev
        diagnostics["max_row_marginal_dev"] = max_row_dev
    report = SolveReport(
        method="badmm",
        objective=obj,
        residuals=residuals,
        iterations=iterations,
        wall_time=time.perf_counter() - start,
        converged=converged,
        params={"rho": rho, "w_rule": w_rule, "tol": tol, "max_iter": max_iter},
        diagnostics=diagnostics,
    )
    return solution, report
