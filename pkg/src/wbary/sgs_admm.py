"""Symmetric Gauss-Seidel ADMM on the dual of the fixed-support barycenter LP.

The LP dual is reformulated with auxiliary variables (u, {V_t}) so that it has
three block groups coupled by linear constraints: sum_t y_t = u and
V_t = D_t + y_t e^T + e z_t^T. One iteration performs

* step 1   — exact minimization in (u, {V_t}): a simplex-prox for u and an
             entrywise clip for each V_t;
* step 2a  — exact minimization in {z_t} (closed form);
* step 2b  — exact joint minimization in {y_t} (closed form, the y blocks are
             coupled only through their sum);
* step 2c  — a second exact minimization in {z_t} (closed form);
* step 3   — gradient ascent on the multipliers (lam, {Lam_t}) with step
             tau * beta.

The extra 2a sweep makes the scheme equal to a convergent 2-block proximal
ADMM, which is what the sPADMM-equivalence test checks. The multipliers
converge to the primal solution: w = lam and plans = {Lam_t}.

Everything here operates on `model.BarycenterInstance` cost units; `solve`
optionally normalizes the costs by their joint Frobenius norm first and
reports final residuals and the objective back in original units.
"""

import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import (
    BarycenterInstance,
    PrimalSolution,
    ResidualReport,
    SolveReport,
    stacked_norm,
)
from .simplex import project_simplex, prox_support_function

__all__ = [
    "SgsOptions",
    "DualIterate",
    "IterationWorkspace",
    "scale_instance",
    "initial_iterate",
    "make_workspace",
    "step1",
    "step2a",
    "step2b",
    "step2c",
    "step3",
    "kkt_residuals",
    "update_penalty",
    "step2b_stationarity",
    "solve",
]

TAU_MAX = (1.0 + math.sqrt(5.0)) / 2.0
BETA_WARN_RANGE = (1e-8, 1e8)


@dataclass
class SgsOptions:
    """Tuning knobs for `solve`.

    beta0 is the initial penalty; tau the multiplier step size in
    (0, (1+sqrt(5))/2); residuals, termination and the penalty update are
    evaluated every ``check_every`` iterations. ``sequential_reduction``
    fixes the order of cross-distribution sums for bit reproducibility.
    ``threads`` is a recorded budget (BLAS-level parallelism); per-t updates
    run in a fixed order either way.
    """

    beta0: float = 1.0
    tau: float = 1.618
    tol: float = 1e-5
    max_iter: int = 3000
    check_every: int = 50
    penalty_update: bool = True
    scaling: bool = True
    threads: Optional[int] = None
    sequential_reduction: bool = False

    def validate(self):
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if not (0.0 < self.tau < TAU_MAX):
            raise ValueError(f"tau must lie in (0, {TAU_MAX})")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.check_every < 1:
            raise ValueError("max_iter and check_every must be >= 1")


@dataclass
class DualIterate:
    """Full solver state: dual variables (u, V, y, z) and multipliers (lam, Lam)."""

    u: np.ndarray
    V: list
    y: list
    z: list
    lam: np.ndarray
    Lam: list

    def copy(self) -> "DualIterate":
        return DualIterate(
            u=self.u.copy(),
            V=[A.copy() for A in self.V],
            y=[v.copy() for v in self.y],
            z=[v.copy() for v in self.z],
            lam=self.lam.copy(),
            Lam=[A.copy() for A in self.Lam],
        )

    def scaled(self, factor: float) -> "DualIterate":
        """Rescale the dual variables; multipliers are primal and unchanged."""
        return DualIterate(
            u=self.u * factor,
            V=[A * factor for A in self.V],
            y=[v * factor for v in self.y],
            z=[v * factor for v in self.z],
            lam=self.lam.copy(),
            Lam=[A.copy() for A in self.Lam],
        )


@dataclass
class IterationWorkspace:
    """Per-iteration caches shared between the steps.

    D_shift[t] = D_t + y_t e^T + e z_t^T is maintained across iterations
    (refreshed in step 3, consumed by the next step 1). B[t] is the negative
    part of D_shift[t] - Lam_t / beta, computed in step 1 alongside its
    positive part V_t, so V_t + B_t reproduces the argument exactly.
    """

    D_shift: list
    B: list = field(default_factory=list)
    z_half: list = field(default_factory=list)
    row_sums: list = field(default_factory=list)
    dy: list = field(default_factory=list)
    sum_y: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    b_shift: Optional[np.ndarray] = None


def scale_instance(instance: BarycenterInstance):
    """Divide all costs by their joint Frobenius norm.

    Returns (scaled instance, kappa). All-zero costs leave the instance
    unchanged with kappa = 1.
    """
    kappa = stacked_norm(instance.cost_matrices)
    if kappa == 0.0:
        return instance, 1.0
    scaled = BarycenterInstance(
        cost_matrices=[D / kappa for D in instance.cost_matrices],
        marginals=list(instance.marginals),
        gammas=instance.gammas,
        barycenter_supports=instance.barycenter_supports,
        p=instance.p,
    )
    return scaled, kappa


def initial_iterate(instance: BarycenterInstance) -> DualIterate:
    """All-zero starting point (the origin)."""
    m, sizes = instance.m, instance.sizes
    return DualIterate(
        u=np.zeros(m),
        V=[np.zeros((m, mt)) for mt in sizes],
        y=[np.zeros(m) for _ in sizes],
        z=[np.zeros(mt) for mt in sizes],
        lam=np.zeros(m),
        Lam=[np.zeros((m, mt)) for mt in sizes],
    )


def make_workspace(instance: BarycenterInstance, iterate: DualIterate) -> IterationWorkspace:
    D_shift = [
        D + np.add.outer(yt, zt)
        for D, yt, zt in zip(instance.cost_matrices, iterate.y, iterate.z)
    ]
    return IterationWorkspace(D_shift=D_shift)


def _reduce(vectors, sequential):
    if sequential:
        acc = vectors[0].copy()
        for v in vectors[1:]:
            acc += v
        return acc
    return np.sum(vectors, axis=0)


def step1(iterate: DualIterate, ws: IterationWorkspace, beta: float, sequential=False):
    """Exact (u, {V_t}) update; caches B_t = min(D_shift_t - Lam_t/beta, 0)."""
    ws.sum_y = _reduce(iterate.y, sequential)
    iterate.u = prox_support_function(iterate.lam / beta + ws.sum_y, beta)
    ws.B = []
    for t, (Ds, Lt) in enumerate(zip(ws.D_shift, iterate.Lam)):
        M = Ds - Lt / beta
        Vt = np.maximum(M, 0.0)
        iterate.V[t] = Vt
        ws.B.append(M - Vt)
    return iterate.u, iterate.V


def step2a(iterate: DualIterate, ws: IterationWorkspace, instance: BarycenterInstance, beta: float):
    """First exact {z_t} sweep (intermediate point consumed by step 2b/2c)."""
    m = instance.m
    ws.z_half = [
        zt - (at / beta + Bt.sum(axis=0)) / m
        for zt, at, Bt in zip(iterate.z, instance.marginals, ws.B)
    ]
    return ws.z_half


def step2b(iterate: DualIterate, ws: IterationWorkspace, instance: BarycenterInstance, beta: float, sequential=False):
    """Exact joint {y_t} update.

    The coupled optimality system is solved in closed form: eliminating the
    shared sum of updates gives b_shift, then each y_t moves by
    -(b_shift + h + rowsum_t)/m_t where rowsum_t folds the step-2a shift into
    the row sums of B_t without forming the shifted matrix.
    """
    m = instance.m
    sizes = instance.sizes
    ws.h = iterate.lam / beta - iterate.u + ws.sum_y
    ws.row_sums = []
    for Bt, at in zip(ws.B, instance.marginals):
        r = Bt.sum(axis=1)
        ws.row_sums.append(r - (r.sum() + at.sum() / beta) / m)
    inv_sizes = sum(1.0 / mt for mt in sizes)
    weighted = _reduce([r / mt for r, mt in zip(ws.row_sums, sizes)], sequential)
    ws.b_shift = -(inv_sizes * ws.h + weighted) / (1.0 + inv_sizes)
    ws.dy = []
    for t, mt in enumerate(sizes):
        step = -(ws.b_shift + ws.h + ws.row_sums[t]) / mt
        ws.dy.append(step)
        iterate.y[t] = iterate.y[t] + step
    return iterate.y


def step2c(iterate: DualIterate, ws: IterationWorkspace, instance: BarycenterInstance, beta: float):
    """Second exact {z_t} sweep, a rank-one correction of the step-2a point."""
    m = instance.m
    for t, (zh, dyt) in enumerate(zip(ws.z_half, ws.dy)):
        iterate.z[t] = zh - (dyt.sum() / m)
    return iterate.z


def step3(iterate: DualIterate, ws: IterationWorkspace, instance: BarycenterInstance, beta: float, tau: float, sequential=False):
    """Multiplier ascent; refreshes the D_shift cache for the next iteration."""
    sum_y_new = _reduce(iterate.y, sequential)
    iterate.lam = iterate.lam + (tau * beta) * (sum_y_new - iterate.u)
    for t, (D, yt, zt) in enumerate(zip(instance.cost_matrices, iterate.y, iterate.z)):
        Ds = D + np.add.outer(yt, zt)
        ws.D_shift[t] = Ds
        iterate.Lam[t] = iterate.Lam[t] + (tau * beta) * (iterate.V[t] - Ds)
    ws.sum_y = sum_y_new
    return iterate.lam, iterate.Lam


def step2b_stationarity(ws: IterationWorkspace, instance: BarycenterInstance) -> float:
    """Relative residual of the step-2b optimality system for the last sweep.

    Zero in exact arithmetic; measured as a guard against formula regressions.
    """
    sizes = instance.sizes
    total_dy = np.sum(ws.dy, axis=0)
    worst = 0.0
    for t, mt in enumerate(sizes):
        res = total_dy + mt * ws.dy[t] + ws.h + ws.row_sums[t]
        scale = 1.0 + float(np.linalg.norm(ws.h)) + float(np.linalg.norm(ws.row_sums[t]))
        worst = max(worst, float(np.linalg.norm(res)) / scale)
    return worst


def kkt_residuals(instance: BarycenterInstance, iterate: DualIterate) -> ResidualReport:
    """All eight relative optimality residuals plus objectives and duality gap."""
    m = instance.m
    u, V, y, z, lam, Lam = (
        iterate.u,
        iterate.V,
        iterate.y,
        iterate.z,
        iterate.lam,
        iterate.Lam,
    )
    norm_lam = float(np.linalg.norm(lam))
    norm_u = float(np.linalg.norm(u))
    norm_V = stacked_norm(V)
    norm_Lam = stacked_norm(Lam)
    norm_a = stacked_norm(instance.marginals)
    norm_D = stacked_norm(instance.cost_matrices)
    sum_y = np.sum(y, axis=0)

    eta1 = float(np.linalg.norm(lam - project_simplex(lam + u))) / (1.0 + norm_lam + norm_u)
    eta2 = stacked_norm(
        [Vt - np.maximum(Vt - Lt, 0.0) for Vt, Lt in zip(V, Lam)]
    ) / (1.0 + norm_V + norm_Lam)
    eta3 = stacked_norm([Lt.sum(axis=1) - lam for Lt in Lam]) / (1.0 + norm_lam + norm_Lam)
    eta4 = stacked_norm(
        [Lt.sum(axis=0) - at for Lt, at in zip(Lam, instance.marginals)]
    ) / (1.0 + norm_a + norm_Lam)
    eta5 = float(np.linalg.norm(sum_y - u)) / (
        1.0 + float(np.linalg.norm(sum_y)) + norm_u
    )
    eta6 = stacked_norm(
        [
            Vt - D - np.add.outer(yt, zt)
            for Vt, D, yt, zt in zip(V, instance.cost_matrices, y, z)
        ]
    ) / (1.0 + norm_D + norm_V + stacked_norm(y) + stacked_norm(z))
    eta7 = (abs(lam.sum() - 1.0) + float(np.linalg.norm(np.minimum(lam, 0.0)))) / (
        1.0 + norm_lam
    )
    eta8 = stacked_norm([np.minimum(Lt, 0.0) for Lt in Lam]) / (1.0 + norm_Lam)

    obj_P = float(sum(np.vdot(D, Lt) for D, Lt in zip(instance.cost_matrices, Lam)))
    obj_D = -(
        float(sum_y.max())
        + float(sum(np.dot(zt, at) for zt, at in zip(z, instance.marginals)))
    )
    eta_gap = abs(obj_P - obj_D) / (1.0 + abs(obj_P) + abs(obj_D))
    return ResidualReport(
        eta1=eta1,
        eta2=eta2,
        eta3=eta3,
        eta4=eta4,
        eta5=eta5,
        eta6=eta6,
        eta7=eta7,
        eta8=eta8,
        eta_gap=eta_gap,
        obj_P=obj_P,
        obj_D=obj_D,
    )


def update_penalty(beta: float, eta_P: float, eta_D: float) -> float:
    """Penalty adjustment from the dual/primal residual ratio.

    Grow beta when the dual residual dominates (ratio > 2), shrink when the
    primal dominates; the factor escalates with the imbalance (1.1 up to a
    50x imbalance, 1.5 up to 500x, 2 beyond). A zero residual counts as an
    infinite imbalance on its side.
    """
    if eta_P == 0.0 and eta_D == 0.0:
        return beta
    chi = math.inf if eta_P == 0.0 else eta_D / eta_P
    imbalance = max(chi, 1.0 / chi) if chi > 0 else math.inf
    if imbalance <= 50.0:
        sigma = 1.1
    elif imbalance > 500.0:
        sigma = 2.0
    else:
        sigma = 1.5
    if chi > 2.0:
        return sigma * beta
    if chi < 0.5:
        return beta / sigma
    return beta


def solve(
    instance: BarycenterInstance,
    options: Optional[SgsOptions] = None,
    initial: Optional[DualIterate] = None,
    trace: Optional[list] = None,
):
    """Run the solver to tolerance or the iteration cap.

    Returns (PrimalSolution, DualIterate, SolveReport). The primal solution is
    read off the multipliers of the terminating iterate; on a cap stop the
    best checkpoint iterate is returned and the report is flagged
    (converged=False). With scaling enabled the returned iterate, residuals
    and objective are all in original cost units. ``trace`` (optional list)
    receives one row per checkpoint: (iter, eta1..eta8, eta_P, eta_D,
    eta_gap, beta, elapsed seconds), measured on the problem being iterated.
    """
    opts = options or SgsOptions()
    opts.validate()
    start = time.perf_counter()

    work, kappa = scale_instance(instance) if opts.scaling else (instance, 1.0)
    if initial is not None:
        it = initial.scaled(1.0 / kappa) if kappa != 1.0 else initial.copy()
    else:
        it = initial_iterate(work)
    ws = make_workspace(work, it)

    beta = opts.beta0
    seq = opts.sequential_reduction
    best_crit = math.inf
    best_iterate = None
    converged = False
    iterations = 0
    stat_rows = []

    for k in range(1, opts.max_iter + 1):
        step1(it, ws, beta, seq)
        step2a(it, ws, work, beta)
        step2b(it, ws, work, beta, seq)
        step2c(it, ws, work, beta)
        step3(it, ws, work, beta, opts.tau, seq)
        iterations = k
        if k % opts.check_every == 0 or k == opts.max_iter:
            rep = kkt_residuals(work, it)
            stat_rows.append((k, step2b_stationarity(ws, work)))
            crit = max(rep.eta_P, rep.eta_D, rep.eta_gap)
            if trace is not None:
                trace.append(
                    (
                        k,
                        rep.eta1,
                        rep.eta2,
                        rep.eta3,
                        rep.eta4,
                        rep.eta5,
                        rep.eta6,
                        rep.eta7,
                        rep.eta8,
                        rep.eta_P,
                        rep.eta_D,
                        rep.eta_gap,
                        beta,
                        time.perf_counter() - start,
                    )
                )
            if crit < best_crit:
                best_crit = crit
                best_iterate = it.copy()
            if crit < opts.tol:
                converged = True
                break
            if opts.penalty_update and k < opts.max_iter:
                if rep.eta_P > 0.0 and rep.eta_D > 0.0:
                    beta = update_penalty(beta, rep.eta_P, rep.eta_D)
                    if not (BETA_WARN_RANGE[0] <= beta <= BETA_WARN_RANGE[1]):
                        warnings.warn(
                            f"penalty parameter left {BETA_WARN_RANGE}: beta={beta:g}",
                            RuntimeWarning,
                        )

    final = it if converged else (best_iterate or it)
    out_iterate = final.scaled(kappa) if kappa != 1.0 else final
    final_rep = kkt_residuals(instance, out_iterate)
    solution = PrimalSolution(w=out_iterate.lam, plans=out_iterate.Lam)
    report = SolveReport(
        method="sgs",
        objective=final_rep.obj_P,
        residuals=final_rep,
        iterations=iterations,
        wall_time=time.perf_counter() - start,
        converged=converged,
        params={
            "beta0": opts.beta0,
            "beta_final": beta,
            "tau": opts.tau,
            "tol": opts.tol,
            "max_iter": opts.max_iter,
            "scaling": opts.scaling,
            "kappa": kappa,
        },
        diagnostics={"step2b_stationarity": stat_rows},
    )
    return solution, out_iterate, report
