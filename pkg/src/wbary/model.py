"""Domain types and shared evaluation helpers for barycenter problems.

Conventions, fixed here once for the whole package:

* Support points are stored rows-as-points: an array of shape ``(n_points, d)``.
* An instance's cost matrix ``costs[t]`` has shape ``(m, m_t)`` and already
  includes the distribution weight ``gammas[t]`` (entry ``(i, j)`` is
  ``gammas[t] * ||x_i - q_j||_p^p`` when built from supports).
* A transport plan ``plans[t]`` has shape ``(m, m_t)``; its row sums couple to
  the barycenter weights ``w`` and its column sums to the marginal
  ``marginals[t]``.
* All matrices are dense row-major float64. Value objects mark their arrays
  read-only after validation and are safe to share across threads.

Probability vectors read from files are accepted when their sum is within
1e-12 of 1 and are then renormalized exactly (divided by their sum).
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "DiscreteDistribution",
    "BarycenterInstance",
    "PrimalSolution",
    "ResidualReport",
    "SolveReport",
    "build_cost_matrix",
    "instance_from_distributions",
    "primal_objective",
    "feasibility_residual",
    "product_plans",
    "primal_residual_report",
    "stacked_norm",
    "save_instance",
    "load_instance",
    "load_distributions",
    "save_solution",
    "load_solution",
]

WEIGHT_SUM_TOL = 1e-12


def _as_probability(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(v < 0):
        raise ValueError(f"{name} has negative entries")
    s = v.sum()
    if abs(s - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"{name} sums to {s!r}, outside 1 +/- {WEIGHT_SUM_TOL}")
    return v / s


def _as_points(arr, name):
    pts = np.asarray(arr, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.size == 0:
        raise ValueError(f"{name} must be a (n_points, d) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} has non-finite entries")
    return pts


def _freeze(a):
    a.flags.writeable = False
    return a


def stacked_norm(arrays) -> float:
    """Norm of a family of vectors/matrices: sqrt of the sum of squared norms."""
    return float(np.sqrt(sum(float(np.vdot(a, a)) for a in arrays)))


@dataclass(frozen=True)
class DiscreteDistribution:
    """A finitely supported probability distribution.

    weights : (n,) nonnegative, summing to 1 (renormalized exactly on input).
    supports : (n, d) support points, one per row.
    """

    weights: np.ndarray
    supports: np.ndarray

    def __post_init__(self):
        w = _as_probability(self.weights, "weights")
        q = _as_points(self.supports, "supports")
        if q.shape[0] != w.size:
            raise ValueError(
                f"supports has {q.shape[0]} points but weights has {w.size} entries"
            )
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "supports", _freeze(q))

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.supports.shape[1]


def build_cost_matrix(supports_x, supports_q, p: float = 2.0, gamma: float = 1.0):
    """Weighted p-th power distance matrix between two point sets.

    Entry ``(i, j)`` is ``gamma * ||x_i - q_j||_p ** p``. Swapping the two
    point sets transposes the result.
    """
    X = _as_points(supports_x, "supports_x")
    Q = _as_points(supports_q, "supports_q")
    if X.shape[1] != Q.shape[1]:
        raise ValueError(
            f"point dimensionality mismatch: {X.shape[1]} vs {Q.shape[1]}"
        )
    if p < 1:
        raise ValueError("p must be >= 1")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if p == 2.0:
        M = cdist(X, Q, "sqeuclidean")
    elif p == 1.0:
        M = cdist(X, Q, "cityblock")
    else:
        M = cdist(X, Q, "minkowski", p=p) ** p
    return gamma * M


@dataclass(frozen=True)
class BarycenterInstance:
    """Fixed-support barycenter LP data: N cost matrices and N marginals.

    cost_matrices[t] is (m, m_t) with the gamma weight folded in; marginals[t]
    is the probability vector of distribution t. ``barycenter_supports`` and
    ``distributions`` are optional metadata kept for free-support mode and for
    round-tripping instance files; the solvers only read costs and marginals.
    """

    cost_matrices: list
    marginals: list
    gammas: np.ndarray
    barycenter_supports: Optional[np.ndarray] = None
    distributions: Optional[list] = None
    p: float = 2.0

    def __post_init__(self):
        costs = [np.ascontiguousarray(np.asarray(D, dtype=float)) for D in self.cost_matrices]
        margs = [_as_probability(a, f"marginals[{t}]") for t, a in enumerate(self.marginals)]
        if len(costs) == 0 or len(costs) != len(margs):
            raise ValueError("need one cost matrix per marginal, at least one of each")
        m = costs[0].shape[0]
        for t, (D, a) in enumerate(zip(costs, margs)):
            if D.ndim != 2 or D.shape != (m, a.size):
                raise ValueError(
                    f"cost_matrices[{t}] has shape {D.shape}, expected ({m}, {a.size})"
                )
            if not np.all(np.isfinite(D)):
                raise ValueError(f"cost_matrices[{t}] has non-finite entries")
            if D.size and D.min() < 0:
                raise ValueError(f"cost_matrices[{t}] has negative entries")
        g = np.asarray(self.gammas, dtype=float)
        if g.shape != (len(costs),):
            raise ValueError("gammas must have one entry per distribution")
        if np.any(g <= 0):
            raise ValueError("gammas must be strictly positive")
        if abs(g.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"gammas sum to {g.sum()!r}, outside 1 +/- {WEIGHT_SUM_TOL}")
        object.__setattr__(self, "cost_matrices", [_freeze(D) for D in costs])
        object.__setattr__(self, "marginals", [_freeze(a) for a in margs])
        object.__setattr__(self, "gammas", _freeze(g / g.sum()))
        if self.barycenter_supports is not None:
            X = _as_points(self.barycenter_supports, "barycenter_supports")
            if X.shape[0] != m:
                raise ValueError("barycenter_supports must have m points")
            object.__setattr__(self, "barycenter_supports", _freeze(X))

    @property
    def n_distributions(self) -> int:
        return len(self.cost_matrices)

    @property
    def m(self) -> int:
        return self.cost_matrices[0].shape[0]

    @property
    def sizes(self):
        return [a.size for a in self.marginals]


def instance_from_distributions(
    distributions: Sequence[DiscreteDistribution],
    barycenter_supports,
    p: float = 2.0,
    gammas=None,
) -> BarycenterInstance:
    """Assemble the LP data for given distributions and barycenter supports.

    ``gammas`` defaults to uniform 1/N; each cost matrix is
    ``gammas[t] * ||x_i - q_j||_p^p``.
    """
    dists = list(distributions)
    if not dists:
        raise ValueError("need at least one distribution")
    N = len(dists)
    g = np.full(N, 1.0 / N) if gammas is None else np.asarray(gammas, dtype=float)
    X = _as_points(barycenter_supports, "barycenter_supports")
    costs = [build_cost_matrix(X, d.supports, p=p, gamma=g[t]) for t, d in enumerate(dists)]
    return BarycenterInstance(
        cost_matrices=costs,
        marginals=[d.weights for d in dists],
        gammas=g,
        barycenter_supports=X,
        distributions=dists,
        p=p,
    )


@dataclass(frozen=True)
class PrimalSolution:
    """Barycenter weights plus one transport plan per distribution."""

    w: np.ndarray
    plans: list

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        plans = [np.asarray(P, dtype=float) for P in self.plans]
        if w.ndim != 1:
            raise ValueError("w must be a vector")
        for t, P in enumerate(plans):
            if P.ndim != 2 or P.shape[0] != w.size:
                raise ValueError(f"plans[{t}] has shape {P.shape}, expected ({w.size}, m_t)")
        object.__setattr__(self, "w", _freeze(w))
        object.__setattr__(self, "plans", [_freeze(P) for P in plans])


def _check_shapes(instance: BarycenterInstance, solution: PrimalSolution):
    if solution.w.size != instance.m:
        raise ValueError("solution w length does not match instance m")
    if len(solution.plans) != instance.n_distributions:
        raise ValueError("solution has wrong number of plans")
    for t, (P, a) in enumerate(zip(solution.plans, instance.marginals)):
        if P.shape != (instance.m, a.size):
            raise ValueError(f"plans[{t}] shape {P.shape} != ({instance.m}, {a.size})")


def primal_objective(instance: BarycenterInstance, solution: PrimalSolution) -> float:
    """Total transport cost sum_t <costs[t], plans[t]>."""
    _check_shapes(instance, solution)
    return float(sum(np.vdot(D, P) for D, P in zip(instance.cost_matrices, solution.plans)))


def feasibility_residual(instance: BarycenterInstance, solution: PrimalSolution) -> float:
    """Deviation of (w, plans) from the feasible set of the barycenter LP.

    Maximum of four relative residuals: row sums vs w, column sums vs the
    marginals, simplex membership of w, and plan nonnegativity. Families of
    vectors/matrices are measured with the square-rooted sum of squared norms.
    """
    _check_shapes(instance, solution)
    w, plans = solution.w, solution.plans
    m = instance.m
    norm_w = float(np.linalg.norm(w))
    norm_plans = stacked_norm(plans)
    norm_a = stacked_norm(instance.marginals)
    e3 = stacked_norm([P.sum(axis=1) - w for P in plans]) / (1.0 + norm_w + norm_plans)
    e4 = stacked_norm(
        [P.sum(axis=0) - a for P, a in zip(plans, instance.marginals)]
    ) / (1.0 + norm_a + norm_plans)
    e7 = (abs(w.sum() - 1.0) + float(np.linalg.norm(np.minimum(w, 0.0)))) / (1.0 + norm_w)
    e8 = stacked_norm([np.minimum(P, 0.0) for P in plans]) / (1.0 + norm_plans)
    return max(e3, e4, e7, e8)


def product_plans(instance: BarycenterInstance, w=None):
    """Feasible product plans w a_t^T (uniform w by default); always exists."""
    w = np.full(instance.m, 1.0 / instance.m) if w is None else np.asarray(w, dtype=float)
    return PrimalSolution(w=w, plans=[np.outer(w, a) for a in instance.marginals])


def primal_residual_report(instance: BarycenterInstance, solution: PrimalSolution) -> "ResidualReport":
    """Feasibility-side residual report for solvers without dual variables."""
    _check_shapes(instance, solution)
    w, plans = solution.w, solution.plans
    norm_w = float(np.linalg.norm(w))
    norm_plans = stacked_norm(plans)
    return ResidualReport(
        eta3=stacked_norm([P.sum(axis=1) - w for P in plans]) / (1.0 + norm_w + norm_plans),
        eta4=stacked_norm([P.sum(axis=0) - a for P, a in zip(plans, instance.marginals)])
        / (1.0 + stacked_norm(instance.marginals) + norm_plans),
        eta7=(abs(w.sum() - 1.0) + float(np.linalg.norm(np.minimum(w, 0.0)))) / (1.0 + norm_w),
        eta8=stacked_norm([np.minimum(P, 0.0) for P in plans]) / (1.0 + norm_plans),
        obj_P=primal_objective(instance, solution),
    )


@dataclass
class ResidualReport:
    """Relative optimality residuals of a dual-solver iterate.

    eta1/eta2 are the complementarity blocks, eta3/eta4 the plan marginal
    blocks, eta5/eta6 the dual-constraint blocks, eta7/eta8 simplex membership
    and plan nonnegativity. obj_P is the transport cost of the primal iterate;
    obj_D the value of the (max-form) dual. eta1/2/5/6 and the gap are only
    populated by solvers that maintain dual variables.
    """

    eta3: float
    eta4: float
    eta7: float
    eta8: float
    eta1: Optional[float] = None
    eta2: Optional[float] = None
    eta5: Optional[float] = None
    eta6: Optional[float] = None
    eta_gap: Optional[float] = None
    obj_P: Optional[float] = None
    obj_D: Optional[float] = None

    @property
    def eta_P(self) -> Optional[float]:
        parts = (self.eta1, self.eta2, self.eta3, self.eta4)
        return None if any(x is None for x in parts) else max(parts)

    @property
    def eta_D(self) -> Optional[float]:
        parts = (self.eta5, self.eta6, self.eta7, self.eta8)
        return None if any(x is None for x in parts) else max(parts)

    @property
    def eta_feas(self) -> float:
        return max(self.eta3, self.eta4, self.eta7, self.eta8)

    def to_dict(self) -> dict:
        out = {
            name: getattr(self, name)
            for name in ("eta1", "eta2", "eta3", "eta4", "eta5", "eta6", "eta7", "eta8")
            if getattr(self, name) is not None
        }
        for name in ("eta_P", "eta_D", "eta_gap", "eta_feas", "obj_P", "obj_D"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        return out


@dataclass
class SolveReport:
    """Outcome summary shared by all solvers."""

    method: str
    objective: float
    residuals: ResidualReport
    iterations: int
    wall_time: float
    converged: bool
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "objective": self.objective,
            "residuals": self.residuals.to_dict(),
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "params": self.params,
        }


# ---------------------------------------------------------------------------
# Instance / solution files (JSON)


def _distribution_payload(d: DiscreteDistribution) -> dict:
    return {"weights": d.weights.tolist(), "supports": d.supports.tolist()}


def save_instance(path, instance: BarycenterInstance):
    """Write an instance file.

    Emits the distribution form when support metadata is available (compact,
    costs rebuilt on load), otherwise the precomputed cost-matrix form.
    """
    if instance.distributions is not None and instance.barycenter_supports is not None:
        payload = {
            "N": instance.n_distributions,
            "m": instance.m,
            "p": instance.p,
            "gammas": instance.gammas.tolist(),
            "distributions": [_distribution_payload(d) for d in instance.distributions],
            "barycenter_supports": instance.barycenter_supports.tolist(),
        }
    else:
        payload = {
            "N": instance.n_distributions,
            "m": instance.m,
            "gammas": instance.gammas.tolist(),
            "cost_matrices": [D.tolist() for D in instance.cost_matrices],
            "marginals": [a.tolist() for a in instance.marginals],
        }
        if instance.barycenter_supports is not None:
            payload["barycenter_supports"] = instance.barycenter_supports.tolist()
    with open(path, "w") as fh:
        json.dump(payload, fh)


def _load_payload(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def load_distributions(path):
    """Read the distribution form of an instance file.

    Returns (distributions, gammas, p); gammas is None when absent.
    """
    payload = _load_payload(path)
    if "distributions" not in payload:
        raise ValueError(f"{path}: no 'distributions' field")
    dists = [
        DiscreteDistribution(weights=d["weights"], supports=d["supports"])
        for d in payload["distributions"]
    ]
    gammas = np.asarray(payload["gammas"], dtype=float) if "gammas" in payload else None
    return dists, gammas, float(payload.get("p", 2.0))


def load_instance(path) -> BarycenterInstance:
    """Read an instance file in either the distribution or cost-matrix form."""
    payload = _load_payload(path)
    if "cost_matrices" in payload:
        n = len(payload["cost_matrices"])
        gammas = payload.get("gammas") or [1.0 / n] * n
        return BarycenterInstance(
            cost_matrices=[np.asarray(D, dtype=float) for D in payload["cost_matrices"]],
            marginals=[np.asarray(a, dtype=float) for a in payload["marginals"]],
            gammas=np.asarray(gammas, dtype=float),
            barycenter_supports=payload.get("barycenter_supports"),
        )
    if "distributions" not in payload:
        raise ValueError(f"{path}: neither 'cost_matrices' nor 'distributions' present")
    if "barycenter_supports" not in payload:
        raise ValueError(
            f"{path}: 'barycenter_supports' required to build cost matrices "
            "(distribution-form file; use free-support mode for unfixed supports)"
        )
    dists, gammas, p = load_distributions(path)
    return instance_from_distributions(
        dists, payload["barycenter_supports"], p=p, gammas=gammas
    )


def save_solution(path, solution: PrimalSolution, report: SolveReport, emit_plans=False):
    payload = {
        "w": solution.w.tolist(),
        "objective": report.objective,
        "residuals": report.residuals.to_dict(),
        "method": report.method,
    }
    if emit_plans:
        payload["plans"] = [P.tolist() for P in solution.plans]
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_solution(path):
    """Read a solution file back into model types.

    Solver outputs are feasible only up to their reported residuals, so w is
    checked for shape and finiteness, not strict simplex membership. Returns
    (w, objective, residuals dict, plans or None).
    """
    payload = _load_payload(path)
    w = np.asarray(payload["w"], dtype=float)
    if w.ndim != 1 or not np.all(np.isfinite(w)):
        raise ValueError(f"{path}: malformed 'w'")
    plans = None
    if "plans" in payload:
        sol = PrimalSolution(w=w, plans=[np.asarray(P, dtype=float) for P in payload["plans"]])
        plans = sol.plans
    return w, float(payload["objective"]), dict(payload.get("residuals", {})), plans
