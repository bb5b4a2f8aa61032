"""Projection onto the probability simplex and the prox of its support function.

Two interchangeable projection routines are provided: a linear-time scan
(`project_simplex`, the solver hot path) and an O(m log m) sort-and-threshold
reference (`project_simplex_reference`) used to property-test the fast path.
Both apply a final renormalizing subtraction over the active set so the output
sums to 1 up to one rounding, keeping downstream simplex-membership residuals
free of projection round-off.
"""

import numpy as np

__all__ = ["project_simplex", "project_simplex_reference", "prox_support_function"]


def _finalize(v, tau):
    # Threshold, then spread the residual sum error over the active set.
    w = np.maximum(v - tau, 0.0)
    active = w > 0
    nact = int(np.count_nonzero(active))
    if nact:
        w[active] -= (w.sum() - 1.0) / nact
    return np.maximum(w, 0.0)


def project_simplex(v):
    """Euclidean projection of ``v`` onto {w : w >= 0, sum(w) = 1}.

    Linear-time scan algorithm: maintains a candidate active set and its
    running pivot rho = (sum of candidates - 1) / #candidates, with a final
    clean-up pass that evicts candidates at or below the pivot.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a nonempty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("projection input must be finite")
    n = v.size
    if n == 1:
        return np.array([1.0])

    kept = [v[0]]
    spilled = []
    rho = v[0] - 1.0
    for k in range(1, n):
        y = v[k]
        if y > rho:
            rho += (y - rho) / (len(kept) + 1)
            if rho > y - 1.0:
                kept.append(y)
            else:
                spilled.extend(kept)
                kept = [y]
                rho = y - 1.0
    for y in spilled:
        if y > rho:
            kept.append(y)
            rho += (y - rho) / len(kept)
    while True:
        dropped = False
        for y in list(kept):
            if y <= rho:
                kept.remove(y)
                rho += (rho - y) / len(kept)
                dropped = True
        if not dropped:
            break
    return _finalize(v, rho)


def project_simplex_reference(v):
    """Sort-and-threshold simplex projection; oracle for `project_simplex`."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a nonempty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("projection input must be finite")
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    k = np.nonzero(u - cssv / idx > 0)[0][-1] + 1
    return _finalize(v, cssv[k - 1] / k)


def prox_support_function(y, beta):
    """Prox of beta^{-1} * (support function of the simplex) at ``y``.

    By Moreau decomposition this is ``y - project_simplex(beta * y) / beta``;
    beta times the residual ``y - result`` is the simplex projection itself.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    y = np.asarray(y, dtype=float)
    return y - project_simplex(beta * y) / beta
