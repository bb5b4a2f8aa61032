"""Synthetic instance generators and the 1-D Gaussian ground-truth pair.

Reproducibility contract: all randomness flows through numpy's PCG64
(`np.random.default_rng(seed)`). Uniform draws use the generator directly;
normal draws go through the inverse CDF (`scipy.special.ndtri`) of PCG64
uniforms and mixture components through inverse-CDF sampling of the
cumulative weights, so instance bytes depend only on (params, seed), not on
numpy's sampler internals. k-means (Lloyd with k-means++ seeding, one
replicate, at most 100 iterations) is implemented here on the same generator
for the same reason.

The three families share one pattern: support-point coordinates are i.i.d.
draws from a five-component 1-D Gaussian mixture (means -20..20 step 10,
component variance 5, random mixture weights per instance).

* case 1 — dense weights, per-distribution support points; barycenter
  supports are k-means centroids of the pooled points.
* case 2 — s-sparse weights (s = floor(m' * sr)) on a random index subset;
  centroids are computed over the points that carry weight.
* case 3 — one shared support set for all distributions and the barycenter.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .model import BarycenterInstance, DiscreteDistribution, instance_from_distributions

__all__ = [
    "GaussianMixture1D",
    "kmeans",
    "gen_case1",
    "gen_case2",
    "gen_case3",
    "discretize_gaussian",
    "gaussian_pair_instance",
]

MIXTURE_MEANS = (-20.0, -10.0, 0.0, 10.0, 20.0)
MIXTURE_VARIANCE = 5.0


def _standard_normal(rng, size):
    # inverse-CDF sampling keeps draws reproducible across numpy versions
    return ndtri(rng.random(size))


@dataclass(frozen=True)
class GaussianMixture1D:
    """Scalar Gaussian mixture with fixed means and common variance."""

    means: np.ndarray
    variance: float
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("mixture weights must be nonnegative with positive sum")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights / weights.sum())

    @classmethod
    def random_weights(cls, rng) -> "GaussianMixture1D":
        return cls(
            means=np.array(MIXTURE_MEANS),
            variance=MIXTURE_VARIANCE,
            weights=rng.random(len(MIXTURE_MEANS)),
        )

    def sample(self, rng, size):
        comp = np.searchsorted(np.cumsum(self.weights), rng.random(size))
        comp = np.minimum(comp, len(self.weights) - 1)
        return self.means[comp] + np.sqrt(self.variance) * _standard_normal(rng, size)


def kmeans(points, k, rng, max_iter=100):
    """Lloyd's algorithm with k-means++ seeding; one replicate, deterministic.

    Empty clusters keep their previous centroid. Returns (k, d) centroids.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[int(rng.integers(n))]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = pts[int(rng.integers(n))]
        else:
            r = rng.random() * total
            centers[j] = pts[np.searchsorted(np.cumsum(d2), r)]
        d2 = np.minimum(d2, ((pts - centers[j]) ** 2).sum(axis=1))
    labels = None
    for _ in range(max_iter):
        dist = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            if mask.any():
                centers[j] = pts[mask].mean(axis=0)
    return centers


def _mixture_points(rng, count, d):
    mixture = GaussianMixture1D.random_weights(rng)
    return mixture.sample(rng, (count, d))


def gen_case1(N, m, m_prime, d=3, seed=0) -> BarycenterInstance:
    """Dense random weights, per-distribution mixture support points."""
    if min(N, m, m_prime, d) < 1:
        raise ValueError("N, m, m_prime, d must all be >= 1")
    rng = np.random.default_rng(seed)
    dists = []
    for _ in range(N):
        supports = _mixture_points(rng, m_prime, d)
        weights = rng.random(m_prime)
        dists.append(DiscreteDistribution(weights=weights / weights.sum(), supports=supports))
    pool = np.vstack([dd.supports for dd in dists])
    centers = kmeans(pool, m, rng)
    return instance_from_distributions(dists, centers, p=2.0)


def gen_case2(N, m, m_prime, sr, d=3, seed=0) -> BarycenterInstance:
    """Sparse weights: exactly floor(m' * sr) nonzeros per distribution."""
    if min(N, m, m_prime, d) < 1:
        raise ValueError("N, m, m_prime, d must all be >= 1")
    if not (0 < sr <= 1):
        raise ValueError("sparsity ratio must lie in (0, 1]")
    s = int(np.floor(m_prime * sr))
    if s < 1:
        raise ValueError(f"floor(m_prime * sr) = {s}; no support would remain")
    rng = np.random.default_rng(seed)
    dists = []
    for _ in range(N):
        supports = _mixture_points(rng, m_prime, d)
        chosen = rng.choice(m_prime, size=s, replace=False)
        weights = np.zeros(m_prime)
        weights[chosen] = rng.random(s)
        dists.append(DiscreteDistribution(weights=weights / weights.sum(), supports=supports))
    pool = np.vstack([dd.supports[dd.weights > 0] for dd in dists])
    centers = kmeans(pool, m, rng)
    return instance_from_distributions(dists, centers, p=2.0)


def gen_case3(N, m, d=3, seed=0) -> BarycenterInstance:
    """Dense weights on one shared support set (barycenter included)."""
    if min(N, m, d) < 1:
        raise ValueError("N, m, d must all be >= 1")
    rng = np.random.default_rng(seed)
    supports = _mixture_points(rng, m, d)
    dists = []
    for _ in range(N):
        weights = rng.random(m)
        dists.append(DiscreteDistribution(weights=weights / weights.sum(), supports=supports))
    return instance_from_distributions(dists, supports, p=2.0)


def discretize_gaussian(mu, sigma, lo, hi, n) -> DiscreteDistribution:
    """Normal density sampled on a uniform grid and renormalized."""
    if n < 2:
        raise ValueError("need at least 2 grid points")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not lo < hi:
        raise ValueError("need lo < hi")
    grid = np.linspace(lo, hi, n)
    density = np.exp(-0.5 * ((grid - mu) / sigma) ** 2)
    return DiscreteDistribution(weights=density / density.sum(), supports=grid[:, None])


def gaussian_pair_instance(n):
    """Two discretized Gaussians whose barycenter is known in closed form.

    N(-2, 0.25^2) and N(2, 1) on an n-point uniform grid over [-4, 5]; their
    2-Wasserstein barycenter is N(0, 0.625^2). Returns (instance, weights of
    the discretized true barycenter). The grid doubles as the barycenter
    support, so the computed weights are directly comparable.
    """
    g1 = discretize_gaussian(-2.0, 0.25, -4.0, 5.0, n)
    g2 = discretize_gaussian(2.0, 1.0, -4.0, 5.0, n)
    truth = discretize_gaussian(0.0, 5.0 / 8.0, -4.0, 5.0, n)
    instance = instance_from_distributions(
        [g1, g2], g1.supports, p=2.0, gammas=np.array([0.5, 0.5])
    )
    return instance, truth.weights
