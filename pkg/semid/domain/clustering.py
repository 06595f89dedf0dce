"""
Clustering and matching primitives for the quantizers.

- balanced_kmeans: Lloyd iterations with a capacity-constrained greedy
  assignment (sizes differ by at most one) and a final swap polish.
- lloyd_kmeans: standard (unbalanced) k-means, used by the RQ baseline.
- ortho_anchors: near-orthonormal unit directions shared across a level.
- hungarian: exact injective assignment of rows to columns.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax
from sklearn.cluster import KMeans, kmeans_plusplus
from sklearn.exceptions import ConvergenceWarning

from semid.domain.models import AnchorSet
from semid.domain.policies import balanced_capacities

log = logging.getLogger(__name__)


@dataclass
class Partition:
    labels: np.ndarray     # (n,) cluster index per point
    centroids: np.ndarray  # (b, D) member means

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.centroids.shape[0])


@dataclass
class Assignment:
    columns: np.ndarray  # column chosen for each row
    total: float


def _seed_from(rng: Optional[np.random.Generator]) -> int:
    rng = rng if rng is not None else np.random.default_rng(0)
    return int(rng.integers(0, 2**31 - 1))


def _means(x: np.ndarray, labels: np.ndarray, b: int, previous: Optional[np.ndarray] = None) -> np.ndarray:
    sums = np.zeros((b, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=b).astype(np.float64)
    out = np.zeros_like(sums) if previous is None else previous.astype(np.float64).copy()
    filled = counts > 0
    out[filled] = sums[filled] / counts[filled, None]
    return out


def partition_cost(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Total squared distance of every point to its cluster centroid."""
    diff = np.asarray(x, dtype=np.float64) - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


# -------------------------
# balanced k-means
# -------------------------

def _balanced_assign(dist: np.ndarray, b: int) -> np.ndarray:
    """Greedy capacity-constrained assignment.

    Points with the largest regret (second-best minus best distance) pick
    first and go to their nearest cluster that still has room. ``n % b``
    clusters may reach ``ceil(n/b)``, the others stop at ``floor(n/b)``.
    """
    n = dist.shape[0]
    q, r = divmod(n, b)
    part = np.partition(dist, 1, axis=1)
    regret = part[:, 1] - part[:, 0]
    order = np.lexsort((np.arange(n), -regret))
    prefs = np.argsort(dist, axis=1, kind="stable")
    counts = np.zeros(b, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    big = 0
    for i in order:
        for c in prefs[i]:
            if counts[c] < q or (counts[c] == q and big < r):
                if counts[c] == q:
                    big += 1
                counts[c] += 1
                labels[i] = c
                break
    return labels


def _swap_polish(dist: np.ndarray, labels: np.ndarray, b: int, tol: float) -> np.ndarray:
    """Pairwise swaps (and size-preserving moves) until none lowers the cost."""
    labels = labels.copy()
    sizes = np.bincount(labels, minlength=b)
    changed = True
    while changed:
        changed = False
        for a in range(b):
            for c in range(a + 1, b):
                while True:
                    in_a = np.flatnonzero(labels == a)
                    in_c = np.flatnonzero(labels == c)
                    gain_a = dist[in_a, c] - dist[in_a, a]   # cost of moving a-member to c
                    gain_c = dist[in_c, a] - dist[in_c, c]
                    i = int(np.argmin(gain_a))
                    j = int(np.argmin(gain_c))
                    options = [(gain_a[i] + gain_c[j], "swap")]
                    if sizes[a] > sizes[c]:
                        options.append((gain_a[i], "a->c"))
                    if sizes[c] > sizes[a]:
                        options.append((gain_c[j], "c->a"))
                    delta, kind = min(options, key=lambda t: t[0])
                    if delta >= -tol:
                        break
                    if kind in ("swap", "a->c"):
                        labels[in_a[i]] = c
                    if kind in ("swap", "c->a"):
                        labels[in_c[j]] = a
                    sizes = np.bincount(labels, minlength=b)
                    changed = True
    return labels


def balanced_kmeans(
    points: np.ndarray,
    b: int,
    iters: int = 50,
    rng: Optional[np.random.Generator] = None,
) -> Partition:
    """Partitions points into ``b`` clusters whose sizes differ by at most one.

    Lloyd iterations from a k-means++ start, each assignment step solved by
    the greedy capacity-constrained rule, then a swap polish against the
    final centroids: on return no exchange of two points between clusters
    (and no balance-preserving single move) lowers the total squared
    distance, and centroids are the member means.

    Args:
        points: (n, D) array.
        b: Number of clusters, ``1 <= b <= n``.
        iters: Maximum Lloyd iterations.
        rng: Source of the k-means++ seed.

    Raises:
        ValueError: if ``n < b`` or ``b < 1``.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if b < 1:
        raise ValueError(f"cluster count must be >= 1, got {b}")
    if n < b:
        raise ValueError(f"cannot split {n} points into {b} balanced clusters")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if b == n:
        return Partition(np.arange(n, dtype=np.int64), x.copy())
    if b == 1:
        return Partition(np.zeros(n, dtype=np.int64), x.mean(axis=0, keepdims=True))

    rng = rng if rng is not None else np.random.default_rng(0)
    scale = float(np.einsum("ij,ij->", x - x.mean(0), x - x.mean(0)))
    tol = 1e-12 * max(scale, 1.0)
    centroids, _ = kmeans_plusplus(x, b, random_state=_seed_from(rng))
    centroids = centroids.astype(np.float64)
    labels: Optional[np.ndarray] = None
    for _ in range(iters):
        new = _balanced_assign(cdist(x, centroids, "sqeuclidean"), b)
        centroids = _means(x, new, b, centroids)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    assert labels is not None
    for _ in range(100 * iters):
        polished = _swap_polish(cdist(x, centroids, "sqeuclidean"), labels, b, tol)
        if np.array_equal(polished, labels):
            break
        labels = polished
        centroids = _means(x, labels, b, centroids)
    part = Partition(labels, centroids)
    if not np.array_equal(np.sort(part.sizes()), np.sort(balanced_capacities(n, b))):
        raise AssertionError(f"unbalanced partition {part.sizes().tolist()} for n={n}, b={b}")
    return part


# -------------------------
# standard k-means
# -------------------------

def lloyd_kmeans(points: np.ndarray, b: int, iters: int = 50,
                 rng: Optional[np.random.Generator] = None) -> Partition:
    """Unbalanced k-means (k-means++ start, Lloyd updates).

    Empty clusters are relocated by scikit-learn to far-away points.
    Centroids are recomputed as member means of the final labels.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.shape[0] < b:
        raise ValueError(f"cannot fit {b} centroids to {x.shape[0]} points")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        km = KMeans(
            n_clusters=b,
            init="k-means++",
            n_init=1,
            max_iter=iters,
            algorithm="lloyd",
            random_state=_seed_from(rng),
        ).fit(x)
    for w in caught:
        log.warning("k-means: %s", w.message)
    labels = km.labels_.astype(np.int64)
    centroids = _means(x, labels, b, km.cluster_centers_)
    return Partition(labels, centroids)


# -------------------------
# anchors
# -------------------------

def _spread_objective(flat: np.ndarray, g: int, dim: int, beta: float):
    y = flat.reshape(g, dim)
    norms = np.linalg.norm(y, axis=1, keepdims=True)
    u = y / norms
    cos = u @ u.T
    iu = np.triu_indices(g, 1)
    vals = beta * cos[iu] ** 2
    value = float(logsumexp(vals)) / beta
    w = np.zeros((g, g))
    w[iu] = 2.0 * softmax(vals) * cos[iu]
    grad_u = (w + w.T) @ u
    # project onto the tangent space of each row and undo the normalisation
    grad_y = (grad_u - np.sum(grad_u * u, axis=1, keepdims=True) * u) / norms
    return value, grad_y.ravel()


def max_pairwise_cos(vectors: np.ndarray, absolute: bool = True) -> float:
    v = np.asarray(vectors, dtype=np.float64)
    if v.shape[0] < 2:
        return 0.0
    cos = v @ v.T
    iu = np.triu_indices(v.shape[0], 1)
    vals = np.abs(cos[iu]) if absolute else cos[iu]
    return float(vals.max())


def _spread(start: np.ndarray) -> np.ndarray:
    g, dim = start.shape
    y = start
    previous = np.inf
    for beta in (10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0):
        res = minimize(_spread_objective, y.ravel(), args=(g, dim, beta), jac=True,
                       method="L-BFGS-B", options={"maxiter": 500})
        y = res.x.reshape(g, dim)
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        current = max_pairwise_cos(y)
        if previous - current < 1e-6:
            break
        previous = current
    return y


def ortho_anchors(g: int, dim: int, rng: Optional[np.random.Generator] = None, level: int = 0,
                  starts: int = 4) -> AnchorSet:
    """Generates ``g`` unit anchor directions in dimension ``dim``.

    ``g <= dim``: columns of the QR factor of a dim x g standard Gaussian
    matrix (exactly orthonormal). ``g > dim``: directions minimising the
    maximum pairwise |cos|, found by minimising a smooth maximum of squared
    cosines with increasing sharpness from ``starts`` random points; the
    best run is kept. In one dimension the anchors alternate +1 and -1.
    The achieved max |cos| is stored on the AnchorSet.
    """
    if g < 1 or dim < 1:
        raise ValueError(f"anchor count and dimension must be >= 1, got g={g}, D={dim}")
    rng = rng if rng is not None else np.random.default_rng(0)
    if g <= dim:
        q, r = np.linalg.qr(rng.standard_normal((dim, g)))
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        vectors = (q * signs).T.copy()
        return AnchorSet(level, vectors, max_pairwise_cos(vectors))
    if dim == 1:
        vectors = np.where(np.arange(g) % 2 == 0, 1.0, -1.0).reshape(g, 1)
        return AnchorSet(level, vectors, 1.0)

    best: Optional[np.ndarray] = None
    best_cos = np.inf
    for _ in range(max(1, starts)):
        y = _spread(rng.standard_normal((g, dim)))
        cos = max_pairwise_cos(y)
        if cos < best_cos:
            best, best_cos = y, cos
    assert best is not None
    return AnchorSet(level, best, best_cos)


# -------------------------
# matching
# -------------------------

def hungarian(matrix: np.ndarray, maximize: bool = False) -> Assignment:
    """Exact injective assignment of the ``b`` rows to ``g >= b`` columns.

    Raises:
        ValueError: if there are more rows than columns or any entry is not finite.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("assignment matrix must be 2-D")
    b, g = m.shape
    if b > g:
        raise ValueError(f"cannot assign {b} rows injectively to {g} columns")
    if not np.all(np.isfinite(m)):
        raise ValueError("assignment matrix has non-finite entries")
    rows, cols = linear_sum_assignment(m, maximize=maximize)
    columns = np.empty(b, dtype=np.int64)
    columns[rows] = cols
    return Assignment(columns, float(m[rows, cols].sum()))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarities; rows with zero norm give 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    ua = np.divide(a, na, out=np.zeros_like(a), where=na > 0)
    ub = np.divide(b, nb, out=np.zeros_like(b), where=nb > 0)
    return ua @ ub.T
