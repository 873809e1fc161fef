"""Spherical k-means: k-means on the unit sphere under cosine similarity."""
import math
from typing import Sequence, Tuple, Union

import numpy as np

from src.store.embed_store import UNIT_TOL
from src.utils.errors import EmptyInputError, NonFiniteValueError, NonUnitInputError

MAX_ITER = 100
CONVERGENCE_TOL = 1e-9

SeedLike = Union[int, Sequence[int]]


def _rng(seed: SeedLike) -> np.random.Generator:
    entropy = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    return np.random.default_rng(np.random.SeedSequence([int(s) for s in entropy]))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding with cosine distance (1 - cos) as the potential."""
    n = x.shape[0]
    n_trials = 2 + int(math.log(k))
    first = int(rng.integers(n))
    centers = [first]
    closest = np.clip(1.0 - x @ x[first], 0.0, None)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every remaining point coincides numerically with a center
            taken = x[centers]
            fresh = [i for i in range(n) if not np.any(np.all(taken == x[i], axis=1))]
            if not fresh:
                break
            pick = fresh[0]
            closest = np.minimum(closest, np.clip(1.0 - x @ x[pick], 0.0, None))
            centers.append(pick)
            continue
        draws = rng.random(n_trials) * total
        candidates = np.searchsorted(np.cumsum(closest), draws)
        candidates = np.minimum(candidates, n - 1)
        best, best_pot, best_closest = -1, np.inf, closest
        for cand in candidates:
            trial = np.minimum(closest, np.clip(1.0 - x @ x[cand], 0.0, None))
            pot = trial.sum()
            if pot < best_pot:
                best, best_pot, best_closest = int(cand), pot, trial
        centers.append(best)
        closest = best_closest
    return x[centers].copy()


def _update_centroids(x: np.ndarray, labels: np.ndarray, old: np.ndarray) -> np.ndarray:
    sums = np.zeros_like(old)
    np.add.at(sums, labels, x)
    norms = np.linalg.norm(sums, axis=1)
    new = old.copy()
    # antipodal members cancel out; such a cluster keeps its previous centroid
    ok = norms > 0.0
    new[ok] = sums[ok] / norms[ok, None]
    return new


def _repair_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> None:
    """Gives each empty cluster the globally farthest point, in place."""
    k = centroids.shape[0]
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j] > 0:
            continue
        own_sim = np.einsum("ij,ij->i", x, centroids[labels])
        movable = counts[labels] > 1
        if not np.any(movable):
            return
        own_sim = np.where(movable, own_sim, np.inf)
        far = int(np.argmin(own_sim))
        labels[far] = j
        centroids[j] = x[far]


def spherical_kmeans(points: np.ndarray, k: int, seed: SeedLike = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Clusters unit vectors into at most k groups by cosine similarity.

    Returns (assignments, centroids): assignments are argmax-cosine labels
    against the returned unit centroids. When the input has fewer distinct
    points than k, that many clusters are returned. Deterministic for a
    fixed (points order, k, seed).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("spherical_kmeans needs a non-empty (n, dim) point matrix")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValueError("points contain NaN or Inf")
    norms = np.linalg.norm(x, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise NonUnitInputError("spherical_kmeans expects unit-normalized points")
    x = x / norms[:, None]

    n_distinct = np.unique(x, axis=0).shape[0]
    k_eff = min(k, n_distinct)
    if k_eff == 1:
        centroid = _unit_rows(x.sum(axis=0, keepdims=True))
        if not np.any(centroid):
            centroid = x[:1].copy()
        return np.zeros(x.shape[0], dtype=np.int64), centroid

    rng = _rng(seed)
    centroids = _kmeanspp(x, k_eff, rng)
    labels = np.argmax(x @ centroids.T, axis=1)
    for _ in range(MAX_ITER):
        _repair_empty(x, labels, centroids)
        updated = _update_centroids(x, labels, centroids)
        movement = np.max(1.0 - np.einsum("ij,ij->i", updated, centroids))
        centroids = updated
        labels = np.argmax(x @ centroids.T, axis=1)
        if movement < CONVERGENCE_TOL:
            break

    # drop clusters left empty by the final assignment and relabel densely
    used = np.unique(labels)
    remap = np.full(centroids.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.shape[0])
    return remap[labels], centroids[used]
