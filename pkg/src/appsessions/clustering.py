"""k-means session typing: kmeans++ seeding, Lloyd iterations, best of several restarts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .embedding import EmbeddingModel, read_matrix_file, write_matrix_file
from .seeding import derive_seed


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class KMeansConfig:
    K: int = 2
    restarts: int = 10
    max_iters: int = 300
    tol: float = 1e-6
    seed: int = 0


@dataclass(frozen=True)
class SessionTypeModel:
    K: int
    centroids: np.ndarray
    inertia: float
    config: KMeansConfig
    restart_inertias: tuple[float, ...] = field(default=(), compare=False)
    history: tuple[float, ...] = field(default=(), compare=False)  # inertia per Lloyd step, best run


@numba.njit(cache=True)
def _assign(X, centroids):
    n, d = X.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = X[i, t] - centroids[j, t]
                s += diff * diff
            if s < best:
                best = s
                arg = j
        labels[i] = arg
        dist[i] = best
    return labels, dist


@numba.njit(cache=True)
def _weighted_sums(X, weights, labels, K):
    n, d = X.shape
    sums = np.zeros((K, d))
    mass = np.zeros(K)
    for i in range(n):
        j = labels[i]
        mass[j] += weights[i]
        for t in range(d):
            sums[j, t] += weights[i] * X[i, t]
    return sums, mass


@numba.njit(cache=True)
def _refine(X, centroids, approx, scale):
    """Exact argmin among centroids whose BLAS distance is within rounding of the best."""
    n, d = X.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        lo = np.inf
        for j in range(k):
            if approx[i, j] < lo:
                lo = approx[i, j]
        slack = 1e-9 * scale[i] + 1e-300
        best = np.inf
        arg = 0
        for j in range(k):
            if approx[i, j] <= lo + slack:
                s = 0.0
                for t in range(d):
                    diff = X[i, t] - centroids[j, t]
                    s += diff * diff
                if s < best:
                    best = s
                    arg = j
        labels[i] = arg
        dist[i] = best
    return labels, dist


def _assign_fast(X, centroids, x_sq):
    c_sq = (centroids ** 2).sum(axis=1)
    approx = x_sq[:, None] - 2.0 * (X @ centroids.T) + c_sq[None, :]
    return _refine(X, centroids, approx, x_sq + c_sq.max())


def assign_many(X: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (ties to the lowest index) and the squared distance."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.ascontiguousarray(centroids, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != C.shape[1]:
        raise ClusteringError(f"dimension mismatch: {X.shape} vs centroids {C.shape}")
    return _assign(X, C)


def assign(vector, model: SessionTypeModel) -> int:
    v = np.asarray(vector, dtype=np.float64).reshape(1, -1)
    return int(assign_many(v, model.centroids)[0][0])


@numba.njit(cache=True)
def _sq_dist_to(X, c):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        s = 0.0
        for t in range(X.shape[1]):
            diff = X[i, t] - c[t]
            s += diff * diff
        out[i] = s
    return out


def kmeans_plusplus(X, weights, K, rng) -> np.ndarray:
    """D^2 seeding with points weighted by multiplicity."""
    n = X.shape[0]
    centroids = np.empty((K, X.shape[1]))
    first = rng.choice(n, p=weights / weights.sum())
    centroids[0] = X[first]
    closest = _sq_dist_to(X, X[first])
    for j in range(1, K):
        pot = weights * closest
        total = pot.sum()
        p = pot / total if total > 0 else weights / weights.sum()
        pick = rng.choice(n, p=p)
        centroids[j] = X[pick]
        closest = np.minimum(closest, _sq_dist_to(X, X[pick]))
    return centroids


def lloyd(X, weights, centroids, max_iters=300, tol=1e-6):
    """Weighted Lloyd iterations from ``centroids``.

    Returns (centroids, labels, inertia, history); the returned labels and
    inertia are those implied by the returned centroids. An empty cluster is
    moved onto the point farthest from its own centroid.
    """
    centroids = np.array(centroids, dtype=np.float64)
    K = centroids.shape[0]
    x_sq = (X ** 2).sum(axis=1)
    history = []
    prev = None
    for _ in range(max_iters + 1):
        labels, dist = _assign_fast(X, centroids, x_sq)
        inertia = float(weights @ dist)
        if prev is not None and inertia > prev[2]:
            # rounding noise at a fixed point; keep the previous state
            centroids, labels, inertia = prev
            break
        history.append(inertia)
        if inertia == 0.0 or (prev is not None and prev[2] - inertia < tol * prev[2]):
            break
        if len(history) > max_iters:
            break
        prev = (centroids.copy(), labels, inertia)
        sums, mass = _weighted_sums(X, weights, labels, K)
        filled = mass > 0
        centroids[filled] = sums[filled] / mass[filled, None]
        if not filled.all():
            own = ((X - centroids[labels]) ** 2).sum(axis=1)
            for j in np.flatnonzero(~filled):
                far = int(np.argmax(own))
                centroids[j] = X[far]
                own[far] = -1.0
    return centroids, labels, inertia, history


def kmeans_fit(vectors, config: KMeansConfig, weights=None) -> SessionTypeModel:
    """Best-of-``restarts`` k-means on ``vectors``.

    ``weights`` gives each row a multiplicity, so duplicate session vectors
    can be collapsed before clustering without changing the objective.
    """
    X = np.ascontiguousarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ClusteringError("vectors must be a 2-D array")
    if not np.all(np.isfinite(X)):
        raise ClusteringError("vectors contain NaN or Inf")
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=np.float64)
    if config.K < 1:
        raise ClusteringError("K must be >= 1")
    if w.sum() < config.K:
        raise ClusteringError(f"need at least K={config.K} points, got {w.sum():g}")
    best = None
    inertias = []
    for r in range(config.restarts):
        rng = np.random.default_rng(derive_seed(config.seed, "kmeans", config.K, r))
        init = kmeans_plusplus(X, w, config.K, rng)
        run = lloyd(X, w, init, config.max_iters, config.tol)
        inertias.append(run[2])
        if best is None or run[2] < best[2]:
            best = run
    centroids, _, inertia, history = best
    return SessionTypeModel(config.K, centroids, inertia, config, tuple(inertias), tuple(history))


def nearest_app_to_centroid(model: SessionTypeModel, embedding: EmbeddingModel, type_id: int) -> str:
    if len(embedding.vocab) == 0:
        raise ClusteringError("empty vocabulary")
    if embedding.dim != model.centroids.shape[1]:
        raise ClusteringError("embedding and centroid dimensions differ")
    d = ((embedding.vectors.astype(np.float64) - model.centroids[type_id]) ** 2).sum(axis=1)
    ties = np.flatnonzero(d == d.min())
    return min(embedding.vocab.apps[i] for i in ties)


def save_type_model(model: SessionTypeModel, path) -> None:
    header = {"kind": "session_types", "K": model.K, "inertia": model.inertia,
              "config": asdict(model.config)}
    write_matrix_file(path, header, model.centroids, "float64")


def load_type_model(path) -> SessionTypeModel:
    header, matrix = read_matrix_file(path)
    if header.get("kind") != "session_types" or matrix.shape[0] != header["K"]:
        raise ClusteringError(f"{path}: not a session type model")
    return SessionTypeModel(header["K"], matrix, header["inertia"], KMeansConfig(**header["config"]))
