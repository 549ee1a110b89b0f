import itertools

import numpy as np
import pytest

from appsessions.clustering import (ClusteringError, KMeansConfig, SessionTypeModel, assign,
                                    assign_many, kmeans_fit, kmeans_plusplus, lloyd,
                                    load_type_model, nearest_app_to_centroid, save_type_model)
from appsessions.embedding import EmbeddingConfig, EmbeddingModel, Vocab


def best_two_partition(X):
    """Exhaustive minimum inertia over all non-trivial 2-partitions."""
    n = len(X)
    best = np.inf
    for mask in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + mask)
        if labels.min() == labels.max():
            continue
        cost = sum(((X[labels == g] - X[labels == g].mean(axis=0)) ** 2).sum() for g in (0, 1))
        best = min(best, cost)
    return best


def test_k1_closed_form():
    X = np.random.default_rng(0).normal(size=(30, 3))
    m = kmeans_fit(X, KMeansConfig(K=1))
    np.testing.assert_allclose(m.centroids[0], X.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(m.inertia, X.var(axis=0).sum() * len(X), rtol=1e-12)


def test_two_blobs():
    rng = np.random.default_rng(1)
    a = rng.normal([0, 0], 0.3, size=(100, 2))
    b = rng.normal([5, 5], 0.3, size=(100, 2))
    m = kmeans_fit(np.vstack([a, b]), KMeansConfig(K=2))
    got = sorted(map(tuple, m.centroids.round(6)))
    want = sorted([tuple(a.mean(0)), tuple(b.mean(0))])
    np.testing.assert_allclose(got, want, atol=0.1)


def test_matches_exhaustive_partition_oracle():
    rng = np.random.default_rng(2)
    hits = 0
    for t in range(10):
        X = rng.normal(size=(int(rng.integers(3, 9)), 2))
        m = kmeans_fit(X, KMeansConfig(K=2, seed=t))
        hits += abs(m.inertia - best_two_partition(X)) <= 1e-9 * max(1.0, m.inertia)
    assert hits >= 9


def test_inertia_consistent_and_best_of_restarts():
    X = np.random.default_rng(3).normal(size=(200, 4))
    m = kmeans_fit(X, KMeansConfig(K=5, restarts=6))
    labels, dist = assign_many(X, m.centroids)
    assert abs(dist.sum() - m.inertia) <= 1e-9 * m.inertia
    assert m.inertia <= min(m.restart_inertias)
    assert all(b <= a for a, b in zip(m.history, m.history[1:]))


def test_weights_equal_duplicates():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(12, 3))
    w = rng.integers(1, 4, size=12).astype(float)
    init = X[:3].copy()
    c1, l1, i1, _ = lloyd(X, w, init)
    c2, l2, i2, _ = lloyd(np.repeat(X, w.astype(int), axis=0), np.ones(int(w.sum())), init)
    np.testing.assert_allclose(c1, c2, atol=1e-12)
    np.testing.assert_allclose(i1, i2, rtol=1e-12)


def test_empty_cluster_reseeded_to_farthest_point():
    X = np.array([[0.0], [1.0], [10.0]])
    init = np.array([[0.5], [100.0]])  # second centroid attracts nothing
    c, labels, inertia, hist = lloyd(X, np.ones(3), init)
    assert sorted(c.ravel().tolist()) == [0.5, 10.0]
    assert inertia == pytest.approx(0.5)
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_more_clusters_than_distinct_points():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    m = kmeans_fit(X, KMeansConfig(K=4), weights=[3.0, 2.0])
    assert m.inertia == 0.0 and m.centroids.shape == (4, 2)


def test_errors():
    with pytest.raises(ClusteringError):
        kmeans_fit(np.zeros((2, 2)), KMeansConfig(K=3))
    with pytest.raises(ClusteringError):
        kmeans_fit(np.array([[np.nan, 0.0], [1.0, 1.0]]), KMeansConfig(K=1))
    m = kmeans_fit(np.eye(3), KMeansConfig(K=2))
    with pytest.raises(ClusteringError):
        assign([1.0, 2.0], m)


def test_assign_rules():
    C = np.array([[0.0, 0.0], [5.0, 5.0], [1.0, 2.0], [2.0, 0.0]])
    m = SessionTypeModel(4, C, 0.0, KMeansConfig(K=4))
    assert assign(C[2], m) == 2
    assert assign([1.0, 0.0], m) == 0  # equidistant to 0 and 3
    for k in range(4):
        assert assign(C[k], m) == k
    rng = np.random.default_rng(5)
    for v in rng.normal(size=(200, 2)) * 3:
        assert assign(v, m) == int(np.argmin([((v - c) ** 2).sum() for c in C]))


def test_nearest_app():
    vecs = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]], dtype=np.float32)
    emb = EmbeddingModel(Vocab(("C", "B", "A"), (1, 1, 1)), vecs, EmbeddingConfig(dim=2))
    m = SessionTypeModel(2, np.array([[3.0, 4.0], [0.5, 0.5]]), 0.0, KMeansConfig(K=2))
    assert nearest_app_to_centroid(m, emb, 0) == "B"
    assert nearest_app_to_centroid(m, emb, 1) == "A"  # tie between C and A -> "A"
    single = EmbeddingModel(Vocab(("Z",), (1,)), np.ones((1, 2), np.float32), EmbeddingConfig(dim=2))
    assert nearest_app_to_centroid(m, single, 0) == "Z"
    rng = np.random.default_rng(6)
    big = EmbeddingModel(Vocab(tuple(f"a{i:02d}" for i in range(30)), (1,) * 30),
                         rng.normal(size=(30, 2)).astype(np.float32), EmbeddingConfig(dim=2))
    for c in rng.normal(size=(20, 2)):
        mm = SessionTypeModel(1, c[None, :], 0.0, KMeansConfig(K=1))
        d = [((big.vectors[i].astype(float) - c) ** 2).sum() for i in range(30)]
        assert nearest_app_to_centroid(mm, big, 0) == big.vocab.apps[int(np.argmin(d))]


def test_round_trip(tmp_path):
    m = kmeans_fit(np.random.default_rng(7).normal(size=(40, 3)), KMeansConfig(K=3))
    save_type_model(m, tmp_path / "types.bin")
    back = load_type_model(tmp_path / "types.bin")
    assert back.centroids.tobytes() == m.centroids.tobytes() and back.K == 3


def test_deterministic():
    X = np.random.default_rng(8).normal(size=(100, 3))
    a = kmeans_fit(X, KMeansConfig(K=4, seed=3))
    b = kmeans_fit(X, KMeansConfig(K=4, seed=3))
    assert np.array_equal(a.centroids, b.centroids)
