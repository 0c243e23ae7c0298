import numpy as np
import pytest

from combifd.baselines import kmeans, nmf_multiplicative


def test_nmf_trace_is_monotone_and_factors_nonnegative(rng):
    a = rng.random((6, 3)) @ rng.random((3, 9))
    res = nmf_multiplicative(a, 3, iters=300, seed=1)
    assert len(res.trace) == 601
    assert all(b <= a_ * (1 + 1e-12) for a_, b in zip(res.trace, res.trace[1:]))
    assert res.trace[-1] < 0.05 * res.trace[0]
    w, h = res
    assert np.all(w >= 0) and np.all(h >= 0)
    assert res.trace[-1] == pytest.approx(np.linalg.norm(a - w @ h))


def test_nmf_is_seeded(rng):
    a = rng.random((4, 5))
    x = nmf_multiplicative(a, 2, iters=10, seed=3)
    y = nmf_multiplicative(a, 2, iters=10, seed=3)
    assert np.array_equal(x.W, y.W) and np.array_equal(x.H, y.H)


def test_nmf_rejects_negative_input():
    with pytest.raises(ValueError):
        nmf_multiplicative(-np.ones((2, 2)), 1)
    with pytest.raises(ValueError):
        nmf_multiplicative(np.ones((2, 2)), 0)


def lloyd_reference(points, k, assign, cent, max_iters=100):
    hist = [assign.copy()]
    for _ in range(max_iters):
        for s in range(k):
            if np.any(assign == s):
                cent[:, s] = points[:, assign == s].mean(axis=1)
        d = ((points[:, :, None] - cent[:, None, :]) ** 2).sum(axis=0)
        new = np.argmin(d, axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
        hist.append(assign.copy())
    return hist


def test_kmeans_matches_reference_lloyd(rng):
    for _ in range(20):
        m, n, k = 3, int(rng.integers(6, 20)), int(rng.integers(2, 4))
        pts = rng.random((m, n))
        init = rng.integers(0, k, n)
        state = kmeans(pts, k, init)
        ref = lloyd_reference(pts, k, init.copy(), np.zeros((m, k)))
        assert len(state.history) == len(ref)
        for x, y in zip(state.history, ref):
            assert np.array_equal(x, y)


def test_kmeans_ties_go_to_lowest_index():
    # centroids land at 1 and 3, so both points at 2 are tied
    pts = np.array([[0.0, 4.0, 2.0, 2.0]])
    state = kmeans(pts, 2, np.array([0, 1, 0, 1]))
    assert state.history[1].tolist() == [0, 1, 0, 0]


def test_kmeans_empty_cluster_keeps_centroid():
    pts = np.array([[0.0, 1.0, 10.0]])
    state = kmeans(pts, 2, np.array([0, 0, 0]), init_centroids=np.array([[0.0, 100.0]]))
    assert state.centroids[0, 1] == 100.0
    assert state.centroids[0, 0] == pytest.approx(11.0 / 3.0)
    assert len(state.history) == 1


def test_kmeans_input_errors():
    with pytest.raises(ValueError):
        kmeans(np.ones((2, 2)), 3, np.zeros(2, int))
    with pytest.raises(ValueError):
        kmeans(np.ones((2, 3)), 2, np.array([0, 1, 2]))
