"""Reference methods: multiplicative-update NMF and Lloyd's k-means."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from combifd.matrix import as_matrix

__all__ = ["nmf_multiplicative", "kmeans", "KMeansState", "NmfResult"]

EPS = 1e-12


@dataclass
class NmfResult:
    W: np.ndarray
    H: np.ndarray
    trace: list = field(default_factory=list)

    def __iter__(self):
        # allows ``W, H = nmf_multiplicative(...)``
        return iter((self.W, self.H))


def nmf_multiplicative(a, k: int, iters: int = 500, seed: int = 0, eps: float = EPS,
                       w0=None, h0=None) -> NmfResult:
    """Lee-Seung multiplicative updates for ``min ||A - WH||_F`` with W, H >= 0.

    Each iteration updates H then W.  ``trace`` holds the Frobenius residual
    after every single-factor update, starting from the initial point.
    """
    a = as_matrix(a, "A")
    if np.any(a < 0):
        raise ValueError("multiplicative NMF needs a non-negative input matrix")
    m, n = a.shape
    if k < 1:
        raise ValueError(f"rank must be positive, got {k}")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(a.mean(), eps) / k)
    w = rng.uniform(0.0, 1.0, (m, k)) * scale if w0 is None else as_matrix(w0).copy()
    h = rng.uniform(0.0, 1.0, (k, n)) * scale if h0 is None else as_matrix(h0).copy()
    if np.any(w < 0) or np.any(h < 0):
        raise ValueError("initial factors must be non-negative")

    def resid():
        return float(np.linalg.norm(a - w @ h))

    trace = [resid()]
    for _ in range(iters):
        h *= (w.T @ a) / (w.T @ w @ h + eps)
        trace.append(resid())
        w *= (a @ h.T) / (w @ (h @ h.T) + eps)
        trace.append(resid())
    return NmfResult(w, h, trace)


@dataclass
class KMeansState:
    centroids: np.ndarray  # m x k, one column per cluster
    assignment: np.ndarray
    inertia: float
    history: list = field(default_factory=list)
    iterations: int = 0


def _inertia(points, centroids, assignment):
    diff = points - centroids[:, assignment]
    return float(np.sum(diff * diff))


def _nearest(points, centroids):
    # squared distances k x n; argmax/argmin pick the lowest index on ties
    d = (
        np.sum(centroids * centroids, axis=0)[:, None]
        - 2.0 * centroids.T @ points
        + np.sum(points * points, axis=0)[None, :]
    )
    return np.argmin(d, axis=0)


def kmeans(points, k: int, init_assignment, max_iters: int = 100,
           init_centroids=None) -> KMeansState:
    """Lloyd's algorithm on the columns of ``points`` (m x n).

    Starting from ``init_assignment``, alternate centroid and assignment
    updates until the assignment stops changing.  A cluster with no points
    keeps its previous centroid (``init_centroids`` column, or zeros before
    any centroid exists).  Nearest-centroid ties go to the lowest index.
    ``history`` lists the assignment after every update, starting with the
    initial one.
    """
    points = as_matrix(points, "points")
    m, n = points.shape
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    if k < 1:
        raise ValueError("k must be positive")
    assign = np.asarray(init_assignment, int).ravel()
    if assign.shape != (n,) or np.any(assign < 0) or np.any(assign >= k):
        raise ValueError("initial assignment must give every point a cluster index in [0, k)")
    cent = np.zeros((m, k)) if init_centroids is None else as_matrix(init_centroids).copy()
    if cent.shape != (m, k):
        raise ValueError(f"initial centroids have shape {cent.shape}, expected {(m, k)}")
    history = [assign.copy()]
    it = 0
    for it in range(1, max_iters + 1):
        for s in range(k):
            members = assign == s
            if members.any():
                cent[:, s] = points[:, members].mean(axis=1)
        new = _nearest(points, cent)
        if np.array_equal(new, assign):
            break
        assign = new
        history.append(assign.copy())
    return KMeansState(cent, assign, _inertia(points, cent, assign), history, it)
