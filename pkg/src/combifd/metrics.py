"""Cluster extraction from factors, accuracy scores and constraint audits."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from combifd.matrix import as_matrix

__all__ = [
    "HardAssignment",
    "hard_assign",
    "soft_supports",
    "group_rows",
    "accuracy_hard",
    "accuracy_soft",
    "overlap_matrix",
    "gibbs_violations",
    "connectivity_violations",
    "collinear_violations",
    "is_connected",
]

SOFT_THETA = 1e-3


@dataclass
class HardAssignment:
    labels: np.ndarray  # -1 marks an unassigned point
    k: int

    @property
    def unassigned(self) -> np.ndarray:
        return np.flatnonzero(self.labels < 0)


def hard_assign(w, h) -> HardAssignment:
    """Cluster of point j is argmax_s of colsum(W)_s * H[s, j]; ties to lowest s.

    Points whose weighted column is all zero are left unassigned (label -1).
    """
    w = as_matrix(w, "W")
    h = as_matrix(h, "H")
    if w.shape[1] != h.shape[0]:
        raise ValueError(f"W{w.shape} and H{h.shape} do not compose")
    score = w.sum(axis=0)[:, None] * h
    labels = np.argmax(score, axis=0)
    labels[np.all(score == 0.0, axis=0)] = -1
    return HardAssignment(labels, h.shape[0])


def group_rows(h, groups):
    """Sum rows of ``h`` within each group (e.g. shifted copies of one phase)."""
    h = np.asarray(h, float)
    return np.stack([h[list(g)].sum(axis=0) for g in groups])


def soft_supports(h, theta: float = SOFT_THETA) -> np.ndarray:
    """Boolean k x n support: entries above ``theta`` times the column maximum."""
    h = np.asarray(h, float)
    cmax = h.max(axis=0, keepdims=True)
    return (h > theta * cmax) & (cmax > 0)


def _labels_to_sets(labels, k=None):
    labels = np.asarray(labels, int)
    if k is None:
        k = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    out = np.zeros((k, labels.size), bool)
    ok = labels >= 0
    out[labels[ok], np.flatnonzero(ok)] = True
    return out


def overlap_matrix(pred_sets, true_sets) -> np.ndarray:
    """``|r_i & c_j|`` for boolean membership matrices (clusters x points)."""
    p = np.asarray(pred_sets, float)
    t = np.asarray(true_sets, float)
    return p @ t.T


def _best_sum(score):
    kp, kt = score.shape
    size = max(kp, kt)
    padded = np.zeros((size, size))
    padded[:kp, :kt] = score
    r, c = linear_sum_assignment(padded, maximize=True)
    return float(padded[r, c].sum()), dict(zip(r.tolist(), c.tolist()))


def accuracy_hard(pred, truth) -> float:
    """Fraction of points agreeing under the best one-to-one label matching.

    ``pred`` may be a :class:`HardAssignment` or a label array (-1 for
    unassigned points, which never count as correct).
    """
    labels = pred.labels if isinstance(pred, HardAssignment) else np.asarray(pred, int)
    truth = np.asarray(truth, int)
    if labels.shape != truth.shape:
        raise ValueError("prediction and truth cover different numbers of points")
    if labels.size == 0:
        return 1.0
    kp = pred.k if isinstance(pred, HardAssignment) else None
    score = overlap_matrix(_labels_to_sets(labels, kp), _labels_to_sets(truth))
    best, _ = _best_sum(score)
    return best / labels.size


def _jaccard_matrix(p, t):
    p = np.asarray(p, bool)
    t = np.asarray(t, bool)
    inter = p.astype(float) @ t.T.astype(float)
    sizes_p = p.sum(axis=1)[:, None]
    sizes_t = t.sum(axis=1)[None, :]
    union = sizes_p + sizes_t - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        jac = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return jac


def accuracy_soft(pred_sets, true_sets, normalize: str = "n", clamp: bool = True) -> float:
    """Best-bijection sum of per-cluster Jaccard overlaps.

    ``pred_sets`` and ``true_sets`` are boolean (clusters x points) matrices.
    With ``normalize='n'`` the sum is divided by the number of points; with
    ``normalize='k'`` by the number of clusters, which bounds the score by 1.
    Two empty clusters overlap with Jaccard 1.  The smaller side is padded
    with empty clusters.
    """
    p = np.asarray(pred_sets, bool)
    t = np.asarray(true_sets, bool)
    if p.shape[1] != t.shape[1]:
        raise ValueError("prediction and truth cover different numbers of points")
    kp, kt = p.shape[0], t.shape[0]
    size = max(kp, kt)
    pp = np.zeros((size, p.shape[1]), bool)
    tt = np.zeros((size, t.shape[1]), bool)
    pp[:kp] = p
    tt[:kt] = t
    best, _ = _best_sum(_jaccard_matrix(pp, tt))
    if normalize == "n":
        val = best / p.shape[1]
    elif normalize == "k":
        val = best / size
    else:
        raise ValueError(f"normalize must be 'n' or 'k', got {normalize!r}")
    return float(min(max(val, 0.0), 1.0)) if clamp else float(val)


# --------------------------------------------------------- physical audits

def gibbs_violations(support, M: int) -> np.ndarray:
    """Points whose number of present phases exceeds ``M``."""
    s = np.asarray(support, bool)
    return np.flatnonzero(s.sum(axis=0) > M)


def _adjacency(n, edges):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[int(u)].append(int(v))
        adj[int(v)].append(int(u))
    return adj


def is_connected(nodes, edges, n=None) -> bool:
    """Whether ``nodes`` induce a connected subgraph (empty and singletons are)."""
    nodes = [int(v) for v in nodes]
    if len(nodes) <= 1:
        return True
    if n is None:
        n = max(max(nodes), max((max(e) for e in edges), default=0)) + 1
    adj = _adjacency(n, edges)
    inside = np.zeros(n, bool)
    inside[nodes] = True
    seen = np.zeros(n, bool)
    queue = deque([nodes[0]])
    seen[nodes[0]] = True
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if inside[v] and not seen[v]:
                seen[v] = True
                queue.append(v)
    return bool(seen[inside].all())


def connectivity_violations(support, edges) -> list[int]:
    """Phases whose support is not connected in the neighbor graph."""
    s = np.asarray(support, bool)
    n = s.shape[1]
    return [z for z in range(s.shape[0]) if not is_connected(np.flatnonzero(s[z]), edges, n)]


def collinear_violations(conc, triples, tol: float = 1e-6) -> list[tuple]:
    """``(phase, triple)`` pairs breaking ``h[v2] >= min(h[v1], h[v3])``."""
    h = np.asarray(conc, float)
    out = []
    for z in range(h.shape[0]):
        for v1, v2, v3 in triples:
            if h[z, v2] < min(h[z, v1], h[z, v3]) - tol:
                out.append((z, (int(v1), int(v2), int(v3))))
    return out
