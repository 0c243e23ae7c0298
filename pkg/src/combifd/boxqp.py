"""Bound-constrained convex QP: minimize 1/2 x'Gx + c'x subject to lo <= x <= hi.

Block principal pivoting with a single-pivot backup rule, so termination is
finite whenever the (ridged) Hessian is positive definite.  The ridge is
proximal around the starting point, ``eps/2 * ||x - x0||^2``; it leaves
directions of zero curvature at their starting values, which is what keeps
an unused basis column in place during alternating updates.

The batched entry point solves many small independent problems of equal
size and is backed by the compiled ``_boxqp_ext`` extension when it is
available.
"""
from __future__ import annotations

import logging
import os

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

__all__ = ["box_qp", "box_qp_batch", "HAVE_EXTENSION", "BoxResult"]

RIDGE = 1e-10
BACKUP = 3

try:  # pragma: no cover - depends on build environment
    if os.environ.get("COMBIFD_PURE_PYTHON"):
        raise ImportError("pure-python mode requested")
    from combifd import _boxqp_ext

    HAVE_EXTENSION = True
except ImportError:
    _boxqp_ext = None
    HAVE_EXTENSION = False


class BoxResult:
    __slots__ = ("x", "grad", "state", "iterations", "status")

    def __init__(self, x, grad, state, iterations, status):
        self.x = x
        self.grad = grad
        self.state = state
        self.iterations = iterations
        self.status = status

    @property
    def optimal(self) -> bool:
        return self.status == 0


def _initial_state(x0, lo, hi):
    # 0 free, 1 at lower, 2 at upper, 3 fixed (lo == hi)
    state = np.zeros(x0.shape, np.int8)
    state[np.isfinite(lo) & (x0 <= lo)] = 1
    state[np.isfinite(hi) & (x0 >= hi)] = 2
    state[lo == hi] = 3
    return state


def _ridge(G):
    if sp.issparse(G):
        d = np.abs(G.diagonal())
    else:
        d = np.abs(np.diag(G))
    return RIDGE * max(1.0, float(d.max()) if d.size else 1.0)


def box_qp(G, c, lo, hi, x0=None, max_iter: int | None = None) -> BoxResult:
    """Solve one box QP.  ``G`` may be a dense array or a scipy sparse matrix.

    Returns a :class:`BoxResult` whose ``grad`` is the gradient of the
    (unridged) objective at ``x``; at an optimum it is the vector of bound
    multipliers (``>= 0`` at lower bounds, ``<= 0`` at upper bounds).
    """
    c = np.asarray(c, float)
    n = c.size
    lo = np.broadcast_to(np.asarray(lo, float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, float), (n,)).copy()
    if np.any(lo > hi):
        raise ValueError("box QP has an empty bound interval")
    if x0 is None:
        x0 = np.zeros(n)
    x0 = np.clip(np.asarray(x0, float), lo, hi)
    x0 = np.where(np.isfinite(x0), x0, 0.0)
    sparse = sp.issparse(G)
    if sparse:
        G = sp.csc_matrix(G)
    else:
        G = np.asarray(G, float)
    eps = _ridge(G)
    state = _initial_state(x0, lo, hi)
    if max_iter is None:
        max_iter = 10 * n + 50
    scale = max(1.0, float(np.abs(c).max()) if n else 1.0)
    best_ninf = n + 1
    backup = BACKUP
    x = x0.copy()
    for it in range(1, max_iter + 1):
        x = np.where(state == 1, lo, np.where(state == 2, hi, x))
        x[state == 3] = lo[state == 3]
        free = np.flatnonzero(state == 0)
        if free.size:
            bnd = np.flatnonzero(state != 0)
            rhs = -c[free] + eps * x0[free]
            if bnd.size:
                rhs -= G[free][:, bnd] @ x[bnd]
            x[free] = _solve_spd(G, free, eps, rhs, sparse)
        grad = G @ x + c
        rgrad = grad + eps * (x - x0)
        xs = max(1.0, float(np.abs(x).max()))
        tol_x = 1e-12 * xs
        tol_g = 1e-11 * max(scale, _gscale(G, sparse) * xs)
        infeas = (
            ((state == 0) & ((x < lo - tol_x) | (x > hi + tol_x)))
            | ((state == 1) & (rgrad < -tol_g))
            | ((state == 2) & (rgrad > tol_g))
        )
        ninf = int(infeas.sum())
        if ninf == 0:
            return BoxResult(x, grad, state, it, 0)
        if ninf < best_ninf:
            best_ninf = ninf
            backup = BACKUP
            flip = np.flatnonzero(infeas)
        elif backup > 0:
            backup -= 1
            flip = np.flatnonzero(infeas)
        else:
            flip = np.flatnonzero(infeas)[-1:]
        for j in flip:
            if state[j] == 0:
                state[j] = 1 if x[j] < lo[j] else 2
            else:
                state[j] = 0
    x = np.clip(x, lo, hi)
    return BoxResult(x, G @ x + c, state, max_iter, 1)


def _gscale(G, sparse):
    if sparse:
        return float(abs(G).max()) if G.nnz else 1.0
    return float(np.abs(G).max()) if G.size else 1.0


def _solve_spd(G, free, eps, rhs, sparse):
    if sparse:
        sub = G[free][:, free] + eps * sp.identity(free.size, format="csc")
        if free.size <= 400:
            return _dense_spd(sub.toarray(), rhs)
        return spla.spsolve(sp.csc_matrix(sub), rhs)
    sub = G[np.ix_(free, free)] + eps * np.eye(free.size)
    return _dense_spd(sub, rhs)


def _dense_spd(M, rhs):
    try:
        return sla.cho_solve(sla.cho_factor(M, check_finite=False), rhs, check_finite=False)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, rhs, rcond=None)[0]


def box_qp_batch(G, c, lo, hi, x0=None, max_iter: int | None = None, backend: str | None = None):
    """Solve ``B`` independent box QPs of size ``k`` stacked along axis 0.

    ``G`` has shape (B, k, k); ``c``, ``lo``, ``hi`` and ``x0`` have shape
    (B, k) (bounds may also broadcast).  Returns ``(x, grad, status, iters)``
    arrays.  ``backend`` forces ``'ext'`` or ``'python'``; by default the
    compiled extension is used when importable.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    B, k = c.shape
    if G.shape != (B, k, k):
        raise ValueError(f"Hessian stack has shape {G.shape}, expected {(B, k, k)}")
    lo = np.ascontiguousarray(np.broadcast_to(np.asarray(lo, float), (B, k)))
    hi = np.ascontiguousarray(np.broadcast_to(np.asarray(hi, float), (B, k)))
    if x0 is None:
        x0 = np.zeros((B, k))
    x0 = np.ascontiguousarray(np.broadcast_to(np.asarray(x0, float), (B, k)))
    if max_iter is None:
        max_iter = 10 * k + 50
    use_ext = HAVE_EXTENSION if backend is None else backend == "ext"
    if use_ext:
        if not HAVE_EXTENSION:
            raise RuntimeError("compiled box-QP extension is not available")
        return _boxqp_ext.box_qp_batch(G, c, lo, hi, x0, int(max_iter), RIDGE, BACKUP)
    x = np.empty((B, k))
    grad = np.empty((B, k))
    status = np.empty(B, np.int32)
    iters = np.empty(B, np.int32)
    for b in range(B):
        res = box_qp(G[b], c[b], lo[b], hi[b], x0[b], max_iter)
        x[b], grad[b], status[b], iters[b] = res.x, res.grad, res.status, res.iterations
    return x, grad, status, iters
