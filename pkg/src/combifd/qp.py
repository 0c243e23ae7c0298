"""Convex QP: minimize 1/2 v'Qv + c'v subject to linear rows and bounds.

Used both for continuous relaxations inside branch-and-bound and directly
for binary-free alternating steps.  The solve pipeline is

1. presolve: variables with ``lo == hi`` are substituted out, and
   equality-defined variables (a variable appearing in exactly one equality
   row whose bounds are implied by that row) are eliminated;
2. optional decomposition into independent blocks of the coupling graph
   (Hessian sparsity plus row co-occurrence);
3. bound-only blocks go to the block principal pivoting kernel in
   :mod:`combifd.boxqp` (batched when many blocks have the same size), the
   rest to the dense active-set method in :mod:`combifd.activeset`;
4. the solution and its multipliers are mapped back to the original
   variables and rows.

Constraint ids in ``active_set`` follow the active-set numbering: rows are
``0..R-1``, lower bounds ``R + j``, upper bounds ``R + N + j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from combifd import activeset
from combifd.boxqp import box_qp, box_qp_batch
from combifd.constraints import (
    ConstraintSystem,
    Dims,
    H,
    LinearRow,
    LinearSystem,
    W,
    build_nonnegativity,
    fix_factor,
)
from combifd.matrix import as_matrix

__all__ = [
    "QpProblem",
    "QpWarmStart",
    "QpSolution",
    "NonConvexError",
    "solve_qp",
    "kkt_residuals",
    "factor_objective",
    "l1_step_system",
    "solve_nnls_step",
    "components",
]

PSD_TOL = 1e-8
SYM_TOL = 1e-10
DENSE_PSD_LIMIT = 2000
DENSE_BOX_LIMIT = 400


class NonConvexError(ValueError):
    """Raised for a Hessian with negative curvature; ``direction`` shows it."""

    def __init__(self, message, direction=None, eigenvalue=None):
        super().__init__(message)
        self.direction = direction
        self.eigenvalue = eigenvalue


@dataclass
class QpWarmStart:
    point: np.ndarray | None = None
    active_set: tuple = ()


@dataclass
class QpProblem:
    """``quadratic`` may be a dense array or any scipy sparse matrix.

    ``constraints`` is a :class:`ConstraintSystem` or an already compiled
    :class:`LinearSystem`; integrality flags are ignored by :func:`solve_qp`.
    ``constant`` is added to reported objectives.
    """

    quadratic: object
    linear: np.ndarray
    constraints: object
    warm_start: QpWarmStart | None = None
    constant: float = 0.0

    @property
    def system(self) -> LinearSystem:
        if isinstance(self.constraints, ConstraintSystem):
            return self.constraints.arrays
        return self.constraints

    @property
    def n(self) -> int:
        return int(np.asarray(self.linear).size)


@dataclass
class QpSolution:
    point: np.ndarray
    objective: float
    status: str
    active_set: tuple
    row_duals: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    iterations: int = 0
    certificate: dict | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def multipliers(self) -> dict:
        """Multiplier of each constraint in the active set, keyed by id."""
        R = self.row_duals.size
        n = self.point.size
        out = {}
        for cid in self.active_set:
            if cid < R:
                out[cid] = float(self.row_duals[cid])
            elif cid < R + n:
                out[cid] = float(self.lower_duals[cid - R])
            else:
                out[cid] = float(self.upper_duals[cid - R - n])
        return out


# ----------------------------------------------------------------- helpers

def _as_csr(Q, n):
    if sp.issparse(Q):
        Q = sp.csr_matrix(Q, dtype=float)
    else:
        Q = sp.csr_matrix(np.asarray(Q, float).reshape(n, n))
    if Q.shape != (n, n):
        raise ValueError(f"quadratic term has shape {Q.shape}, expected {(n, n)}")
    return Q


def check_psd(Q, tol: float = PSD_TOL):
    """Reject asymmetric or indefinite Hessians (dense check up to 2000 vars)."""
    n = Q.shape[0]
    Q = _as_csr(Q, n)
    asym = abs(Q - Q.T)
    if asym.nnz and asym.max() > SYM_TOL * max(1.0, abs(Q).max()):
        raise NonConvexError("quadratic term is not symmetric")
    if n == 0 or n > DENSE_PSD_LIMIT or Q.nnz == 0:
        return
    w, V = np.linalg.eigh(Q.toarray())
    if w[0] < -tol * max(1.0, abs(w).max()):
        raise NonConvexError(
            f"quadratic term has negative curvature {w[0]:.3e}", direction=V[:, 0], eigenvalue=w[0]
        )


def components(Q, a, n):
    """Label variables by connected block of the coupling graph."""
    Q = _as_csr(Q, n)
    adj = abs(Q)
    if a is not None and a.shape[0]:
        pat = abs(sp.csr_matrix(a))
        pat.data[:] = 1.0
        adj = adj + pat.T @ pat
    return connected_components(adj, directed=False)


# ----------------------------------------------------------------- presolve

@dataclass
class _Reduced:
    """``v = P u + q`` together with the rows that survive presolve."""

    P: sp.csr_matrix
    q: np.ndarray
    keep_vars: np.ndarray  # original index of each u variable
    kept_rows: np.ndarray  # original index of each surviving row
    def_rows: np.ndarray  # rows used to eliminate a variable
    def_vars: np.ndarray  # variable eliminated by the matching row
    def_coef: np.ndarray  # its coefficient in that row
    fixed: np.ndarray  # mask of fixed variables
    Q: sp.csr_matrix
    c: np.ndarray
    const: float
    a: sp.csr_matrix
    rhs: np.ndarray
    is_eq: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    bad_rows: list


def _find_definitions(a, rhs, is_eq, lo, hi, integer):
    n = a.shape[1]
    count = np.bincount(a.indices, minlength=n)
    defs = []
    taken = np.zeros(n, bool)
    for r in np.flatnonzero(is_eq):
        cols = a.indices[a.indptr[r] : a.indptr[r + 1]]
        vals = a.data[a.indptr[r] : a.indptr[r + 1]]
        for t in range(cols.size):
            d = cols[t]
            if count[d] != 1 or integer[d] or taken[d] or vals[t] == 0.0:
                continue
            e = -np.delete(vals, t) / vals[t]
            oc = np.delete(cols, t)
            base = rhs[r] / vals[t]
            with np.errstate(invalid="ignore"):
                lo_terms = np.where(e > 0, e * lo[oc], e * hi[oc])
                hi_terms = np.where(e > 0, e * hi[oc], e * lo[oc])
            emin = base + lo_terms.sum() if oc.size else base
            emax = base + hi_terms.sum() if oc.size else base
            ok_lo = not np.isfinite(lo[d]) or emin >= lo[d] - 1e-12 * (1 + abs(lo[d]))
            ok_hi = not np.isfinite(hi[d]) or emax <= hi[d] + 1e-12 * (1 + abs(hi[d]))
            if ok_lo and ok_hi:
                defs.append((r, d, vals[t]))
                taken[d] = True
                break
    return defs


def _presolve(Q, c, ls: LinearSystem, eliminate=True) -> _Reduced:
    n = c.size
    lo, hi = ls.lower, ls.upper
    fixed = lo == hi
    a = sp.csr_matrix(ls.a)
    xf = np.where(fixed, lo, 0.0)
    rhs = ls.rhs - a @ xf
    af = a[:, np.flatnonzero(~fixed)] if fixed.any() else a
    nfree_in_row = np.diff(af.indptr)
    empty = nfree_in_row == 0
    bad = []
    for r in np.flatnonzero(empty):
        viol = abs(rhs[r]) if ls.is_eq[r] else -rhs[r]
        if viol > 1e-9 * (1.0 + abs(ls.rhs[r])):
            bad.append(int(r))
    rows = np.flatnonzero(~empty)
    a_free = a[rows]
    # zero out fixed columns in surviving rows
    if fixed.any():
        mask = sp.diags((~fixed).astype(float))
        a_free = sp.csr_matrix(a_free @ mask)
        a_free.eliminate_zeros()
    defs = []
    if eliminate and rows.size:
        defs = _find_definitions(a_free, rhs[rows], ls.is_eq[rows], lo, hi, ls.integer)
    def_local = np.array([d[0] for d in defs], int)
    def_vars = np.array([d[1] for d in defs], int)
    def_coef = np.array([d[2] for d in defs], float)
    is_def = np.zeros(n, bool)
    is_def[def_vars] = True
    keep_vars = np.flatnonzero(~fixed & ~is_def)
    nu = keep_vars.size
    umap = np.full(n, -1)
    umap[keep_vars] = np.arange(nu)
    # build P and q
    pr, pc, pv = list(keep_vars), list(range(nu)), [1.0] * nu
    q = xf.copy()
    for loc, d, coef in zip(def_local, def_vars, def_coef):
        s, e = a_free.indptr[loc], a_free.indptr[loc + 1]
        cols, vals = a_free.indices[s:e], a_free.data[s:e]
        q[d] = rhs[rows[loc]] / coef
        for j, v in zip(cols, vals):
            if j != d:
                pr.append(d)
                pc.append(umap[j])
                pv.append(-v / coef)
    P = sp.csr_matrix((pv, (pr, pc)), shape=(n, nu))
    Qq = Q @ q
    Qr = sp.csr_matrix(P.T @ Q @ P)
    cr = P.T @ (c + Qq)
    const = 0.5 * float(q @ Qq) + float(c @ q)
    keep_local = np.setdiff1d(np.arange(rows.size), def_local)
    kept_rows = rows[keep_local]
    ar = sp.csr_matrix(a_free[keep_local][:, keep_vars]) if nu else sp.csr_matrix((keep_local.size, 0))
    return _Reduced(
        P=P, q=q, keep_vars=keep_vars, kept_rows=kept_rows,
        def_rows=rows[def_local] if def_local.size else np.zeros(0, int),
        def_vars=def_vars, def_coef=def_coef, fixed=fixed,
        Q=Qr, c=cr, const=const, a=ar, rhs=rhs[kept_rows], is_eq=ls.is_eq[kept_rows],
        lo=lo[keep_vars], hi=hi[keep_vars], bad_rows=bad,
    )


# ------------------------------------------------------------ block solves

@dataclass
class _Block:
    x: np.ndarray
    status: str
    working: list  # ids in the reduced numbering (rows, then R + j / R + nu + j)
    row_duals: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    iterations: int
    singular: bool = False
    certificate: dict | None = None


def _box_to_block(x, grad, state, status, iters, R, nu, idx=None):
    lower = np.where((state == 1) | (state == 3), grad, 0.0)
    upper = np.where(state == 2, -grad, 0.0)
    fixed_neg = (state == 3) & (grad < 0)
    upper = np.where(fixed_neg, -grad, upper)
    lower = np.where(fixed_neg, 0.0, lower)
    off = np.arange(x.size) if idx is None else idx
    working = [R + int(j) for j in off[(state == 1) | ((state == 3) & ~fixed_neg)]]
    working += [R + nu + int(j) for j in off[(state == 2) | fixed_neg]]
    st = {0: "optimal", 1: "iteration-limit"}.get(int(status), "iteration-limit")
    return x, lower, upper, working, st, int(iters)


def _solve_reduced(red: _Reduced, x0u, working0, max_iter, decompose) -> _Block:
    nu = red.keep_vars.size
    R = red.a.shape[0]
    if nu == 0:
        return _Block(np.zeros(0), "optimal", [], np.zeros(R), np.zeros(0), np.zeros(0), 0)
    if decompose:
        ncomp, labels = components(red.Q, red.a, nu)
    else:
        ncomp, labels = 1, np.zeros(nu, int)
    if ncomp == 1:
        return _solve_block(red.Q, red.c, red.a, red.rhs, red.is_eq, red.lo, red.hi, x0u,
                            working0, max_iter)
    x = np.zeros(nu)
    lower = np.zeros(nu)
    upper = np.zeros(nu)
    lam = np.zeros(R)
    working = []
    iters = 0
    singular = False
    status = "optimal"
    row_label = np.full(R, -1)
    if R:
        first = red.a.indices[red.a.indptr[:-1]]
        row_label = labels[first]
    has_rows = np.zeros(ncomp, bool)
    has_rows[row_label[row_label >= 0]] = True
    order = np.argsort(labels, kind="stable")
    sizes = np.bincount(labels, minlength=ncomp)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    local = np.empty(nu, int)
    local[order] = np.arange(nu) - starts[labels[order]]
    # bound-only blocks: batch by size
    wset = set(working0)
    box_comps = np.flatnonzero(~has_rows)
    if box_comps.size:
        coo = red.Q.tocoo()
        for size in np.unique(sizes[box_comps]):
            group = box_comps[sizes[box_comps] == size]
            gpos = np.full(ncomp, -1)
            gpos[group] = np.arange(group.size)
            B, k = group.size, int(size)
            if k > DENSE_BOX_LIMIT:
                for comp in group:
                    idx = order[starts[comp] : starts[comp + 1]]
                    res = box_qp(red.Q[idx][:, idx], red.c[idx], red.lo[idx], red.hi[idx],
                                 x0u[idx], max_iter)
                    xb, lb, ub, wb, st, it = _box_to_block(res.x, res.grad, res.state,
                                                           res.status, res.iterations, R, nu, idx)
                    x[idx], lower[idx], upper[idx] = xb, lb, ub
                    working += wb
                    iters += it
                    status = st if st != "optimal" else status
                continue
            G = np.zeros((B, k, k))
            sel = gpos[labels[coo.row]] >= 0
            np.add.at(G, (gpos[labels[coo.row[sel]]], local[coo.row[sel]], local[coo.col[sel]]),
                      coo.data[sel])
            vidx = np.stack([order[starts[cmp] : starts[cmp + 1]] for cmp in group])
            xb, gb, stb, itb = box_qp_batch(G, red.c[vidx], red.lo[vidx], red.hi[vidx],
                                            x0u[vidx], max_iter)
            # recover per-variable states from the solution
            lo_b, hi_b = red.lo[vidx], red.hi[vidx]
            state = np.zeros(vidx.shape, np.int8)
            state[(xb <= lo_b) & np.isfinite(lo_b)] = 1
            state[(xb >= hi_b) & np.isfinite(hi_b)] = 2
            state[lo_b == hi_b] = 3
            flat = vidx.ravel()
            xs, lb, ub, wb, _, _ = _box_to_block(xb.ravel(), gb.ravel(), state.ravel(), 0, 0,
                                                 R, nu, flat)
            x[flat], lower[flat], upper[flat] = xs, lb, ub
            working += wb
            iters += int(itb.sum())
            if np.any(stb != 0):
                status = "iteration-limit"
    for comp in np.flatnonzero(has_rows):
        idx = order[starts[comp] : starts[comp + 1]]
        ridx = np.flatnonzero(row_label == comp)
        rmap = {int(r): t for t, r in enumerate(ridx)}
        vmap = {int(v): t for t, v in enumerate(idx)}
        w0 = []
        for cid in wset:
            if cid < R:
                if cid in rmap:
                    w0.append(rmap[cid])
            else:
                j = (cid - R) % nu
                if j in vmap:
                    w0.append(len(ridx) + vmap[j] + (0 if cid < R + nu else idx.size))
        sub = _solve_block(red.Q[idx][:, idx], red.c[idx], red.a[ridx][:, idx], red.rhs[ridx],
                           red.is_eq[ridx], red.lo[idx], red.hi[idx], x0u[idx], w0, max_iter)
        if sub.status == "infeasible":
            cert = dict(sub.certificate or {})
            full = np.zeros(R)
            full[ridx] = cert.get("row_multipliers", np.zeros(ridx.size))
            cert["row_multipliers"] = full
            for key in ("lower_multipliers", "upper_multipliers"):
                fv = np.zeros(nu)
                fv[idx] = cert.get(key, np.zeros(idx.size))
                cert[key] = fv
            return _Block(x0u.copy(), "infeasible", [], np.zeros(R), np.zeros(nu), np.zeros(nu),
                          iters + sub.iterations, certificate=cert)
        x[idx] = sub.x
        lower[idx] = sub.lower_duals
        upper[idx] = sub.upper_duals
        lam[ridx] = sub.row_duals
        rr = len(ridx)
        for cid in sub.working:
            if cid < rr:
                working.append(int(ridx[cid]))
            elif cid < rr + idx.size:
                working.append(R + int(idx[cid - rr]))
            else:
                working.append(R + nu + int(idx[cid - rr - idx.size]))
        iters += sub.iterations
        singular |= sub.singular
        if sub.status != "optimal":
            status = sub.status
    return _Block(x, status, sorted(working), lam, lower, upper, iters, singular)


def _solve_block(Q, c, a, rhs, is_eq, lo, hi, x0, working0, max_iter) -> _Block:
    n = c.size
    R = a.shape[0]
    if R == 0:
        G = Q if n > DENSE_BOX_LIMIT else (Q.toarray() if sp.issparse(Q) else Q)
        res = box_qp(G, c, lo, hi, x0, max_iter)
        xb, lb, ub, wb, st, it = _box_to_block(res.x, res.grad, res.state, res.status,
                                               res.iterations, 0, n)
        return _Block(xb, st, wb, np.zeros(0), lb, ub, it)
    Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
    ad = a.toarray() if sp.issparse(a) else np.asarray(a)
    res = activeset.solve_dense(Qd, c, ad, rhs, is_eq, lo, hi, x0=x0, working=working0,
                                max_iter=max_iter)
    if res.status == "unbounded":
        # PSD Hessian with a descent ray: only possible with unbounded variables
        return _Block(res.x, "iteration-limit", res.working, res.row_duals, res.lower_duals,
                      res.upper_duals, res.iterations, res.singular,
                      certificate={"unbounded_ray": res.extra.get("ray")})
    return _Block(res.x, res.status, res.working, res.row_duals, res.lower_duals,
                  res.upper_duals, res.iterations + res.phase1_iterations, res.singular,
                  res.certificate)


# ------------------------------------------------------------------ driver

def solve_qp(problem: QpProblem, max_iter: int | None = None, decompose: bool = False,
             check_convexity: bool = True, eliminate: bool = True) -> QpSolution:
    """Solve a convex QP to a KKT point or certify infeasibility.

    ``decompose`` splits the problem into independent blocks first; it never
    changes the optimum.  Statuses: ``optimal``, ``infeasible`` (with a
    Farkas-style ``certificate``) or ``iteration-limit`` (best feasible
    iterate, when one was reached).
    """
    c = np.asarray(problem.linear, float).ravel()
    n = c.size
    ls = problem.system
    if ls.n_vars != n:
        raise ValueError(f"constraints have {ls.n_vars} variables, objective has {n}")
    Q = _as_csr(problem.quadratic, n)
    if check_convexity:
        free = ls.lower != ls.upper
        check_psd(Q[free][:, free] if not free.all() else Q)
    ws = problem.warm_start
    x0 = None if ws is None or ws.point is None else np.asarray(ws.point, float)
    working = () if ws is None else tuple(ws.active_set)
    return _solve_arrays(Q, c, ls, x0, working, max_iter, decompose, problem.constant, eliminate)


def _solve_arrays(Q, c, ls: LinearSystem, x0=None, working=(), max_iter=None, decompose=False,
                  constant=0.0, eliminate=True) -> QpSolution:
    n = c.size
    R = ls.n_rows
    lo, hi = ls.lower, ls.upper
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        return _infeasible(n, R, {"empty_bounds": bad.tolist()}, x0, lo, hi)
    red = _presolve(Q, c, ls, eliminate)
    if red.bad_rows:
        return _infeasible(n, R, {"violated_fixed_rows": red.bad_rows}, x0, lo, hi)
    nu = red.keep_vars.size
    if x0 is None:
        x0 = np.zeros(n)
    x0u = np.clip(np.where(np.isfinite(x0), x0, 0.0)[red.keep_vars], red.lo, red.hi)
    # translate warm-start ids into the reduced numbering
    Rr = red.a.shape[0]
    row_pos = np.full(R, -1)
    row_pos[red.kept_rows] = np.arange(Rr)
    umap = np.full(n, -1)
    umap[red.keep_vars] = np.arange(nu)
    w0 = []
    for cid in working:
        if cid < R:
            if row_pos[cid] >= 0:
                w0.append(int(row_pos[cid]))
        elif cid < R + 2 * n:
            j = (cid - R) % n
            if umap[j] >= 0:
                w0.append(Rr + int(umap[j]) + (0 if cid < R + n else nu))
    if max_iter is None:
        max_iter = 20 * (nu + Rr) + 100
    blk = _solve_reduced(red, x0u, w0, max_iter, decompose)
    if blk.status == "infeasible":
        cert = dict(blk.certificate or {})
        full = np.zeros(R)
        full[red.kept_rows] = cert.get("row_multipliers", np.zeros(Rr))
        cert["row_multipliers"] = full
        for key in ("lower_multipliers", "upper_multipliers"):
            fv = np.zeros(n)
            fv[red.keep_vars] = cert.get(key, np.zeros(nu))
            cert[key] = fv
        cert["rhs_shift"] = "fixed variables substituted into rows"
        return _infeasible(n, R, cert, x0, lo, hi, blk.iterations)
    x = red.P @ blk.x + red.q
    x[red.fixed] = lo[red.fixed]
    g = Q @ x + c
    lam = np.zeros(R)
    lam[red.kept_rows] = blk.row_duals
    if red.def_rows.size:
        lam[red.def_rows] = -g[red.def_vars] / red.def_coef
    a = sp.csr_matrix(ls.a)
    s = g + a.T @ lam if R else g
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[red.keep_vars] = blk.lower_duals
    upper[red.keep_vars] = blk.upper_duals
    fx = np.flatnonzero(red.fixed)
    lower[fx] = np.maximum(s[fx], 0.0)
    upper[fx] = np.maximum(-s[fx], 0.0)
    active = []
    for cid in blk.working:
        if cid < Rr:
            active.append(int(red.kept_rows[cid]))
        else:
            j = (cid - Rr) % nu
            active.append(R + int(red.keep_vars[j]) + (0 if cid < Rr + nu else n))
    active += [int(r) for r in red.def_rows]
    active += [R + int(j) if s[j] >= 0 else R + n + int(j) for j in fx]
    obj = 0.5 * float(x @ (Q @ x)) + float(c @ x) + constant
    meta = {"reduced_size": int(nu), "eliminated": int(red.def_vars.size),
            "fixed": int(red.fixed.sum())}
    if blk.singular:
        meta["singular"] = True
    if blk.certificate:
        meta.update(blk.certificate)
    return QpSolution(x, obj, blk.status, tuple(sorted(active)), lam, lower, upper,
                      blk.iterations, None, meta)


def _infeasible(n, R, cert, x0, lo, hi, iters=0):
    x = np.zeros(n) if x0 is None else np.asarray(x0, float).copy()
    x = np.where(np.isfinite(x), x, 0.0)
    return QpSolution(x, np.inf, "infeasible", (), np.zeros(R), np.zeros(n), np.zeros(n), iters,
                      cert, {})


def kkt_residuals(problem: QpProblem, sol: QpSolution) -> dict:
    """Stationarity, primal, dual and complementarity residuals (max-abs)."""
    c = np.asarray(problem.linear, float).ravel()
    n = c.size
    ls = problem.system
    Q = _as_csr(problem.quadratic, n)
    x = sol.point
    g = Q @ x + c
    a = sp.csr_matrix(ls.a)
    lam = sol.row_duals
    stat = g + (a.T @ lam if ls.n_rows else 0.0) - sol.lower_duals + sol.upper_duals
    act = a @ x - ls.rhs if ls.n_rows else np.zeros(0)
    prim = np.concatenate([
        np.where(ls.is_eq, np.abs(act), np.maximum(act, 0.0)),
        np.maximum(ls.lower - x, 0.0),
        np.maximum(x - ls.upper, 0.0),
    ])
    dual = np.concatenate([
        np.where(ls.is_eq, 0.0, np.maximum(-lam, 0.0)),
        np.maximum(-sol.lower_duals, 0.0),
        np.maximum(-sol.upper_duals, 0.0),
    ])
    with np.errstate(invalid="ignore"):
        comp = np.concatenate([
            np.where(ls.is_eq, 0.0, np.abs(lam * act)),
            np.where(np.isfinite(ls.lower), np.abs(sol.lower_duals * (x - ls.lower)), 0.0),
            np.where(np.isfinite(ls.upper), np.abs(sol.upper_duals * (ls.upper - x)), 0.0),
        ])

    def mx(v):
        return float(np.abs(v).max()) if v.size else 0.0

    return {"stationarity": mx(stat), "primal": mx(prim), "dual": mx(dual),
            "complementarity": mx(comp)}


# ------------------------------------------------------- factor objectives

def factor_objective(a, fixed, which: str, dims: Dims):
    """Quadratic form of ``||A - W H||_F^2`` in the free factor.

    Returns ``(Q, c, const)`` over the full variable vector of ``dims`` so
    that ``1/2 v'Qv + c'v + const`` equals the squared residual.  Solving for
    H gives ``Q = I_n (x) 2 W'W``; solving for W gives ``Q = 2 HH' (x) I_m``.
    """
    a = as_matrix(a, "A")
    fixed = as_matrix(fixed, "fixed factor")
    which = which.upper()[0]
    N = dims.size
    m, k, n = dims.m, dims.k, dims.n
    if a.shape != (m, n):
        raise ValueError(f"A has shape {a.shape}, expected {(m, n)}")
    if which == "H":
        if fixed.shape != (m, k):
            raise ValueError(f"W has shape {fixed.shape}, expected {(m, k)}")
        blockq = sp.kron(sp.identity(n), sp.csr_matrix(2.0 * fixed.T @ fixed))
        lin = -2.0 * (fixed.T @ a).T.ravel()
        off = dims.h_offset
    elif which == "W":
        if fixed.shape != (k, n):
            raise ValueError(f"H has shape {fixed.shape}, expected {(k, n)}")
        blockq = sp.kron(sp.csr_matrix(2.0 * fixed @ fixed.T), sp.identity(m))
        lin = -2.0 * (a @ fixed.T).T.ravel()
        off = 0
    else:
        raise ValueError(f"which must be 'W' or 'H', got {which!r}")
    size = blockq.shape[0]
    Q = sp.block_diag([sp.csr_matrix((off, off)), blockq, sp.csr_matrix((N - off - size,) * 2)])
    c = np.zeros(N)
    c[off : off + size] = lin
    return sp.csr_matrix(Q), c, float(np.sum(a * a))


def l1_step_system(sys: ConstraintSystem, a, fixed, which: str):
    """Entry-wise L1 half-step as a linear program.

    Fixes ``which``'s complement, appends residual variables ``r+``/``r-``
    (blocks ``l1_pos``/``l1_neg``, shape of A) with rows
    ``(W H)_ij + r+_ij - r-_ij = A_ij`` and returns ``(system, c)`` with
    ``c`` summing the residual variables.
    """
    a = as_matrix(a, "A")
    d = sys.dims
    solve_for = which.upper()[0]
    fix_kind = "H" if solve_for == "W" else "W"
    fixed = as_matrix(fixed, "fixed factor")
    out = fix_factor(sys, fix_kind, fixed)
    out, pos = out.add_aux("l1_pos", a.shape, lower=0.0)
    out, neg = out.add_aux("l1_neg", a.shape, lower=0.0)
    rows = []
    for i in range(d.m):
        for j in range(d.n):
            if solve_for == "H":
                terms = [(H(s, j), fixed[i, s]) for s in range(d.k) if fixed[i, s] != 0.0]
            else:
                terms = [(W(i, s), fixed[s, j]) for s in range(d.k) if fixed[s, j] != 0.0]
            terms += [(pos.ref(i, j), 1.0), (neg.ref(i, j), -1.0)]
            rows.append(LinearRow.make(terms, "=", a[i, j]))
    out = out.add_rows(rows)
    c = np.zeros(out.dims.size)
    c[out.dims.flat_index(pos.ref(0, 0)) : out.dims.flat_index(pos.ref(0, 0)) + 2 * a.size] = 1.0
    return out, c


def solve_nnls_step(a, fixed, which: str, extra: ConstraintSystem | None = None,
                    warm_start=None) -> np.ndarray:
    """Minimize ``||A - W H||_F`` over one factor with the other held fixed.

    ``which`` is ``'W'`` or ``'H'`` (the factor solved for).  ``extra``
    defaults to non-negativity.  Columns (or rows) that no constraint row
    couples are solved as independent blocks.
    """
    a = as_matrix(a, "A")
    fixed = as_matrix(fixed, "fixed factor")
    which = which.upper()[0]
    m, n = a.shape
    k = fixed.shape[1] if which == "H" else fixed.shape[0]
    if which == "H" and fixed.shape[0] != m:
        raise ValueError(f"W has {fixed.shape[0]} rows, A has {m}")
    if which == "W" and fixed.shape[1] != n:
        raise ValueError(f"H has {fixed.shape[1]} columns, A has {n}")
    sys = extra if extra is not None else build_nonnegativity(Dims(m, k, n))
    d = sys.dims
    if (d.m, d.k, d.n) != (m, k, n):
        raise ValueError(f"constraint dims {(d.m, d.k, d.n)} do not match {(m, k, n)}")
    fix_kind = "W" if which == "H" else "H"
    fsys = fix_factor(sys, fix_kind, fixed)
    if fsys.infeasible_rows:
        raise ValueError(f"fixed factor violates rows {list(fsys.infeasible_rows)}")
    Q, c, const = factor_objective(a, fixed, which, d)
    x0 = None
    if warm_start is not None:
        w0 = np.zeros((m, k)) if which == "H" else np.asarray(warm_start, float)
        h0 = np.asarray(warm_start, float) if which == "H" else np.zeros((k, n))
        x0 = d.flatten(fixed if which == "H" else w0, h0 if which == "H" else fixed)
    sol = solve_qp(QpProblem(Q, c, fsys, QpWarmStart(x0), const), decompose=True)
    if sol.status != "optimal":
        raise RuntimeError(f"factor step QP ended with status {sol.status}")
    w, h, _, _ = d.split(sol.point)
    return h if which == "H" else w
