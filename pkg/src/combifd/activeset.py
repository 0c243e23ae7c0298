"""Dense primal active-set method for convex QPs with general linear rows.

Solves

    minimize    1/2 x'Qx + c'x
    subject to  A[r] x <= rhs[r]   (inequality rows)
                A[r] x == rhs[r]   (equality rows)
                lo <= x <= hi

Constraint ids: rows are ``0..R-1``, lower bounds ``R + j``, upper bounds
``R + n + j``.  The working set is kept linearly independent; steps are
computed in the null space of the working rows restricted to the variables
not held at a bound.  Zero-curvature directions in that subspace are
followed as descent rays until a constraint blocks, so singular Hessians
(including Q = 0) need no regularization.  A phase-1 linear program with
artificial variables supplies a feasible start or an infeasibility
certificate.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr_delete, qr_insert, solve_triangular

__all__ = ["ActiveSetResult", "solve_dense"]


@dataclass
class ActiveSetResult:
    x: np.ndarray
    status: str
    working: list
    row_duals: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    iterations: int
    singular: bool = False
    certificate: dict | None = None
    phase1_iterations: int = 0
    extra: dict = field(default_factory=dict)


def _active_mask(A, rhs, is_eq, lo, hi, x):
    act = A @ x - rhs if A.shape[0] else np.zeros(0)
    tol_r = 1e-9 * (1.0 + np.abs(rhs))
    row_act = is_eq | (np.abs(act) <= tol_r)
    at_lo = np.isfinite(lo) & (np.abs(x - lo) <= 1e-12 * (1.0 + np.abs(lo)))
    at_hi = np.isfinite(hi) & (np.abs(x - hi) <= 1e-12 * (1.0 + np.abs(hi)))
    return row_act, at_lo, at_hi


class _Basis:
    """Independence test for a growing set of rows and variable bounds.

    Rows and bounds are independent exactly when the rows, restricted to the
    variables without a bound, are.  The restricted rows are kept in ``rows``
    together with the inverse of their Gram matrix; a bound on ``j`` is a
    rank-one downdate of the Gram matrix, free when no row touches ``j``.
    """

    TOL = 1e-12

    def __init__(self, n):
        self.n = n
        self.rows = np.zeros((min(n, 16), n))
        self.ginv = np.zeros((0, 0))
        self.size = 0
        self.bounded = np.zeros(n, bool)
        self.nbound = 0

    def add_row(self, v) -> bool:
        vf = np.where(self.bounded, 0.0, v)
        gam = float(vf @ vf)
        if gam == 0.0 or self.size + self.nbound >= self.n:
            return False
        r = self.size
        u = self.rows[:r] @ vf
        w = self.ginv @ u
        sch = gam - float(u @ w)
        if sch <= self.TOL * gam:
            return False
        g = np.empty((r + 1, r + 1))
        g[:r, :r] = self.ginv + np.outer(w, w) / sch
        g[:r, r] = g[r, :r] = -w / sch
        g[r, r] = 1.0 / sch
        self.ginv = g
        if r == self.rows.shape[0]:
            grown = np.zeros((min(self.n, 2 * r), self.n))
            grown[:r] = self.rows
            self.rows = grown
        self.rows[r] = vf
        self.size += 1
        return True

    def touched(self, idx):
        return self.rows[: self.size][:, idx].any(axis=0)

    def add_bound(self, j) -> bool:
        if self.bounded[j] or self.size + self.nbound >= self.n:
            return False
        a = self.rows[: self.size, j]
        if a.any():
            w = self.ginv @ a
            t = 1.0 - float(a @ w)
            if t <= self.TOL:
                return False
            self.ginv = self.ginv + np.outer(w, w) / t
            self.rows[: self.size, j] = 0.0
        self.bounded[j] = True
        self.nbound += 1
        return True


def _build_working(A, rhs, is_eq, lo, hi, x, priority=()):
    """Pick an independent working set of constraints active at ``x``.

    Equality rows go first so they are never displaced by bounds; then the
    ``priority`` ids (warm start), then remaining active bounds and rows.
    """
    R, n = A.shape
    row_act, at_lo, at_hi = _active_mask(A, rhs, is_eq, lo, hi, x)
    basis = _Basis(n)
    working = []
    in_rows = np.zeros(R, bool)
    bound_state = np.zeros(n, np.int8)

    def active(cid):
        if cid < R:
            return bool(row_act[cid])
        j = (cid - R) % n
        return bool(at_lo[j]) if cid < R + n else bool(at_hi[j])

    def add(cid):
        if cid < R:
            if not in_rows[cid] and basis.add_row(A[cid]):
                in_rows[cid] = True
                working.append(cid)
            return
        j = (cid - R) % n
        if not bound_state[j] and basis.add_bound(j):
            working.append(cid)
            bound_state[j] = 1 if cid < R + n else 2

    def add_bounds(js, state, offset):
        js = js[bound_state[js] == 0]
        if js.size == 0:
            return
        # bounds on variables no working row touches are always independent
        quiet = ~basis.touched(js)
        q = js[quiet]
        basis.bounded[q] = True
        basis.nbound += q.size
        bound_state[q] = state
        working.extend((offset + q).tolist())
        for j in js[~quiet]:
            add(offset + int(j))

    for r in np.flatnonzero(is_eq):
        add(int(r))
    for cid in priority:
        if 0 <= cid < R + 2 * n and active(cid):
            add(int(cid))
    add_bounds(np.flatnonzero(at_lo), 1, R)
    add_bounds(np.flatnonzero(at_hi), 2, R + n)
    for r in np.flatnonzero(row_act & ~is_eq):
        add(int(r))
    return working, bound_state


def _independent(cid, A, F, R, n, Q1):
    """Whether constraint ``cid`` restricted to the free set leaves span(Q1)."""
    if cid < R:
        v = A[cid, F]
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return False
        res = v - Q1 @ (Q1.T @ v)
        return bool(np.linalg.norm(res) > 1e-7 * nv)
    pos = int(np.searchsorted(F, (cid - R) % n))
    return bool(1.0 - float(Q1[pos] @ Q1[pos]) > 1e-12)


class _Factor:
    """QR factors of the working rows restricted to the free variables.

    ``A[rows][:, free].T = Qm @ Rm`` with ``Qm`` square, so the trailing
    columns of ``Qm`` span the null space.  Bounds entering or leaving delete
    or insert a row; working rows entering or leaving a column.  The factors
    are recomputed from scratch every ``REFRESH`` updates.
    """

    REFRESH = 100

    def __init__(self, A, free, rows):
        self.A = A
        self.free = list(free)
        self.rows = list(rows)
        self.refresh()

    def refresh(self):
        f, r = len(self.free), len(self.rows)
        self.updates = 0
        if f and r:
            self.Qm, self.Rm = np.linalg.qr(self.A[np.ix_(self.rows, self.free)].T, mode="complete")
        else:
            self.Qm, self.Rm = np.eye(f), np.zeros((f, r))

    def _touch(self):
        self.updates += 1
        if self.updates >= self.REFRESH or not self.free:
            self.refresh()

    def add_row(self, cid):
        self.rows.append(cid)
        if self.free:
            col = self.A[cid, self.free]
            self.Qm, self.Rm = qr_insert(self.Qm, self.Rm, col, len(self.rows) - 1, which="col")
        self._touch()

    def drop_row(self, cid):
        k = self.rows.index(cid)
        self.rows.pop(k)
        if self.free:
            self.Qm, self.Rm = qr_delete(self.Qm, self.Rm, k, which="col")
        self._touch()

    def fix_var(self, j):
        k = bisect.bisect_left(self.free, j)
        self.free.pop(k)
        if self.free and self.Qm.shape[0] > len(self.rows):
            self.Qm, self.Rm = qr_delete(self.Qm, self.Rm, k, which="row")
            self._touch()
        else:
            self.refresh()

    def free_var(self, j):
        k = bisect.bisect_left(self.free, j)
        self.free.insert(k, j)
        if len(self.free) > 1:
            u = self.A[self.rows, j] if self.rows else np.zeros(0)
            self.Qm, self.Rm = qr_insert(self.Qm, self.Rm, u, k, which="row")
            self._touch()
        else:
            self.refresh()


def _phase2(Q, c, A, rhs, is_eq, lo, hi, x, priority, max_iter):
    R, n = A.shape
    x = x.copy()
    working, bound_state = _build_working(A, rhs, is_eq, lo, hi, x, priority)
    for cid in working:
        if cid >= R:
            j = (cid - R) % n
            x[j] = lo[j] if cid < R + n else hi[j]
    fac = _Factor(A, np.flatnonzero(bound_state == 0), [cid for cid in working if cid < R])
    rows_w = fac.rows
    qrow = np.any(Q != 0.0, axis=1)
    amax = np.abs(A).max(axis=1) if R else np.zeros(0)
    qs = float(np.abs(Q).max()) if Q.size else 0.0
    cs = float(np.abs(c).max()) if c.size else 0.0
    singular = False
    degenerate = False
    ineq = ~is_eq
    it = 0
    while it < max_iter:
        it += 1
        xs = float(np.abs(x).max()) if n else 0.0
        scale = max(1.0, cs, qs * max(1.0, xs))
        tol_g = 1e-11 * scale
        F = np.asarray(fac.free, dtype=int)
        g = Q @ x + c
        gF = g[F]
        f = F.size
        r = len(rows_w)
        qmat, rr = fac.Qm, fac.Rm
        Z = qmat[:, r:]
        gz = Z.T @ gF
        stationary = gz.size == 0 or float(np.abs(gz).max()) <= tol_g
        p = None
        qpos = np.flatnonzero(qrow[F])
        if not stationary:
            if qpos.size == 0:
                # linear objective on the free set: steepest descent ray
                d = -gz
                alpha_full = np.inf
                singular = singular or bool(f > r)
            else:
                Zq = Z[qpos]
                Hz = Zq.T @ (Q[np.ix_(F[qpos], F[qpos])] @ Zq)
                w, V = np.linalg.eigh(Hz)
                thr = 1e-10 * max(1.0, float(np.abs(w).max()))
                gv = V.T @ gz
                zero = w <= thr
                if zero.any():
                    singular = True
                zdesc = zero & (np.abs(gv) > tol_g)
                if zdesc.any():
                    d = -(V[:, zdesc] @ gv[zdesc])
                    alpha_full = np.inf
                else:
                    pos = ~zero
                    d = -(V[:, pos] @ (gv[pos] / w[pos]))
                    alpha_full = 1.0
            pF = Z @ d
            if float(np.abs(pF).max()) <= 1e-13 * (1.0 + xs):
                stationary = True
            else:
                p = np.zeros(n)
                p[F] = pF
        if stationary:
            lam = np.zeros(R)
            if r:
                # a working row is independent of the bound set, so f > 0 here
                diag = np.abs(np.diag(rr[:r, :r]))
                weak = int(np.argmin(diag))
                if diag[weak] <= 1e-10 * diag.max():
                    # round-off let a dependent row in; it stays active, just unlisted
                    cid = rows_w[weak]
                    fac.drop_row(cid)
                    working.remove(cid)
                    continue
                lam[rows_w] = solve_triangular(rr[:r, :r], -(qmat[:, :r].T @ gF))
            resid = g + A.T @ lam if R else g.copy()
            lower_d = np.where(bound_state == 1, resid, 0.0)
            upper_d = np.where(bound_state == 2, -resid, 0.0)
            tol_d = 1e-10 * scale
            neg = []
            for cid in working:
                if cid < R:
                    if ineq[cid] and lam[cid] < -tol_d:
                        neg.append((lam[cid], cid))
                else:
                    j = (cid - R) % n
                    val = lower_d[j] if cid < R + n else upper_d[j]
                    if val < -tol_d:
                        neg.append((val, cid))
            if not neg:
                return ActiveSetResult(x, "optimal", sorted(working), lam, lower_d, upper_d,
                                       it, singular)
            drop = min(neg, key=lambda t: t[1]) if degenerate else min(neg)
            cid = drop[1]
            working.remove(cid)
            if cid < R:
                fac.drop_row(cid)
            else:
                j = (cid - R) % n
                bound_state[j] = 0
                fac.free_var(j)
            continue
        # ratio test; ties go to the least id
        pscale = float(np.abs(p).max())
        ratios, ids = [], []
        if R:
            Ap = A @ p
            in_w = np.zeros(R, bool)
            in_w[rows_w] = True
            cand = np.flatnonzero(ineq & ~in_w & (Ap > 1e-14 * pscale * (1.0 + amax)))
            ratios.append(np.maximum(rhs[cand] - A[cand] @ x, 0.0) / Ap[cand])
            ids.append(cand)
        dec = F[p[F] < -1e-14 * pscale]
        dec = dec[np.isfinite(lo[dec])]
        ratios.append(np.maximum(x[dec] - lo[dec], 0.0) / -p[dec])
        ids.append(R + dec)
        inc = F[p[F] > 1e-14 * pscale]
        inc = inc[np.isfinite(hi[inc])]
        ratios.append(np.maximum(hi[inc] - x[inc], 0.0) / p[inc])
        ids.append(R + n + inc)
        ratios = np.concatenate(ratios)
        ids = np.concatenate(ids)
        alpha = alpha_full
        block = None
        Q1 = qmat[:, :r] if r else None
        for i in np.lexsort((ids, ratios)):
            if ratios[i] >= alpha_full:
                break
            cid = int(ids[i])
            if Q1 is not None and not _independent(cid, A, F, R, n, Q1):
                # only round-off makes it block: its normal lies in the working span
                continue
            alpha, block = float(ratios[i]), cid
            break
        if not np.isfinite(alpha):
            return ActiveSetResult(x, "unbounded", sorted(working), np.zeros(R), np.zeros(n),
                                   np.zeros(n), it, singular, extra={"ray": p})
        x = x + alpha * p
        degenerate = alpha * pscale <= 1e-14 * (1.0 + float(np.abs(x).max()))
        if block is not None:
            working.append(block)
            if block < R:
                fac.add_row(block)
            else:
                j = (block - R) % n
                if block < R + n:
                    bound_state[j] = 1
                    x[j] = lo[j]
                else:
                    bound_state[j] = 2
                    x[j] = hi[j]
                fac.fix_var(j)
    R_ = A.shape[0]
    return ActiveSetResult(x, "iteration-limit", sorted(working), np.zeros(R_), np.zeros(n),
                           np.zeros(n), it, singular)


def _feasible(A, rhs, is_eq, lo, hi, x, tol):
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        return False
    if A.shape[0] == 0:
        return True
    act = A @ x - rhs
    return bool(np.all(np.where(is_eq, np.abs(act), act) <= tol * (1.0 + np.abs(rhs))))


def _phase1(A, rhs, is_eq, lo, hi, x0, max_iter):
    """Minimize total artificial slack from the clipped start ``x0``."""
    R, n = A.shape
    x = np.clip(x0, lo, hi)
    act = A @ x - rhs
    tol = 1e-12 * (1.0 + np.abs(rhs))
    need = np.flatnonzero(np.where(is_eq, np.abs(act) > tol, act > tol))
    t = need.size
    if t == 0:
        return x, [], 0, None
    S = np.zeros((R, t))
    S[need, np.arange(t)] = np.where(is_eq[need], -np.sign(act[need]), -1.0)
    A_aug = np.hstack([A, S])
    lo_aug = np.concatenate([lo, np.zeros(t)])
    hi_aug = np.concatenate([hi, np.full(t, np.inf)])
    c_aug = np.concatenate([np.zeros(n), np.ones(t)])
    x_aug = np.concatenate([x, np.abs(act[need])])
    Q_aug = np.zeros((n + t, n + t))
    res = _phase2(Q_aug, c_aug, A_aug, rhs, is_eq, lo_aug, hi_aug, x_aug, (), max_iter)
    value = float(res.x[n:].sum())
    scale = max(1.0, float(np.abs(rhs).max()) if R else 1.0, float(np.abs(A).max()) if A.size else 1.0)
    # map working ids of the augmented problem back to the original numbering
    N = n + t
    prio = []
    for cid in res.working:
        if cid < R:
            prio.append(cid)
        else:
            j = (cid - R) % N
            if j < n:
                prio.append(R + j if cid < R + N else R + n + j)
    if res.status != "optimal" or value > 1e-9 * scale:
        cert = {
            "row_multipliers": res.row_duals,
            "lower_multipliers": res.lower_duals[:n],
            "upper_multipliers": res.upper_duals[:n],
            "infeasibility": value,
        }
        if res.status != "optimal":
            cert["phase1_status"] = res.status
        return None, prio, res.iterations, cert
    return res.x[:n], prio, res.iterations, None


def solve_dense(Q, c, A, rhs, is_eq, lo, hi, x0=None, working=(), max_iter=None):
    """Run phase 1 (if the start is infeasible) and phase 2.  Dense inputs only."""
    Q = np.asarray(Q, float)
    c = np.asarray(c, float)
    n = c.size
    A = np.asarray(A, float).reshape(-1, n)
    rhs = np.asarray(rhs, float)
    is_eq = np.asarray(is_eq, bool)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    R = A.shape[0]
    if max_iter is None:
        max_iter = 20 * (n + R) + 100
    if x0 is None:
        x0 = np.zeros(n)
    x0 = np.where(np.isfinite(x0), x0, 0.0)
    p1_iters = 0
    if _feasible(A, rhs, is_eq, lo, hi, x0, 1e-9):
        x = np.clip(x0, lo, hi)
        prio = tuple(working)
    else:
        x, prio1, p1_iters, cert = _phase1(A, rhs, is_eq, lo, hi, x0, max_iter)
        if x is None:
            return ActiveSetResult(np.clip(x0, lo, hi), "infeasible", [], np.zeros(R), np.zeros(n),
                                   np.zeros(n), p1_iters, certificate=cert,
                                   phase1_iterations=p1_iters)
        prio = tuple(working) + tuple(prio1)
    res = _phase2(Q, c, A, rhs, is_eq, lo, hi, x, prio, max_iter)
    res.phase1_iterations = p1_iters
    return res
