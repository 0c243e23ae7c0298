"""Branch-and-bound for convex QPs with binary variables.

Relaxations are solved by :mod:`combifd.qp` with the binaries relaxed to
[0, 1].  Nodes are explored best-bound first (or depth first), branching on
the most fractional binary with ties to the lowest index and the 0-branch
first.  Each child is warm-started from its parent's point and active set.

Two exact reductions keep the phase-mapping instances tractable:

* the problem is split into independent blocks (no shared Hessian entry or
  row) and each block is searched separately;
* rows flagged ``lazy`` start out inactive.  After each solve, groups of lazy
  rows linked by variables that occur only in lazy rows are repaired by
  enumerating those variables; groups that cannot be repaired are activated
  and the affected blocks are re-solved.  The final point satisfies every
  row, and since it is optimal for a relaxation it is optimal overall.
"""
from __future__ import annotations

import dataclasses
import heapq
import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from combifd.constraints import ConstraintSystem, InfeasibleSystemError, LinearSystem
from combifd.qp import QpProblem, _as_csr, _solve_arrays, check_psd

__all__ = [
    "NoIncumbentError",
    "MiqpParams",
    "BnBNode",
    "Incumbent",
    "MiqpResult",
    "solve_miqp",
    "find_feasible",
]

INT_TOL = 1e-6
FEAS_TOL = 1e-6
LAZY_ENUM_LIMIT = 6


class NoIncumbentError(RuntimeError):
    """The search budget ran out before any integral feasible point was found."""


@dataclass
class MiqpParams:
    """Search budget and mode.

    ``node_limit`` and ``rel_gap`` apply to each independent block.
    ``improve_target`` stops the search as soon as the incumbent objective
    drops below it.  ``log`` may be a path or a writable text stream for a
    line-delimited JSON node log.
    """

    node_limit: int = 1_000_000
    rel_gap: float = 1e-6
    abs_gap: float = 1e-9
    improve_target: float | None = None
    time_limit: float = float("inf")
    deterministic: bool = True
    node_selection: str = "best-bound"
    heuristic: bool = True
    decompose: bool = True
    log: object = None
    record_nodes: bool = False

    def __post_init__(self):
        if self.node_limit < 1:
            raise ValueError("node_limit must be at least 1")
        if self.rel_gap < 0:
            raise ValueError("rel_gap must be non-negative")
        if self.node_selection not in ("best-bound", "depth-first"):
            raise ValueError(f"unknown node selection {self.node_selection!r}")


@dataclass
class BnBNode:
    fixed: dict
    relaxation_bound: float
    depth: int
    warm_start: tuple = ()
    point: np.ndarray | None = None
    id: int = 0
    parent: int = -1


@dataclass
class Incumbent:
    solution: np.ndarray
    objective: float
    integral: bool = True


@dataclass
class MiqpResult:
    incumbent: Incumbent | None
    status: str
    bound: float
    nodes: int
    certificate: dict | None = None
    log: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        if self.incumbent is None:
            return float("inf")
        f = self.incumbent.objective
        return max(0.0, f - self.bound) / max(1.0, abs(f))

    @property
    def point(self):
        return None if self.incumbent is None else self.incumbent.solution

    @property
    def objective(self):
        return np.inf if self.incumbent is None else self.incumbent.objective


# ------------------------------------------------------------------ search

class _Search:
    """Branch-and-bound over one block (dense indices local to the block)."""

    def __init__(self, Q, c, ls: LinearSystem, params: MiqpParams, deadline, log, start=None,
                 target=None, guess=None):
        self.Q = Q
        self.c = c
        self.ls = ls
        self.params = params
        self.deadline = deadline
        self.log = log
        self.target = target
        self.bins = np.flatnonzero(ls.integer)
        self.best_x = None
        self.best_f = np.inf
        self.nodes = 0
        self.seq = itertools.count()
        self.guess = guess
        if start is not None:
            self._offer(start, polish=False)

    def objective(self, x):
        return 0.5 * float(x @ (self.Q @ x)) + float(self.c @ x)

    def _relax(self, lo, hi, x0, working):
        ls = dataclasses.replace(self.ls, lower=lo, upper=hi)
        return _solve_arrays(self.Q, self.c, ls, x0, working)

    def _feasible(self, x):
        ls = self.ls
        if np.any(x < ls.lower - FEAS_TOL) or np.any(x > ls.upper + FEAS_TOL):
            return False
        if ls.n_rows:
            act = ls.a @ x - ls.rhs
            if np.any(np.where(ls.is_eq, np.abs(act), act) > FEAS_TOL):
                return False
        b = x[self.bins]
        return bool(np.all(np.abs(b - np.round(b)) <= INT_TOL))

    def _offer(self, x, polish=True):
        """Take ``x`` as incumbent if it is feasible and better."""
        x = np.asarray(x, float).copy()
        if polish and self.bins.size:
            rb = np.round(x[self.bins])
            lo = self.ls.lower.copy()
            hi = self.ls.upper.copy()
            lo[self.bins] = rb
            hi[self.bins] = rb
            if np.any(lo > hi):
                return False
            sol = self._relax(lo, hi, x, ())
            if sol.status != "optimal":
                return False
            x = sol.point
        if self.bins.size:
            x[self.bins] = np.round(x[self.bins])
        if not self._feasible(x):
            return False
        f = self.objective(x)
        if f < self.best_f:
            self.best_f, self.best_x = f, x
            return True
        return False

    def _fractional(self, x):
        b = x[self.bins]
        frac = np.abs(b - np.round(b))
        return frac

    def _dive(self, sol, lo, hi):
        lo = lo.copy()
        hi = hi.copy()
        x = sol.point
        working = sol.active_set
        for _ in range(self.bins.size + 1):
            frac = self._fractional(x)
            if np.all(frac <= INT_TOL):
                return self._offer(x)
            free = (lo[self.bins] != hi[self.bins]) & (frac > INT_TOL)
            if not free.any():
                return False
            cand = np.flatnonzero(free)
            j = cand[np.argmin(frac[cand])]
            v = np.round(x[self.bins[j]])
            lo[self.bins[j]] = hi[self.bins[j]] = v
            sol = self._relax(lo, hi, x, working)
            if sol.status != "optimal":
                return False
            x, working = sol.point, sol.active_set
            if sol.objective >= self.best_f:
                return False
        return False

    def _emit(self, rec):
        if self.log is not None:
            self.log.append(rec)

    def _done(self):
        return self.target is not None and self.best_f < self.target

    def _gap_closed(self, bound):
        if not np.isfinite(self.best_f):
            return False
        return self.best_f - bound <= max(self.params.abs_gap,
                                          self.params.rel_gap * max(1.0, abs(self.best_f)))

    def run(self):
        p = self.params
        lo0, hi0 = self.ls.lower.copy(), self.ls.upper.copy()
        x0 = self.best_x if self.best_x is not None else self.guess
        root = self._relax(lo0, hi0, x0, ())
        self.nodes = 1
        self._emit({"node": 0, "depth": 0, "bound": _jnum(root.objective), "status": root.status,
                    "parent_bound": None})
        if root.status == "infeasible":
            if self.best_x is None:
                return "infeasible", np.inf, root.certificate
            return "optimal", self.best_f, None
        if root.status != "optimal":
            return ("limit" if self.best_x is not None else "no-incumbent"), -np.inf, None
        frac = self._fractional(root.point)
        if np.all(frac <= INT_TOL) and self._offer(root.point):
            pass
        if self._done():
            return "improved", root.objective, None
        if self._gap_closed(root.objective):
            return "optimal", root.objective, None
        if p.heuristic and self.bins.size:
            self._dive(root, lo0, hi0)
            if self._done():
                return "improved", root.objective, None
            if self._gap_closed(root.objective):
                return "optimal", root.objective, None
        heap = []
        self._push_children(heap, root, lo0, hi0, 0, 0)
        while heap:
            if self.nodes >= p.node_limit or time.monotonic() > self.deadline:
                bound = min(item[0] for item in heap)
                return ("limit" if self.best_x is not None else "no-incumbent"), bound, None
            item = self._pop(heap)
            pbound, _, depth, lo, hi, x0, working, parent = item
            if pbound >= self.best_f - self._prune_tol():
                continue
            sol = self._relax(lo, hi, x0, working)
            nid = self.nodes
            self.nodes += 1
            rec = {"node": nid, "depth": depth, "bound": _jnum(sol.objective),
                   "status": sol.status, "parent_bound": _jnum(pbound), "parent": parent}
            if p.record_nodes:
                rec["fixed"] = {int(j): int(lo[j]) for j in self.bins if lo[j] == hi[j]}
            if sol.status == "infeasible":
                rec["action"] = "pruned-infeasible"
                self._emit(rec)
                continue
            if sol.status != "optimal":
                rec["action"] = "skipped"
                self._emit(rec)
                continue
            if sol.objective >= self.best_f - self._prune_tol():
                rec["action"] = "pruned-bound"
                self._emit(rec)
                continue
            frac = self._fractional(sol.point)
            if np.all(frac <= INT_TOL):
                rec["action"] = "integral"
                self._offer(sol.point)
                self._emit(rec)
                if self._done():
                    return "improved", self._global_bound(heap, sol.objective), None
                continue
            rec["action"] = "branched"
            self._emit(rec)
            self._push_children(heap, sol, lo, hi, depth, nid)
            if self._gap_closed(self._global_bound(heap, np.inf)):
                return "optimal", self._global_bound(heap, np.inf), None
        if self.best_x is None:
            return "infeasible", np.inf, {"reason": "every branch-and-bound node is infeasible"}
        return "optimal", self.best_f, None

    def _prune_tol(self):
        if not np.isfinite(self.best_f):
            return 0.0
        return max(self.params.abs_gap, self.params.rel_gap * max(1.0, abs(self.best_f)))

    def _global_bound(self, heap, cur):
        vals = [item[0] for item in heap]
        if np.isfinite(cur):
            vals.append(cur)
        return min(vals) if vals else self.best_f

    def _push_children(self, heap, sol, lo, hi, depth, nid):
        x = sol.point
        frac = self._fractional(x)
        free = lo[self.bins] != hi[self.bins]
        score = np.where(free, frac, -1.0)
        best = score.max()
        j = self.bins[int(np.flatnonzero(score == best)[0])]
        children = []
        for v in (0.0, 1.0):
            clo, chi = lo.copy(), hi.copy()
            clo[j] = chi[j] = v
            children.append((sol.objective, next(self.seq), depth + 1, clo, chi, x, sol.active_set,
                             nid))
        if self.params.node_selection == "depth-first":
            # stack: push the 1-branch first so the 0-branch is explored first
            heap.append(children[1])
            heap.append(children[0])
        else:
            for ch in children:
                heapq.heappush(heap, ch)

    def _pop(self, heap):
        if self.params.node_selection == "depth-first":
            return heap.pop()
        return heapq.heappop(heap)


def _jnum(v):
    v = float(v)
    return v if np.isfinite(v) else None


# ----------------------------------------------------------------- driver

def _problem_arrays(problem):
    c = np.asarray(problem.linear, float).ravel()
    n = c.size
    ls = problem.system
    if ls.n_vars != n:
        raise ValueError(f"constraints have {ls.n_vars} variables, objective has {n}")
    Q = _as_csr(problem.quadratic, n)
    return Q, c, ls


def _feasible_full(ls, x, rows=None, tol=FEAS_TOL):
    if np.any(x < ls.lower - tol) or np.any(x > ls.upper + tol):
        return False
    if np.any(np.abs(x[ls.integer] - np.round(x[ls.integer])) > INT_TOL):
        return False
    if ls.n_rows:
        act = ls.a @ x - ls.rhs
        bad = np.where(ls.is_eq, np.abs(act), act) > tol
        if rows is not None:
            bad &= rows
        if bad.any():
            return False
    return True


def _lazy_groups(ls, lazy_only):
    """Group lazy rows that share lazy-only variables."""
    rows = np.flatnonzero(ls.lazy)
    if rows.size == 0:
        return []
    sub = sp.csr_matrix(ls.a[rows][:, np.flatnonzero(lazy_only)])
    sub.data[:] = 1.0
    adj = sub @ sub.T
    ncomp, lab = connected_components(adj, directed=False)
    order = np.argsort(lab, kind="stable")
    bounds = np.searchsorted(lab[order], np.arange(ncomp + 1))
    return [rows[order[bounds[g] : bounds[g + 1]]] for g in range(ncomp)]


def _repair_group(ls, x, rows, lazy_only):
    """Try to satisfy ``rows`` by choosing their lazy-only variables.

    Returns True (and updates ``x``) when an assignment exists.  Only binary
    lazy-only variables are enumerated; continuous ones force activation.
    """
    a = ls.a[rows]
    cols = np.unique(a.indices)
    own = cols[lazy_only[cols]]
    if own.size == 0:
        act = a @ x - ls.rhs[rows]
        return bool(np.all(np.where(ls.is_eq[rows], np.abs(act), act) <= FEAS_TOL))
    if own.size > LAZY_ENUM_LIMIT or not np.all(ls.integer[own]):
        return False
    ad = a[:, own].toarray()
    rest = a @ x - ad @ x[own] - ls.rhs[rows]
    keep = x[own].copy()
    # try the current values first, then all patterns in lexicographic order
    patterns = [np.round(keep)] + [np.array(p, float) for p in
                                   itertools.product((0.0, 1.0), repeat=own.size)]
    lo, hi = ls.lower[own], ls.upper[own]
    for pat in patterns:
        if np.any(pat < lo - FEAS_TOL) or np.any(pat > hi + FEAS_TOL):
            continue
        act = rest + ad @ pat
        if np.all(np.where(ls.is_eq[rows], np.abs(act), act) <= FEAS_TOL):
            x[own] = pat
            return True
    return False


def _extract(Q, c, ls, vars_, rows, x_full, fixed_mask):
    """Sub-problem over ``vars_`` and ``rows`` with everything else held at ``x_full``."""
    others = np.flatnonzero(fixed_mask)
    ar = ls.a[rows]
    a_sub = sp.csr_matrix(ar[:, vars_])
    rhs = ls.rhs[rows] - (ar[:, others] @ x_full[others] if others.size else 0.0)
    Qv = Q[vars_]
    Qs = sp.csr_matrix(Qv[:, vars_])
    cs = c[vars_] + (Qv[:, others] @ x_full[others] if others.size else 0.0)
    sub = LinearSystem(a_sub, np.asarray(rhs, float), ls.is_eq[rows], ls.lower[vars_].copy(),
                       ls.upper[vars_].copy(), ls.integer[vars_].copy(), np.zeros(rows.size, bool))
    return Qs, np.asarray(cs, float), sub


def solve_miqp(problem: QpProblem, params: MiqpParams | None = None, start=None) -> MiqpResult:
    """Minimize a convex quadratic over the system's rows, bounds and binaries.

    ``start`` (a full point) seeds the incumbent when it is feasible and the
    warm start otherwise.  Status is one of ``optimal``, ``infeasible``,
    ``improved`` (incumbent below ``params.improve_target``), ``limit``
    (budget exhausted with an incumbent) or ``no-incumbent``.
    """
    params = params or MiqpParams()
    Q, c, ls = _problem_arrays(problem)
    n = c.size
    if np.any(ls.lower > ls.upper):
        bad = np.flatnonzero(ls.lower > ls.upper).tolist()
        return MiqpResult(None, "infeasible", np.inf, 0, {"empty_bounds": bad})
    free_mask = ls.lower != ls.upper
    check_psd(Q[free_mask][:, free_mask] if not free_mask.all() else Q)
    t0 = time.monotonic()
    deadline = t0 + params.time_limit
    const = problem.constant

    def total(x):
        return 0.5 * float(x @ (Q @ x)) + float(c @ x) + const

    x_start = None
    if start is not None:
        x_start = np.asarray(start, float).copy()
        if x_start.shape != (n,):
            raise ValueError(f"start point has length {x_start.size}, expected {n}")
        if not _feasible_full(ls, x_start):
            x_start = None
        else:
            x_start[ls.integer] = np.round(x_start[ls.integer])
    x_cur = (x_start if x_start is not None else
             (np.asarray(start, float) if start is not None else np.zeros(n)))
    x_cur = np.clip(np.where(np.isfinite(x_cur), x_cur, 0.0), ls.lower, ls.upper)

    # variables that only appear in lazy rows (never in the objective)
    a_csc = sp.csc_matrix(ls.a)
    in_rows = np.diff(a_csc.indptr) > 0
    lazy_rows = ls.lazy.astype(bool)
    if lazy_rows.any():
        nonlazy_cols = np.zeros(n, bool)
        nl = sp.csr_matrix(ls.a[np.flatnonzero(~lazy_rows)])
        nonlazy_cols[np.unique(nl.indices)] = True
        in_obj = (np.diff(Q.tocsc().indptr) > 0) | (np.diff(Q.indptr) > 0) | (c != 0)
        lazy_only = in_rows & ~nonlazy_cols & ~in_obj
        groups = _lazy_groups(ls, lazy_only)
    else:
        lazy_only = np.zeros(n, bool)
        groups = []
    active_rows = ~lazy_rows
    active_group = np.zeros(len(groups), bool)

    log = [] if params.log is not None or params.record_nodes else None
    nodes = 0
    status_all = "optimal"
    cache = {}
    rounds = 0
    while True:
        rounds += 1
        # variables with free range that take part in this round
        live_vars = free_mask.copy()
        if lazy_only.any():
            active_cols = np.zeros(n, bool)
            act_a = sp.csr_matrix(ls.a[np.flatnonzero(active_rows)])
            active_cols[np.unique(act_a.indices)] = True
            live_vars &= ~lazy_only | active_cols
        fixed_now = ~live_vars
        rows_idx = np.flatnonzero(active_rows)
        a_act = sp.csr_matrix(ls.a[rows_idx])
        # rows touching no live variable are checked at the current point
        a_live = sp.csr_matrix(a_act[:, np.flatnonzero(live_vars)])
        empty = np.diff(a_live.indptr) == 0
        if empty.any():
            er = rows_idx[empty]
            act = ls.a[er] @ x_cur - ls.rhs[er]
            viol = np.where(ls.is_eq[er], np.abs(act), act) > FEAS_TOL
            if viol.any():
                return MiqpResult(None, "infeasible", np.inf, nodes,
                                  {"violated_fixed_rows": er[viol].tolist()})
        rows_idx = rows_idx[~empty]
        live = np.flatnonzero(live_vars)
        if params.decompose:
            Ql = Q[live][:, live]
            al = sp.csr_matrix(ls.a[rows_idx][:, live])
            ncomp, lab = _components_live(Ql, al, live.size)
        else:
            ncomp, lab = (1 if live.size else 0), np.zeros(live.size, int)
        comp_vars = [live[lab == g] for g in range(ncomp)] if ncomp <= 1 else _split(live, lab, ncomp)
        if rows_idx.size:
            first = sp.csr_matrix(ls.a[rows_idx][:, live])
            pos_first = first.indices[first.indptr[:-1]]
            row_comp = lab[pos_first]
        else:
            row_comp = np.zeros(0, int)
        row_lists = _split(rows_idx, row_comp, ncomp) if ncomp else []
        has_int = np.array([bool(ls.integer[v].any()) for v in comp_vars], bool)
        # continuous blocks: one batched QP solve
        cont = np.flatnonzero(~has_int)
        x_new = x_cur.copy()
        if cont.size:
            cv = np.concatenate([comp_vars[g] for g in cont])
            cr = np.concatenate([row_lists[g] for g in cont]) if cont.size else np.zeros(0, int)
            cr = np.sort(cr)
            fixed_mask = np.ones(n, bool)
            fixed_mask[cv] = False
            key = ("cont", cv.tobytes(), cr.tobytes())
            hit = cache.get(key)
            if hit is not None:
                x_new[cv] = hit
            else:
                Qs, cs, sub = _extract(Q, c, ls, cv, cr, x_cur, fixed_mask)
                sol = _solve_arrays(Qs, cs, sub, x_cur[cv], (), None, True)
                if sol.status == "infeasible":
                    return MiqpResult(None, "infeasible", np.inf, nodes, sol.certificate)
                if sol.status != "optimal":
                    status_all = _merge_status(status_all, "limit")
                x_new[cv] = sol.point
                cache[key] = sol.point.copy()
        for g in np.flatnonzero(has_int):
            cv = comp_vars[g]
            cr = row_lists[g]
            key = ("int", cv.tobytes(), cr.tobytes())
            hit = cache.get(key)
            if hit is not None:
                x_new[cv] = hit[0]
                status_all = _merge_status(status_all, hit[1])
                continue
            fixed_mask = np.ones(n, bool)
            fixed_mask[cv] = False
            Qs, cs, sub = _extract(Q, c, ls, cv, cr, x_cur, fixed_mask)
            st_local = None
            if x_start is not None:
                st_local = x_start[cv]
            if st_local is not None and Qs.nnz == 0 and not np.any(cs):
                # zero objective: the feasible start is already optimal
                x_new[cv] = st_local
                cache[key] = (st_local.copy(), "optimal")
                continue
            target = None
            if params.improve_target is not None and st_local is not None:
                f0 = 0.5 * float(st_local @ (Qs @ st_local)) + float(cs @ st_local)
                target = f0 - 1e-12 * max(1.0, abs(f0))
            if time.monotonic() > deadline:
                if st_local is None:
                    return MiqpResult(None, "no-incumbent", -np.inf, nodes)
                x_new[cv] = st_local
                status_all = _merge_status(status_all, "limit")
                continue
            comp_log = [] if log is not None else None
            search = _Search(Qs, cs, sub, params, deadline, comp_log, st_local, target,
                             x_cur[cv])
            st, _, cert = search.run()
            nodes += search.nodes
            if log is not None:
                for rec in comp_log:
                    rec["block"] = int(g)
                    rec["round"] = rounds
                log.extend(comp_log)
            if st == "infeasible":
                return MiqpResult(None, "infeasible", np.inf, nodes, cert, log or [])
            if search.best_x is None:
                return MiqpResult(None, "no-incumbent", -np.inf, nodes, None, log or [])
            x_new[cv] = search.best_x
            status_all = _merge_status(status_all, st)
            cache[key] = (search.best_x.copy(), st)
        x_cur = x_new
        # repair or activate lazy groups
        newly = False
        for gi, rows in enumerate(groups):
            if active_group[gi]:
                continue
            if not _repair_group(ls, x_cur, rows, lazy_only):
                active_group[gi] = True
                active_rows[rows] = True
                newly = True
        if not newly:
            break
        # re-seed the start with the repaired previous incumbent where still feasible
        if x_start is not None:
            for gi, rows in enumerate(groups):
                if active_group[gi]:
                    _repair_group(ls, x_start, rows, lazy_only)
    x_final = x_cur
    x_final[ls.integer] = np.round(x_final[ls.integer])
    if not _feasible_full(ls, x_final):
        # can only happen when a block hit its budget without improving
        if x_start is not None:
            x_final = x_start
            status_all = _merge_status(status_all, "limit")
        else:
            return MiqpResult(None, "no-incumbent", -np.inf, nodes, None, log or [])
    f = total(x_final)
    if x_start is not None and f > total(x_start) + 1e-12 * max(1.0, abs(total(x_start))):
        x_final, f = x_start, total(x_start)
    if params.improve_target is not None and f < params.improve_target:
        status_all = "improved" if status_all != "optimal" else status_all
    bound = f if status_all == "optimal" else -np.inf
    result = MiqpResult(Incumbent(x_final, f, True), status_all, bound, nodes, None, log or [],
                        {"lazy_rounds": rounds, "active_lazy_groups": int(active_group.sum()),
                         "wall_time": time.monotonic() - t0})
    _write_log(params.log, result.log)
    return result


def _components_live(Ql, al, n):
    adj = abs(Ql)
    if al.shape[0]:
        pat = abs(al)
        pat.data[:] = 1.0
        adj = adj + pat.T @ pat
    return connected_components(adj, directed=False)


def _split(items, labels, ncomp):
    order = np.argsort(labels, kind="stable")
    cuts = np.searchsorted(labels[order], np.arange(ncomp + 1))
    return [items[order[cuts[g] : cuts[g + 1]]] for g in range(ncomp)]


_STATUS_RANK = {"optimal": 0, "improved": 1, "limit": 2}


def _merge_status(a, b):
    return a if _STATUS_RANK.get(a, 3) >= _STATUS_RANK.get(b, 3) else b


def _write_log(target, records):
    if target is None or not records:
        return
    if hasattr(target, "write"):
        for rec in records:
            target.write(json.dumps(rec) + "\n")
        return
    with open(target, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


# ------------------------------------------------------------ feasibility

def find_feasible(sys, seed: int | None = None, params: MiqpParams | None = None,
                  spread: float = 0.1) -> np.ndarray:
    """A point satisfying every row, bound and integrality condition of ``sys``.

    Solves the zero-objective problem.  With a seed, the binaries are then
    held fixed and the continuous variables are projected onto a random
    target within ``spread`` of each variable's range, so different seeds
    give different feasible points.
    Raises :class:`InfeasibleSystemError` when no feasible point exists and
    :class:`NoIncumbentError` when the budget runs out first.
    """
    if isinstance(sys, ConstraintSystem):
        if sys.infeasible_rows:
            raise InfeasibleSystemError(
                f"fixed values violate rows {list(sys.infeasible_rows)}",
                {"violated_fixed_rows": list(sys.infeasible_rows)},
            )
        ls = sys.arrays
    else:
        ls = sys
    n = ls.n_vars
    params = params or MiqpParams()
    params = dataclasses.replace(params, rel_gap=np.inf, abs_gap=np.inf, improve_target=None)
    c = np.zeros(n)
    rng = None if seed is None else np.random.default_rng(seed)
    res = solve_miqp(QpProblem(sp.csr_matrix((n, n)), c, ls), params)
    if res.status == "infeasible":
        raise InfeasibleSystemError("constraint system is infeasible", res.certificate)
    if res.incumbent is None:
        raise NoIncumbentError(f"no feasible point found within budget ({res.status})")
    x = res.incumbent.solution.copy()
    if rng is None:
        return x
    cont = ~ls.integer & (ls.lower != ls.upper)
    if not cont.any():
        return x
    span = np.where(np.isfinite(ls.upper - ls.lower), ls.upper - ls.lower,
                    np.maximum(1.0, np.abs(x)))
    target = x + spread * span * rng.uniform(-1.0, 1.0, n)
    target = np.clip(target, ls.lower, ls.upper)
    lo = ls.lower.copy()
    hi = ls.upper.copy()
    lo[ls.integer] = hi[ls.integer] = x[ls.integer]
    fixed_ls = dataclasses.replace(ls, lower=lo, upper=hi)
    Qd = sp.diags(cont.astype(float) * 2.0)
    sol = _solve_arrays(sp.csr_matrix(Qd), -2.0 * np.where(cont, target, 0.0), fixed_ls, x, (),
                        None, True)
    if sol.status == "optimal" and _feasible_full(ls, sol.point):
        y = sol.point
        y[ls.integer] = x[ls.integer]
        return y
    return x
