"""Alternating minimization with mixed-integer steps.

Starting from a feasible point, the driver alternates

* a W-step: H fixed, minimize over (W, x, b);
* an H-step: W fixed, minimize over (H, x, b);

each solved by :func:`combifd.miqp.solve_miqp` with the current iterate as
the starting incumbent.  Because the current iterate is always a candidate,
every half-step keeps feasibility and never increases the objective.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from combifd.baselines import nmf_multiplicative
from combifd.constraints import ConstraintSystem, InfeasibleSystemError, fix_factor, validate
from combifd.matrix import as_matrix, residual_norm
from combifd.miqp import MiqpParams, find_feasible, solve_miqp
from combifd.phasemap import stretch_pattern
from combifd.qp import QpProblem, factor_objective, l1_step_system

__all__ = ["AmiqoOptions", "FactorModel", "AmiqoResult", "run", "step_w", "step_h",
           "write_trace"]


@dataclass
class AmiqoOptions:
    k: int | None = None
    p: int = 2
    max_iters: int = 20
    rel_tol: float = 1e-5
    seed: int = 0
    improve_only: bool = False
    miqp: MiqpParams = field(default_factory=MiqpParams)
    trace_path: str | None = None
    init: str = "perturb"

    def __post_init__(self):
        if self.init not in ("perturb", "data", "nmf"):
            raise ValueError(f"init must be 'perturb', 'data' or 'nmf', got {self.init!r}")
        if self.p not in (1, 2):
            raise ValueError(f"norm order must be 1 or 2, got {self.p!r}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be non-negative")


@dataclass
class FactorModel:
    W: np.ndarray
    H: np.ndarray
    x: np.ndarray
    b: np.ndarray
    objective: float
    iteration: int = 0

    def flat(self, sys: ConstraintSystem) -> np.ndarray:
        return sys.dims.flatten(self.W, self.H, self.x, self.b)


@dataclass
class AmiqoResult:
    model: FactorModel
    trace: list
    status: str = "converged"
    wall_time: float = 0.0
    history: list = field(default_factory=list)  # model after every half-step

    @property
    def objectives(self) -> list[float]:
        return [rec["objective"] for rec in self.trace]


def _check(a, sys: ConstraintSystem, opts: AmiqoOptions):
    a = as_matrix(a, "A")
    d = sys.dims
    if a.shape != (d.m, d.n):
        raise ValueError(f"A has shape {a.shape}, constraint system expects {(d.m, d.n)}")
    if opts.k is not None and opts.k != d.k:
        raise ValueError(f"options ask for k={opts.k}, constraint system has k={d.k}")
    if d.k >= min(d.m, d.n):
        raise ValueError(f"rank k={d.k} must be below min(m, n)={min(d.m, d.n)}")
    return a


def _model(sys, a, v, p, iteration):
    w, h, x, b = sys.dims.split(v)
    b = np.round(b)
    return FactorModel(w, h, x, b, residual_norm(a, w, h, p), iteration)


def _params(opts: AmiqoOptions, current_sq: float):
    params = opts.miqp
    if opts.improve_only:
        target = current_sq - 1e-12 * max(1.0, abs(current_sq))
        params = dataclasses.replace(params, improve_target=target)
    return params


def _half_step(a, sys: ConstraintSystem, state: FactorModel, opts: AmiqoOptions, which: str):
    """Minimize over ``which`` (``'W'`` or ``'H'``) plus x and b."""
    fixed_kind = "H" if which == "W" else "W"
    fixed = state.H if which == "W" else state.W
    start = state.flat(sys)
    if opts.p == 2:
        fsys = fix_factor(sys, fixed_kind, fixed)
        Q, c, const = factor_objective(a, fixed, which, fsys.dims)
        current = state.objective ** 2
        problem = QpProblem(Q, c, fsys, constant=const)
        x0 = start
    else:
        fsys, c = l1_step_system(sys, a, fixed, which)
        r = a - state.W @ state.H
        x_ext = np.concatenate([state.x, np.maximum(r, 0.0).ravel(), np.maximum(-r, 0.0).ravel()])
        x0 = fsys.dims.flatten(state.W, state.H, x_ext, state.b)
        current = state.objective
        problem = QpProblem(sp.csr_matrix((fsys.dims.size,) * 2), c, fsys)
    if fsys.infeasible_rows:
        raise InfeasibleSystemError("current iterate violates rows after fixing a factor",
                                    {"rows": list(fsys.infeasible_rows)})
    res = solve_miqp(problem, _params(opts, current), start=x0)
    info = {"miqp_nodes": res.nodes, "miqp_status": res.status}
    if res.incumbent is None:
        return state, info
    v = res.incumbent.solution
    if opts.p == 1:
        d = sys.dims
        w, h, x_ext, b = fsys.dims.split(v)
        v = d.flatten(w, h, x_ext[: d.n_aux], b)
    new = _model(sys, a, v, opts.p, state.iteration)
    # guard against round-off: never accept a worse point
    if new.objective > state.objective * (1 + 1e-12) + 1e-12:
        return state, {**info, "rejected": True}
    return new, info


def step_w(a, sys: ConstraintSystem, state: FactorModel, opts: AmiqoOptions):
    """W-step: H fixed.  Returns ``(model, info)``."""
    return _half_step(as_matrix(a, "A"), sys, state, opts, "W")


def step_h(a, sys: ConstraintSystem, state: FactorModel, opts: AmiqoOptions):
    """H-step: W fixed.  Returns ``(model, info)``."""
    return _half_step(as_matrix(a, "A"), sys, state, opts, "H")


def initial_model(a, sys: ConstraintSystem, opts: AmiqoOptions) -> FactorModel:
    """Feasible starting point, randomized by ``opts.seed``.

    ``init='perturb'`` perturbs a feasibility solution.  ``init='data'``
    then moves W as close as the constraints allow to ``k`` data columns
    picked by the seed, and takes one H-step from there.  ``init='nmf'``
    does the same with the components of an unconstrained NMF as targets
    (one per group of shifted copies; copies target the stretched component).
    """
    a = as_matrix(a, "A")
    v = find_feasible(sys, seed=opts.seed, params=opts.miqp)
    state = _model(sys, a, v, opts.p, 0)
    if opts.init == "perturb":
        return state
    d = sys.dims
    if opts.init == "nmf":
        target = _nmf_target(a, d.k, sys.meta, opts.seed)
    else:
        rng = np.random.default_rng(opts.seed)
        cols = rng.choice(d.n, size=d.k, replace=d.k > d.n)
        target = a[:, cols]
    fsys = fix_factor(sys, "H", state.H)
    N = fsys.dims.size
    diag = np.zeros(N)
    diag[: d.m * d.k] = 2.0
    Q = sp.diags(diag, format="csr")
    c = np.zeros(N)
    c[: d.m * d.k] = -2.0 * target.T.ravel()  # W is stored column-major
    const = float(np.sum(target * target))
    params = dataclasses.replace(opts.miqp, improve_target=None)
    res = solve_miqp(QpProblem(Q, c, fsys, constant=const), params, start=v)
    if res.incumbent is not None:
        state = _model(sys, a, res.incumbent.solution, opts.p, 0)
    state, _ = step_h(a, sys, state, opts)
    return state


def _nmf_target(a, k, meta, seed):
    Q = int(meta.get("shift_Q", 1))
    gamma = float(meta.get("shift_gamma", 0.0))
    nmf = nmf_multiplicative(a, k // Q, iters=1000, seed=seed)
    # scale so that H columns summing to one reproduce the fit
    comps = nmf.W * nmf.H.mean(axis=1)
    target = np.zeros((a.shape[0], k))
    for z in range(k // Q):
        for l in range(Q):
            target[:, z * Q + l] = stretch_pattern(comps[:, z], 1.0 + l * gamma) if l else comps[:, z]
    return target


def run(a, sys: ConstraintSystem, opts: AmiqoOptions | None = None, init=None) -> AmiqoResult:
    """Alternate W- and H-steps from a feasible start.

    ``init`` may be a :class:`FactorModel` or a ``(W, H)`` pair (x and b are
    then completed by a feasibility solve with the factors fixed).  Stops
    after ``opts.max_iters`` sweeps or once a full sweep improves the
    objective by less than ``rel_tol`` relative.
    """
    opts = opts or AmiqoOptions()
    a = _check(a, sys, opts)
    t0 = time.monotonic()
    if init is None:
        state = initial_model(a, sys, opts)
    elif isinstance(init, FactorModel):
        state = dataclasses.replace(init, objective=residual_norm(a, init.W, init.H, opts.p))
    else:
        state = _complete(a, sys, opts, *init)
    trace = [_record(sys, state, 0, "init", {"miqp_nodes": 0})]
    history = [state]
    status = "max-iters"
    for it in range(1, opts.max_iters + 1):
        before = state.objective
        state, info = step_w(a, sys, state, opts)
        state = dataclasses.replace(state, iteration=it)
        trace.append(_record(sys, state, it, "W", info))
        history.append(state)
        state, info = step_h(a, sys, state, opts)
        state = dataclasses.replace(state, iteration=it)
        trace.append(_record(sys, state, it, "H", info))
        history.append(state)
        if before - state.objective <= opts.rel_tol * max(before, 1e-300):
            status = "converged"
            break
    if opts.trace_path:
        write_trace(opts.trace_path, trace)
    return AmiqoResult(state, trace, status, time.monotonic() - t0, history)


def _complete(a, sys, opts, w, h):
    w = as_matrix(w, "W")
    h = as_matrix(h, "H")
    fs = fix_factor(fix_factor(sys, "W", w), "H", h)
    if fs.infeasible_rows:
        raise InfeasibleSystemError("initial factors violate the constraint rows",
                                    {"rows": list(fs.infeasible_rows)})
    v = find_feasible(fs, params=opts.miqp)
    return _model(sys, a, v, opts.p, 0)


def _record(sys, state: FactorModel, it, half, info):
    viol = validate(sys, state.flat(sys))
    return {
        "iteration": it,
        "half": half,
        "objective": state.objective,
        "miqp_nodes": int(info.get("miqp_nodes", 0)),
        "miqp_status": info.get("miqp_status"),
        "feasible": not viol,
    }


def write_trace(path, trace) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec) + "\n")
