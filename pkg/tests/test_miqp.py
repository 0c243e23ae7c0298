import dataclasses
import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from combifd.constraints import (
    Dims,
    InfeasibleSystemError,
    LinearSystem,
    build_nonnegativity,
    build_semi_supervised,
    build_sparsity,
    fix_factor,
    validate,
)
from combifd.miqp import MiqpParams, NoIncumbentError, find_feasible, solve_miqp
from combifd.qp import QpProblem, _solve_arrays, factor_objective


def random_miqp(rng, nb, nc=2, rows=3):
    n = nb + nc
    M = rng.normal(size=(n, n))
    Q = M @ M.T / n
    c = rng.normal(size=n) * 2
    x_feas = np.concatenate([rng.integers(0, 2, nb), rng.normal(size=nc)])
    A = rng.normal(size=(rows, n))
    b = A @ x_feas + rng.random(rows)
    lo = np.r_[np.zeros(nb), -3 * np.ones(nc)]
    hi = np.r_[np.ones(nb), 3 * np.ones(nc)]
    integer = np.r_[np.ones(nb, bool), np.zeros(nc, bool)]
    ls = LinearSystem.from_dense(n, a_ub=A, b_ub=b, lower=lo, upper=hi, integer=integer)
    return QpProblem(Q, c, ls)


def enumerate_optimum(prob, nb):
    ls = prob.system
    Q = sp.csr_matrix(prob.quadratic)
    best = np.inf
    for pat in itertools.product([0.0, 1.0], repeat=nb):
        lo, hi = ls.lower.copy(), ls.upper.copy()
        lo[:nb] = hi[:nb] = pat
        sol = _solve_arrays(Q, prob.linear, dataclasses.replace(ls, lower=lo, upper=hi))
        if sol.status == "optimal":
            best = min(best, sol.objective)
    return best


@pytest.mark.parametrize("selection", ["best-bound", "depth-first"])
def test_matches_enumeration(rng, selection):
    for _ in range(15):
        nb = int(rng.integers(1, 7))
        prob = random_miqp(rng, nb)
        res = solve_miqp(prob, MiqpParams(rel_gap=0.0, abs_gap=0.0, node_selection=selection))
        assert res.status == "optimal"
        assert res.objective == pytest.approx(enumerate_optimum(prob, nb), abs=1e-8)
        x = res.point
        assert np.array_equal(x[:nb], np.round(x[:nb]))


def test_sparsity_projection_picks_best_support():
    d = Dims(2, 2, 1)
    sys = build_sparsity(build_nonnegativity(d), 1)
    w = np.eye(2)
    a = np.array([[0.9], [0.1]])
    fs = fix_factor(sys, "W", w)
    Q, c, const = factor_objective(a, w, "H", fs.dims)
    res = solve_miqp(QpProblem(Q, c, fs, constant=const))
    _, h, _, b = fs.dims.split(res.point)
    assert res.status == "optimal"
    assert np.allclose(h[:, 0], [1.0, 0.0], atol=1e-9)
    assert res.objective == pytest.approx(0.01 + 0.01)


def test_infeasible_miqp():
    # two binaries that must sum to exactly one half
    ls = LinearSystem.from_dense(2, a_eq=[[1.0, 1.0]], b_eq=[0.5], lower=[0, 0], upper=[1, 1],
                                 integer=[True, True])
    res = solve_miqp(QpProblem(np.eye(2), np.zeros(2), ls))
    assert res.status == "infeasible"
    assert res.incumbent is None
    with pytest.raises(InfeasibleSystemError):
        find_feasible(ls)


def test_node_limit_reports_limit(rng):
    prob = random_miqp(rng, 10, rows=4)
    res = solve_miqp(prob, MiqpParams(node_limit=1, rel_gap=0.0, abs_gap=0.0, heuristic=False))
    assert res.status in ("limit", "no-incumbent", "optimal")
    assert res.nodes <= 2


def test_deterministic_reruns_are_identical(rng):
    prob = random_miqp(rng, 8)
    a = solve_miqp(prob, MiqpParams(record_nodes=True))
    b = solve_miqp(prob, MiqpParams(record_nodes=True))
    assert np.array_equal(a.point, b.point)
    assert a.nodes == b.nodes
    assert [r["node"] for r in a.log] == [r["node"] for r in b.log]


def test_start_point_is_never_worsened(rng):
    prob = random_miqp(rng, 6)
    opt = solve_miqp(prob, MiqpParams(rel_gap=0.0, abs_gap=0.0))
    res = solve_miqp(prob, MiqpParams(node_limit=1), start=opt.point)
    assert res.objective <= opt.objective + 1e-12


def test_find_feasible_seeds_give_distinct_valid_points():
    d = Dims(3, 2, 5)
    sys = build_semi_supervised(d, 1, ml=[(0, 1)], cl=[(1, 2)])
    pts = [find_feasible(sys, seed=s) for s in range(3)]
    for v in pts:
        assert validate(sys, v) == []
    assert not np.array_equal(pts[0], pts[1])


def test_find_feasible_reports_budget_exhaustion():
    d = Dims(2, 3, 6)
    sys = build_semi_supervised(d, 1, cl=[(i, j) for i in range(4) for j in range(i + 1, 4)])
    # four mutually cannot-linked points with three clusters: infeasible, but only
    # provable by search, so one node is not enough to decide
    with pytest.raises(NoIncumbentError):
        find_feasible(sys, params=MiqpParams(node_limit=1, heuristic=False))
    with pytest.raises(InfeasibleSystemError):
        find_feasible(sys)


def test_params_validation():
    with pytest.raises(ValueError):
        MiqpParams(node_limit=0)
    with pytest.raises(ValueError):
        MiqpParams(node_selection="random")
