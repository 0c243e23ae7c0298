import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog, lsq_linear

from combifd.constraints import Dims, LinearSystem, build_nonnegativity, normalization_rows
from combifd.qp import (
    NonConvexError,
    QpProblem,
    QpWarmStart,
    check_psd,
    factor_objective,
    kkt_residuals,
    solve_nnls_step,
    solve_qp,
)

KKT_TOL = 1e-7


def random_qp(rng, n=None, rank=None, rows=None, eqs=None):
    n = int(rng.integers(2, 12)) if n is None else n
    rank = int(rng.integers(0, n + 1)) if rank is None else rank
    M = rng.normal(size=(n, rank))
    Q = M @ M.T
    c = rng.normal(size=n)
    R = int(rng.integers(0, 6)) if rows is None else rows
    E = int(rng.integers(0, min(3, n))) if eqs is None else eqs
    x_feas = rng.uniform(-1, 1, n)
    a_ub = rng.normal(size=(R, n))
    b_ub = a_ub @ x_feas + rng.random(R)
    a_eq = rng.normal(size=(E, n))
    b_eq = a_eq @ x_feas
    lo = np.where(rng.random(n) < 0.7, -2.0, -np.inf)
    hi = np.where(rng.random(n) < 0.7, 2.0, np.inf)
    # keep the problem bounded below when Q is rank deficient
    lo[rank:], hi[rank:] = -3.0, 3.0
    ls = LinearSystem.from_dense(n, a_ub, b_ub, a_eq, b_eq, lo, hi)
    return QpProblem(Q, c, ls)


def test_random_qps_satisfy_kkt(rng):
    for _ in range(150):
        prob = random_qp(rng)
        sol = solve_qp(prob)
        assert sol.status == "optimal"
        res = kkt_residuals(prob, sol)
        assert max(res.values()) <= KKT_TOL, res


def test_linear_programs_match_highs(rng):
    for _ in range(60):
        prob = random_qp(rng, rank=0)
        ls = prob.system
        a = ls.a.toarray()
        ineq, eqm = ~ls.is_eq, ls.is_eq
        ref = linprog(prob.linear, A_ub=a[ineq] if ineq.any() else None,
                      b_ub=ls.rhs[ineq] if ineq.any() else None,
                      A_eq=a[eqm] if eqm.any() else None, b_eq=ls.rhs[eqm] if eqm.any() else None,
                      bounds=list(zip(ls.lower, ls.upper)), method="highs")
        sol = solve_qp(prob)
        assert ref.status == 0
        assert sol.objective == pytest.approx(ref.fun, abs=1e-7)
        assert max(kkt_residuals(prob, sol).values()) <= KKT_TOL


def test_warm_start_resolve_converges_in_two_iterations(rng):
    for _ in range(60):
        prob = random_qp(rng)
        sol = solve_qp(prob)
        warm = QpProblem(prob.quadratic, prob.linear, prob.constraints,
                         QpWarmStart(sol.point, sol.active_set))
        again = solve_qp(warm)
        assert again.status == "optimal"
        assert again.iterations <= 2
        assert again.objective == pytest.approx(sol.objective, abs=1e-9)


def test_infeasible_problem_has_farkas_certificate():
    # x0 + x1 <= -1 with both variables non-negative
    ls = LinearSystem.from_dense(2, [[1.0, 1.0]], [-1.0], lower=[0.0, 0.0])
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), ls))
    assert sol.status == "infeasible"
    cert = sol.certificate
    lam = np.asarray(cert["row_multipliers"])
    mu_lo = np.asarray(cert["lower_multipliers"])
    assert lam[0] > 0
    assert np.allclose(ls.a.T @ lam - mu_lo, 0.0, atol=1e-9)
    assert lam @ ls.rhs - mu_lo @ ls.lower < 0


def test_contradictory_bounds_and_fixed_rows():
    ls = LinearSystem.from_dense(1, lower=[1.0], upper=[0.0])
    assert solve_qp(QpProblem(np.eye(1), np.zeros(1), ls)).status == "infeasible"
    ls = LinearSystem.from_dense(2, a_eq=[[1.0, 0.0]], b_eq=[2.0], lower=[1.0, 0.0], upper=[1.0, 1.0])
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), ls))
    assert sol.status == "infeasible"
    assert "violated_fixed_rows" in sol.certificate


def test_equality_only_problem_is_exact():
    # minimize |x|^2 subject to x0 + x1 + x2 = 3
    ls = LinearSystem.from_dense(3, a_eq=[[1.0, 1.0, 1.0]], b_eq=[3.0])
    sol = solve_qp(QpProblem(2.0 * np.eye(3), np.zeros(3), ls))
    assert np.allclose(sol.point, 1.0, atol=1e-12)
    assert sol.row_duals[0] == pytest.approx(-2.0)


def test_nonconvex_rejected():
    with pytest.raises(NonConvexError):
        check_psd(np.diag([1.0, -1.0]))
    with pytest.raises(NonConvexError):
        check_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    ls = LinearSystem.empty(2, lower=[0.0, 0.0], upper=[1.0, 1.0])
    with pytest.raises(NonConvexError):
        solve_qp(QpProblem(np.diag([1.0, -1.0]), np.zeros(2), ls))


def test_decompose_does_not_change_the_optimum(rng):
    for _ in range(30):
        prob = random_qp(rng, rows=0, eqs=0)
        a = solve_qp(prob)
        b = solve_qp(prob, decompose=True)
        assert b.objective == pytest.approx(a.objective, abs=1e-9)


def test_factor_objective_reproduces_residual(rng):
    a = rng.random((4, 5))
    w = rng.random((4, 2))
    h = rng.random((2, 5))
    d = Dims(4, 2, 5)
    v = d.flatten(w, h)
    for which, fixed in (("H", w), ("W", h)):
        Q, c, const = factor_objective(a, fixed, which, d)
        val = 0.5 * v @ (Q @ v) + c @ v + const
        assert val == pytest.approx(np.sum((a - w @ h) ** 2), rel=1e-12)


def test_nnls_step_matches_scipy(rng):
    a = rng.random((6, 7))
    w = rng.random((6, 3))
    h = solve_nnls_step(a, w, "H")
    ref = np.column_stack([lsq_linear(w, a[:, j], bounds=(0, np.inf), tol=1e-14).x for j in range(7)])
    assert np.allclose(h, ref, atol=1e-8)
    h0 = rng.random((3, 7))
    wstep = solve_nnls_step(a, h0, "W")
    ref_w = np.vstack([lsq_linear(h0.T, a[i], bounds=(0, np.inf), tol=1e-14).x for i in range(6)])
    assert np.allclose(wstep, ref_w, atol=1e-8)


def test_nnls_step_with_normalized_columns(rng):
    a = rng.random((5, 6))
    w = rng.random((5, 2))
    d = Dims(5, 2, 6)
    sys = build_nonnegativity(d).add_rows(normalization_rows(d))
    h = solve_nnls_step(a, w, "H", extra=sys)
    assert np.allclose(h.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(h >= -1e-12)


def test_sparse_quadratic_accepted(rng):
    prob = random_qp(rng, n=6, rank=6)
    sol_d = solve_qp(prob)
    sol_s = solve_qp(QpProblem(sp.csr_matrix(prob.quadratic), prob.linear, prob.constraints))
    assert sol_s.objective == pytest.approx(sol_d.objective, abs=1e-10)
