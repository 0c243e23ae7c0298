import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import lsq_linear

from combifd.boxqp import HAVE_EXTENSION, box_qp, box_qp_batch


def _lsq_problem(rng, k, m=12):
    w = rng.random((m, k))
    a = rng.random(m) - 0.3
    return w, a, 2.0 * w.T @ w, -2.0 * w.T @ a


def test_matches_bounded_least_squares(rng):
    for _ in range(50):
        k = int(rng.integers(1, 8))
        w, a, G, c = _lsq_problem(rng, k)
        lo = np.where(rng.random(k) < 0.5, 0.0, -np.inf)
        hi = np.where(rng.random(k) < 0.3, 0.4, np.inf)
        ref = lsq_linear(w, a, bounds=(lo, hi), tol=1e-14, method="bvls").x
        res = box_qp(G, c, lo, hi)
        assert res.optimal
        assert np.allclose(res.x, ref, atol=1e-9)


def test_gradient_gives_bound_multipliers(rng):
    _, _, G, c = _lsq_problem(rng, 5)
    res = box_qp(G, c, 0.0, 1.0)
    x, g = res.x, res.grad
    free = (x > 1e-12) & (x < 1 - 1e-12)
    assert np.all(np.abs(g[free]) < 1e-9)
    assert np.all(g[x <= 1e-12] >= -1e-9)
    assert np.all(g[x >= 1 - 1e-12] <= 1e-9)


def test_sparse_hessian_and_fixed_variables(rng):
    _, _, G, c = _lsq_problem(rng, 6)
    lo = np.zeros(6)
    hi = np.full(6, np.inf)
    lo[2] = hi[2] = 0.25
    dense = box_qp(G, c, lo, hi)
    sparse = box_qp(sp.csr_matrix(G), c, lo, hi)
    assert dense.x[2] == 0.25
    assert np.allclose(dense.x, sparse.x, atol=1e-12)


def test_singular_hessian_keeps_flat_directions_at_start():
    G = np.zeros((2, 2))
    G[0, 0] = 2.0
    c = np.array([-2.0, 0.0])
    res = box_qp(G, c, 0.0, np.inf, x0=np.array([0.0, 3.0]))
    assert res.x == pytest.approx([1.0, 3.0])


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        box_qp(np.eye(2), np.zeros(2), [0.0, 1.0], [1.0, 0.0])


@pytest.mark.parametrize("backend", ["python", pytest.param("ext", marks=pytest.mark.skipif(
    not HAVE_EXTENSION, reason="compiled kernel not built"))])
def test_batch_matches_single(rng, backend):
    B, k = 40, 4
    w = rng.random((B, 10, k))
    a = rng.random((B, 10))
    G = 2.0 * np.einsum("bmi,bmj->bij", w, w)
    c = -2.0 * np.einsum("bmi,bm->bi", w, a)
    x, grad, status, iters = box_qp_batch(G, c, 0.0, np.inf, backend=backend)
    assert np.all(status == 0)
    for b in range(B):
        single = box_qp(G[b], c[b], 0.0, np.inf)
        assert np.allclose(x[b], single.x, atol=1e-12)
        assert np.allclose(grad[b], single.grad, atol=1e-10)


@pytest.mark.skipif(not HAVE_EXTENSION, reason="compiled kernel not built")
def test_backends_agree_on_bounded_batches(rng):
    B, k = 100, 6
    M = rng.normal(size=(B, k, k))
    G = np.einsum("bij,bkj->bik", M, M)
    c = rng.normal(size=(B, k))
    lo = -rng.random((B, k))
    hi = rng.random((B, k))
    xe, ge, se, ie = box_qp_batch(G, c, lo, hi, backend="ext")
    xp, gp, spy, ip = box_qp_batch(G, c, lo, hi, backend="python")
    assert np.array_equal(se, spy)
    assert np.allclose(xe, xp, atol=1e-10)
    assert np.array_equal(ie, ip)


def test_batch_shape_check():
    with pytest.raises(ValueError):
        box_qp_batch(np.zeros((2, 3, 3)), np.zeros((2, 2)), 0.0, 1.0)
