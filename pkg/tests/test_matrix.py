import numpy as np
import pytest

from combifd.matrix import as_matrix, matmul, read_csv, residual_norm, write_csv


def test_as_matrix_promotes_vectors_and_copies_to_float():
    m = as_matrix([1, 2, 3])
    assert m.shape == (1, 3)
    assert m.dtype == np.float64
    assert m.flags.c_contiguous


@pytest.mark.parametrize("bad", [[[np.nan, 1.0]], [[np.inf]], np.zeros((0, 3)), np.zeros((2, 2, 2))])
def test_as_matrix_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        as_matrix(bad)


def test_matmul_checks_shapes():
    assert np.allclose(matmul(np.eye(2), [[1.0, 2.0], [3.0, 4.0]]), [[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_residual_norms(rng):
    a = rng.random((4, 5))
    w = rng.random((4, 2))
    h = rng.random((2, 5))
    r = a - w @ h
    assert residual_norm(a, w, h) == pytest.approx(np.linalg.norm(r))
    assert residual_norm(a, w, h, p=1) == pytest.approx(np.abs(r).sum())
    with pytest.raises(ValueError):
        residual_norm(a, w, h, p=3)
    with pytest.raises(ValueError):
        residual_norm(a, w.T, h)


def test_csv_round_trip_is_exact(tmp_path, rng):
    a = rng.normal(size=(3, 4)) * 1e3
    path = tmp_path / "a.csv"
    write_csv(path, a)
    assert np.array_equal(read_csv(path), a)


def test_csv_header_and_errors(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("x,y\n1,2\n3,4\n")
    assert np.array_equal(read_csv(p, header=True), [[1, 2], [3, 4]])
    p.write_text("1,2\n3\n")
    with pytest.raises(ValueError, match="row 2"):
        read_csv(p)
    p.write_text("1,a\n")
    with pytest.raises(ValueError):
        read_csv(p)
    p.write_text("\n")
    with pytest.raises(ValueError):
        read_csv(p)
