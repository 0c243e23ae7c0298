import itertools

import numpy as np
import pytest

from combifd.metrics import (
    accuracy_hard,
    accuracy_soft,
    collinear_violations,
    connectivity_violations,
    gibbs_violations,
    group_rows,
    hard_assign,
    is_connected,
    overlap_matrix,
    soft_supports,
)


def brute_accuracy(pred, truth, k):
    best = 0
    for perm in itertools.permutations(range(k)):
        best = max(best, sum(1 for p, t in zip(pred, truth) if p >= 0 and perm[p] == t))
    return best / len(truth)


def test_hungarian_matches_brute_force(rng):
    for _ in range(60):
        k = int(rng.integers(1, 6))
        n = int(rng.integers(1, 25))
        pred = rng.integers(0, k, n)
        truth = rng.integers(0, k, n)
        assert accuracy_hard(pred, truth) == pytest.approx(brute_accuracy(pred, truth, k), abs=0)


def test_accuracy_is_label_permutation_invariant():
    truth = np.array([0, 0, 1, 1, 2])
    assert accuracy_hard(np.array([2, 2, 0, 0, 1]), truth) == 1.0
    assert accuracy_hard(np.array([-1, 2, 0, 0, 1]), truth) == 0.8


def test_hard_assign_uses_column_sums_of_w():
    w = np.array([[1.0, 0.0], [1.0, 5.0]])  # column sums 2 and 5
    h = np.array([[0.6, 0.2, 0.0], [0.4, 0.3, 0.0]])
    assign = hard_assign(w, h)
    # 2*0.6 = 1.2 < 5*0.4 = 2.0; last column is empty
    assert assign.labels.tolist() == [1, 1, -1]
    assert assign.unassigned.tolist() == [2]
    tie = hard_assign(np.ones((1, 2)), np.array([[0.5], [0.5]]))
    assert tie.labels.tolist() == [0]


def test_soft_supports_threshold_is_relative_to_column():
    h = np.array([[1.0, 1e-4, 0.0], [1e-4, 1e-4, 0.0]])
    s = soft_supports(h)
    assert s.tolist() == [[True, True, False], [False, True, False]]


def test_soft_accuracy_perfect_and_normalizations():
    t = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [0, 1, 1, 0]], bool)
    perm = t[[2, 0, 1]]
    assert accuracy_soft(perm, t, "k") == pytest.approx(1.0)
    assert accuracy_soft(perm, t, "n") == pytest.approx(3 / 4)
    with pytest.raises(ValueError):
        accuracy_soft(perm, t, "z")


def test_soft_accuracy_against_brute_force(rng):
    for _ in range(40):
        k, n = int(rng.integers(1, 5)), int(rng.integers(2, 10))
        p = rng.random((k, n)) < 0.4
        t = rng.random((k, n)) < 0.4
        best = 0.0
        for perm in itertools.permutations(range(k)):
            tot = 0.0
            for i, j in enumerate(perm):
                union = (p[i] | t[j]).sum()
                tot += 1.0 if union == 0 else (p[i] & t[j]).sum() / union
            best = max(best, tot)
        assert accuracy_soft(p, t, "k") == pytest.approx(best / k)
        assert accuracy_soft(p, t, "n", clamp=False) == pytest.approx(best / n)


def test_soft_accuracy_pads_unequal_counts():
    t = np.array([[1, 0], [0, 1]], bool)
    p = np.array([[1, 1]], bool)
    # best: p0 with either truth set (1/2), the padded empty set scores 0
    assert accuracy_soft(p, t, "k") == pytest.approx(0.25)


def test_overlap_and_grouping():
    p = np.array([[1, 1, 0], [0, 0, 1]], bool)
    t = np.array([[1, 0, 0], [0, 1, 1]], bool)
    assert overlap_matrix(p, t).tolist() == [[1, 1], [0, 1]]
    h = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(group_rows(h, [(0, 1), (2, 3)]), [h[0] + h[1], h[2] + h[3]])


def test_gibbs_and_connectivity_audits():
    s = np.array([[1, 1, 0, 1], [1, 0, 0, 1], [1, 1, 1, 0]], bool)
    assert gibbs_violations(s, 2).tolist() == [0]
    path = [(0, 1), (1, 2), (2, 3)]
    assert connectivity_violations(s, path) == [0, 1]
    assert is_connected([], path) and is_connected([2], path)
    assert not is_connected([0, 2], path, 4)


def test_collinear_violations():
    conc = np.array([[0.5, 0.1, 0.4], [0.5, 0.4, 0.1]])
    assert collinear_violations(conc, [(0, 1, 2)]) == [(0, (0, 1, 2))]
