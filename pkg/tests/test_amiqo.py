import json

import numpy as np
import pytest

from combifd.amiqo import AmiqoOptions, FactorModel, initial_model, run, step_h, step_w
from combifd.baselines import kmeans
from combifd.phasemap import ShiftConfig, build_phasemap_system, gen_synthetic, stretch_pattern
from combifd.constraints import (
    Dims,
    build_nonnegativity,
    build_semi_supervised,
    build_sparsity,
    build_upper_bounds,
    validate,
)
from combifd.matrix import residual_norm
from combifd.miqp import MiqpParams


def data(rng, m=5, n=8, k=2):
    return rng.random((m, k)) @ rng.random((k, n)) + 0.05 * rng.random((m, n))


def test_nonnegative_run_is_monotone_and_feasible(rng, tmp_path):
    a = data(rng)
    sys = build_nonnegativity(Dims(5, 2, 8))
    trace = tmp_path / "t.jsonl"
    res = run(a, sys, AmiqoOptions(max_iters=15, trace_path=str(trace)))
    obj = res.objectives
    assert all(b <= a_ + 1e-9 for a_, b in zip(obj, obj[1:]))
    assert all(rec["feasible"] for rec in res.trace)
    for model in res.history:
        assert validate(sys, model.flat(sys)) == []
        assert model.objective == pytest.approx(residual_norm(a, model.W, model.H))
    lines = trace.read_text().splitlines()
    assert len(lines) == len(res.trace)
    assert json.loads(lines[0])["half"] == "init"


def test_sparse_run_keeps_one_support_per_column(rng):
    a = data(rng, n=6)
    sys = build_sparsity(build_nonnegativity(Dims(5, 2, 6)), 1)
    res = run(a, sys, AmiqoOptions(max_iters=5))
    assert np.all((res.model.H > 1e-9).sum(axis=0) <= 1)
    assert np.allclose(res.model.H.sum(axis=0), 1.0)


def test_l1_objective_path(rng):
    a = data(rng)
    sys = build_upper_bounds(build_nonnegativity(Dims(5, 2, 8)), w_upper=5.0, h_upper=5.0)
    res = run(a, sys, AmiqoOptions(p=1, max_iters=4))
    assert res.model.objective == pytest.approx(np.abs(a - res.model.W @ res.model.H).sum())
    obj = res.objectives
    assert all(b <= a_ + 1e-9 for a_, b in zip(obj, obj[1:]))


def test_half_steps_do_not_increase_objective(rng):
    a = data(rng)
    sys = build_nonnegativity(Dims(5, 2, 8))
    opts = AmiqoOptions()
    s0 = initial_model(a, sys, opts)
    s1, _ = step_w(a, sys, s0, opts)
    s2, _ = step_h(a, sys, s1, opts)
    assert s0.objective >= s1.objective - 1e-12 >= s2.objective - 2e-12


def test_seeds_change_the_start(rng):
    a = data(rng)
    sys = build_nonnegativity(Dims(5, 2, 8))
    s0 = initial_model(a, sys, AmiqoOptions(seed=0))
    s1 = initial_model(a, sys, AmiqoOptions(seed=1))
    assert not np.allclose(s0.W, s1.W)
    again = initial_model(a, sys, AmiqoOptions(seed=0))
    assert np.array_equal(s0.W, again.W) and np.array_equal(s0.H, again.H)


def test_data_init_is_feasible_and_better_than_perturbation(rng):
    a = data(rng, n=10)
    sys = build_semi_supervised(Dims(5, 2, 10), 1)
    p = initial_model(a, sys, AmiqoOptions(init="perturb"))
    d = initial_model(a, sys, AmiqoOptions(init="data"))
    assert validate(sys, d.flat(sys)) == []
    assert d.objective <= p.objective


def test_nmf_init_is_feasible_with_shifted_copies():
    inst = gen_synthetic(1, n=10, m=80, k_true=3, M=2, peaks=6)
    cfg = ShiftConfig(2, 0.02)
    sys = build_phasemap_system(inst, 3, 2, cfg, "collinear")
    s = initial_model(inst.signals, sys, AmiqoOptions(init="nmf", seed=0))
    assert validate(sys, s.flat(sys), tol=1e-6) == []
    np.testing.assert_allclose(s.W[:, 1], stretch_pattern(s.W[:, 0], 1.02), atol=1e-9)


def test_explicit_initial_factors(rng):
    a = data(rng)
    sys = build_nonnegativity(Dims(5, 2, 8))
    w0, h0 = rng.random((5, 2)), rng.random((2, 8))
    res = run(a, sys, AmiqoOptions(max_iters=1), init=(w0, h0))
    assert res.trace[0]["objective"] == pytest.approx(residual_norm(a, w0, h0))
    model = FactorModel(w0, h0, np.zeros(0), np.zeros(0), 0.0)
    res2 = run(a, sys, AmiqoOptions(max_iters=1), init=model)
    assert res2.trace[0]["objective"] == pytest.approx(residual_norm(a, w0, h0))


def test_clustering_with_one_support_reproduces_lloyd(rng):
    m, k, n = 3, 2, 12
    centers = np.array([[0.0, 3.0], [0.0, 3.0], [1.0, 1.0]])
    labels = np.arange(n) % k
    a = np.abs(centers[:, labels] + 0.4 * rng.random((m, n)))
    sys = build_semi_supervised(Dims(m, k, n), 1)
    res = run(a, sys, AmiqoOptions(max_iters=50, rel_tol=0.0, miqp=MiqpParams(rel_gap=0, abs_gap=0)))
    seq = [res.history[0]] + res.history[2::2]
    assign = [np.argmax(s.H, axis=0) for s in seq]
    dedup = [assign[0]] + [b for a_, b in zip(assign, assign[1:]) if not np.array_equal(a_, b)]
    km = kmeans(a, k, assign[0], init_centroids=res.history[0].W)
    assert len(dedup) == len(km.history)
    for x, y in zip(dedup, km.history):
        assert np.array_equal(x, y)


def test_option_and_shape_errors(rng):
    a = data(rng)
    sys = build_nonnegativity(Dims(5, 2, 8))
    with pytest.raises(ValueError):
        AmiqoOptions(p=3)
    with pytest.raises(ValueError):
        AmiqoOptions(init="random")
    with pytest.raises(ValueError):
        AmiqoOptions(max_iters=-1)
    with pytest.raises(ValueError):
        run(a[:, :5], sys)
    with pytest.raises(ValueError):
        run(a, sys, AmiqoOptions(k=3))
    with pytest.raises(ValueError, match="below"):
        run(a[:2], build_nonnegativity(Dims(2, 2, 8)))
