import numpy as np
import pytest

from combifd.constraints import Dims, build_nonnegativity, normalization_rows, validate
from combifd.metrics import is_connected
from combifd.phasemap import (
    PhaseMapInstance,
    ShiftConfig,
    build_connectivity_collinear,
    build_gibbs,
    build_phasemap_system,
    build_shifting,
    choose_shift_config,
    collinear_triples,
    gen_synthetic,
    load_instance,
    neighbor_graph,
    phase_concentrations,
    save_instance,
    stretch_matrix,
    stretch_pattern,
    ternary_to_xy,
    triangular_lattice,
    truth_factors,
    truth_point,
)


@pytest.fixture(scope="module")
def small():
    inst = gen_synthetic(seed=4, n=10, m=120, k_true=4, M=3, peaks=8)
    cfg = choose_shift_config(inst.meta["max_shift"], inst.meta["min_width"], inst.meta["shift_range"])
    return inst, cfg


class TestGeometry:
    def test_lattice(self):
        comp = triangular_lattice(3)
        assert comp.shape == (10, 3)
        assert np.allclose(comp.sum(axis=1), 1.0)
        xy = ternary_to_xy(comp)
        assert np.allclose(xy[0], [0.0, 0.0])
        with pytest.raises(ValueError):
            triangular_lattice(0)

    def test_neighbor_graph_of_lattice_has_unit_edges(self):
        comp = triangular_lattice(4)
        edges = neighbor_graph(comp)
        xy = ternary_to_xy(comp)
        assert len(edges) == 3 * 4 * 5 // 2
        lengths = [np.linalg.norm(xy[u] - xy[v]) for u, v in edges]
        assert np.allclose(lengths, 0.25)
        assert is_connected(range(len(comp)), edges)

    def test_collinear_triples(self):
        comp = triangular_lattice(2)
        triples = collinear_triples(comp)
        # three sides of the triangle, each with one midpoint
        assert len(triples) == 3
        for v1, v2, v3 in triples:
            assert v1 < v3
            assert np.allclose(comp[v2], 0.5 * (comp[v1] + comp[v3]))


class TestShifting:
    def test_stretch_matrix_matches_direct_evaluation(self, rng):
        for factor in (1.0, 1.013, 1.5, 2.0):
            f = rng.random(50)
            assert np.allclose(stretch_matrix(50, factor) @ f, stretch_pattern(f, factor), atol=1e-14)

    def test_identity_and_mass(self, rng):
        f = np.zeros(60)
        f[5:30] = rng.random(25)
        assert np.array_equal(stretch_matrix(60, 1.0).toarray(), np.eye(60))
        assert stretch_pattern(f, 1.3).sum() == pytest.approx(f.sum(), rel=1e-12)
        with pytest.raises(ValueError):
            stretch_matrix(5, 0.0)

    def test_shift_config(self):
        cfg = choose_shift_config(30.0, 10.0, 0.02)
        assert cfg.Q == 3 and cfg.gamma == pytest.approx(0.01)
        assert choose_shift_config(1.0, 10.0, 0.02) == ShiftConfig(1, 0.0)
        with pytest.raises(ValueError):
            ShiftConfig(2, 0.0)
        with pytest.raises(ValueError):
            choose_shift_config(1.0, 0.0, 0.1)

    def test_shifting_rows_accept_exact_copies(self, rng):
        cfg = ShiftConfig(3, 0.05)
        d = Dims(20, 6, 4)
        sys = build_shifting(build_nonnegativity(d), cfg)
        w = np.zeros((20, 6))
        for z in range(2):
            f = rng.random(20)
            for l in range(3):
                w[:, 3 * z + l] = stretch_pattern(f, 1 + l * cfg.gamma)
        v = d.flatten(w, np.zeros((6, 4)))
        assert validate(sys, v) == []
        w[3, 1] += 1e-3
        assert validate(sys, d.flatten(w, np.zeros((6, 4))))


class TestCombinatorialRows:
    def test_gibbs_counts_phases_not_copies(self):
        d = Dims(3, 4, 2)
        base = build_nonnegativity(d).add_rows(normalization_rows(d)).with_meta(normalized="column")
        sys = build_gibbs(base, 1, Q=2)
        h = np.array([[0.5, 0.0], [0.5, 0.0], [0.0, 0.3], [0.0, 0.7]])
        blk = sys.block("gibbs")
        b = np.zeros(blk.size)
        b[[blk.start + 0 * 2 + 0, blk.start + 1 * 2 + 1]] = 1.0
        v = sys.dims.flatten(np.ones((3, 4)), h, None, b)
        assert validate(sys, v) == []
        h2 = np.array([[0.5, 0.0], [0.0, 0.0], [0.5, 0.3], [0.0, 0.7]])
        v2 = sys.dims.flatten(np.ones((3, 4)), h2, None, np.ones(blk.size))
        assert validate(sys, v2)

    def test_gibbs_argument_checks(self):
        d = Dims(2, 3, 2)
        with pytest.raises(ValueError):
            build_gibbs(build_nonnegativity(d), 1)  # no normalization, no H upper bound
        base = build_nonnegativity(d).add_rows(normalization_rows(d)).with_meta(normalized="column")
        with pytest.raises(ValueError):
            build_gibbs(base, 4)
        with pytest.raises(ValueError):
            build_gibbs(base, 1, Q=2)

    def test_collinear_rows_reject_a_gap(self):
        import itertools

        comp = triangular_lattice(2)
        d = Dims(3, 1, 6)
        base = build_nonnegativity(d).with_bounds(d.h_index().ravel(), upper=1.0)
        sys = build_connectivity_collinear(base, comp, lazy=False)
        v1, v2, v3 = collinear_triples(comp)[0]
        w = np.ones((3, 1))

        def feasible(h):
            return any(not validate(sys, sys.dims.flatten(w, h, None, np.array(b, float)))
                       for b in itertools.product([0, 1], repeat=sys.dims.n_bin))

        gap = np.zeros((1, 6))
        gap[0, [v1, v3]] = 1.0
        assert not feasible(gap)
        gap[0, v2] = 1.0
        assert feasible(gap)
        assert feasible(np.ones((1, 6)))


class TestGenerator:
    def test_instance_shape_and_truth(self, small):
        inst, _ = small
        assert inst.n == 10 and inst.m == 120
        conc = np.asarray(inst.truth["concentrations"])
        assert np.allclose(conc.sum(axis=0), 1.0)
        assert np.all((conc > 0).sum(axis=0) <= 3)
        for z in range(conc.shape[0]):
            assert is_connected(np.flatnonzero(conc[z] > 0), inst.edges, inst.n)
        assert np.all(inst.signals >= 0)

    def test_seeded(self):
        a = gen_synthetic(seed=9, n=10, m=60, k_true=3, peaks=4)
        b = gen_synthetic(seed=9, n=10, m=60, k_true=3, peaks=4)
        assert np.array_equal(a.signals, b.signals)
        with pytest.raises(ValueError):
            gen_synthetic(n=11)

    def test_truth_factors_reconstruct_signals(self, small):
        inst, cfg = small
        w, h = truth_factors(inst, cfg)
        assert h.shape == (4 * cfg.Q, inst.n)
        assert np.allclose(phase_concentrations(h, cfg.Q), inst.truth["concentrations"])
        rel = np.linalg.norm(inst.signals - w @ h) / np.linalg.norm(inst.signals)
        assert rel < 0.25

    @pytest.mark.parametrize("conn", ["collinear", "flow"])
    def test_truth_point_is_feasible(self, small, conn):
        inst, cfg = small
        sys = build_phasemap_system(inst, 4, 3, cfg, conn)
        v = truth_point(inst, sys, cfg)
        assert validate(sys, v) == []

    def test_save_load_round_trip(self, small, tmp_path):
        inst, _ = small
        path = save_instance(inst, tmp_path / "inst.json")
        back = load_instance(path)
        assert np.array_equal(back.signals, inst.signals)
        assert np.array_equal(back.compositions, inst.compositions)
        assert back.edges == inst.edges
        assert back.truth == inst.truth

    def test_instance_validation(self):
        with pytest.raises(ValueError):
            PhaseMapInstance(np.array([[0.5, 0.5, 0.5]]), [], [1.0], np.ones((1, 1)))
        with pytest.raises(ValueError):
            PhaseMapInstance(np.array([[1.0, 0.0, 0.0]]), [], [1.0], -np.ones((1, 1)))
