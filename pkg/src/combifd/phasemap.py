"""Phase-map constraint compilers and a synthetic composition-spread generator.

Columns of W are grouped: phase ``z`` owns columns ``z*Q .. z*Q + Q-1``; the
first is the free pattern and column ``z*Q + l`` is its copy stretched by
``1 + l*gamma``.  Row ``z*Q + l`` of H is the concentration of that copy, and
the phase concentration at a point is the sum over the group.

Stretching is a mass-preserving scatter: grid row ``r`` of the free pattern
lands at fractional row ``r / (1 + l*gamma)`` and is split linearly between
the two neighbouring rows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

from combifd.constraints import (
    ConstraintSystem,
    InfeasibleSystemError,
    Dims,
    H,
    W,
    _as_system,
    build_nonnegativity,
    fix_factor,
    validate,
    eq,
    leq,
    normalization_rows,
)
from combifd.matrix import read_csv, write_csv

__all__ = [
    "ShiftConfig",
    "PhaseMapInstance",
    "triangular_lattice",
    "ternary_to_xy",
    "neighbor_graph",
    "collinear_triples",
    "stretch_matrix",
    "stretch_pattern",
    "choose_shift_config",
    "build_gibbs",
    "build_shifting",
    "build_connectivity_collinear",
    "build_connectivity_flow",
    "build_phasemap_system",
    "phase_concentrations",
    "gen_synthetic",
    "truth_factors",
    "truth_point",
    "save_instance",
    "load_instance",
]


@dataclass(frozen=True)
class ShiftConfig:
    Q: int = 1
    gamma: float = 0.0

    def __post_init__(self):
        if not isinstance(self.Q, (int, np.integer)) or self.Q < 1:
            raise ValueError(f"copies per pattern Q must be an integer >= 1, got {self.Q!r}")
        if self.Q > 1 and not self.gamma > 0:
            raise ValueError(f"shift granularity gamma must be positive, got {self.gamma!r}")
        if self.gamma < 0:
            raise ValueError(f"shift granularity gamma must be non-negative, got {self.gamma!r}")


@dataclass
class PhaseMapInstance:
    compositions: np.ndarray  # n x 3, rows on the simplex
    edges: list
    grid: np.ndarray  # m scattering-vector values
    signals: np.ndarray  # m x n
    truth: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.compositions, float)
        if c.ndim != 2 or c.shape[1] != 3:
            raise ValueError("compositions must be an n x 3 array")
        if np.any(c < -1e-12) or np.any(np.abs(c.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("composition coordinates must be non-negative and sum to 1")
        a = np.asarray(self.signals, float)
        if a.shape[1] != c.shape[0]:
            raise ValueError(f"signals have {a.shape[1]} columns for {c.shape[0]} points")
        if np.any(a < 0):
            raise ValueError("signals must be non-negative")
        if len(self.grid) != a.shape[0]:
            raise ValueError(f"grid has {len(self.grid)} values for {a.shape[0]} signal rows")
        self.compositions = c
        self.signals = a
        self.grid = np.asarray(self.grid, float)
        self.edges = [(int(u), int(v)) for u, v in self.edges]

    @property
    def n(self) -> int:
        return self.compositions.shape[0]

    @property
    def m(self) -> int:
        return self.signals.shape[0]


# ---------------------------------------------------------------- geometry

def triangular_lattice(side: int) -> np.ndarray:
    """All compositions ``(i, j, l) / side`` with ``i + j + l = side``."""
    if side < 1:
        raise ValueError("lattice side must be positive")
    pts = [(side - j - l, j, l) for l in range(side + 1) for j in range(side + 1 - l)]
    return np.asarray(pts, float) / side


def ternary_to_xy(comp) -> np.ndarray:
    """Planar coordinates of simplex points (equilateral triangle, unit side)."""
    c = np.asarray(comp, float)
    return np.column_stack([c[:, 1] + 0.5 * c[:, 2], c[:, 2] * math.sqrt(3.0) / 2.0])


def neighbor_graph(comp) -> list[tuple[int, int]]:
    """Edges of the Delaunay triangulation of the composition points."""
    xy = ternary_to_xy(comp)
    n = xy.shape[0]
    if n < 2:
        return []
    if n == 2:
        return [(0, 1)]
    tri = Delaunay(xy)
    edges = set()
    for s in tri.simplices:
        for a in range(3):
            u, v = int(s[a]), int(s[(a + 1) % 3])
            edges.add((min(u, v), max(u, v)))
    return sorted(edges)


def collinear_triples(comp, tol: float = 1e-6) -> list[tuple[int, int, int]]:
    """Triples ``(v1, v2, v3)`` on one line with ``v2`` strictly between.

    Each unordered pair of end points appears once, with ``v1 < v3``.
    """
    xy = ternary_to_xy(comp)
    n = xy.shape[0]
    out = []
    for v1 in range(n):
        for v3 in range(v1 + 1, n):
            d = xy[v3] - xy[v1]
            L2 = float(d @ d)
            if L2 == 0.0:
                continue
            rel = xy - xy[v1]
            cross = (d[0] * rel[:, 1] - d[1] * rel[:, 0]) / math.sqrt(L2)
            t = rel @ d / L2
            mask = (np.abs(cross) < tol) & (t > 1e-9) & (t < 1 - 1e-9)
            for v2 in np.flatnonzero(mask):
                out.append((v1, int(v2), v3))
    return out


# ---------------------------------------------------------------- shifting

def stretch_matrix(m: int, factor: float) -> sp.csr_matrix:
    """``T`` with ``T @ f`` the stretch of pattern ``f`` by ``factor`` (>= 1).

    Row ``r`` of ``f`` moves to position ``r / factor`` and is split between
    ``floor`` and ``floor + 1`` with linear weights, so column sums are one.
    """
    if factor <= 0:
        raise ValueError("stretch factor must be positive")
    r = np.arange(m)
    pos = r / factor
    lo = np.floor(pos).astype(int)
    lam = pos - lo
    rows = np.concatenate([lo, lo + 1])
    cols = np.concatenate([r, r])
    vals = np.concatenate([1.0 - lam, lam])
    keep = (rows >= 0) & (rows < m) & (vals != 0.0)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(m, m))


def stretch_pattern(f, factor: float) -> np.ndarray:
    """Direct evaluation of the stretch of ``f`` (reference routine)."""
    f = np.asarray(f, float)
    out = np.zeros_like(f)
    for r, val in enumerate(f):
        pos = r / factor
        lo = int(math.floor(pos))
        lam = pos - lo
        if 0 <= lo < f.size:
            out[lo] += (1.0 - lam) * val
        if 0 <= lo + 1 < f.size and lam != 0.0:
            out[lo + 1] += lam * val
    return out


def choose_shift_config(max_shift: float, min_width: float, shift_range: float) -> ShiftConfig:
    """``Q = max(1, ceil(max_shift / min_width))`` copies spaced evenly over the range."""
    if min_width <= 0:
        raise ValueError("minimum peak width must be positive")
    Q = max(1, int(math.ceil(max_shift / min_width - 1e-12)))
    gamma = shift_range / (Q - 1) if Q > 1 else 0.0
    if Q > 1 and gamma <= 0:
        Q, gamma = 1, 0.0
    return ShiftConfig(Q, gamma)


def build_shifting(base, cfg: ShiftConfig, grid=None) -> ConstraintSystem:
    """Tie every copy column of W to its free column by the stretch equalities.

    One row per copy entry: ``W[i, zQ+l] - sum_r T_l[i, r] W[r, zQ] = 0``.
    """
    sys = _as_system(base)
    d = sys.dims
    Q = cfg.Q
    if d.k % Q:
        raise ValueError(f"k={d.k} is not a multiple of Q={Q}")
    if grid is not None and len(grid) != d.m:
        raise ValueError(f"grid has {len(grid)} values, W has {d.m} rows")
    rows = []
    for l in range(1, Q):
        T = stretch_matrix(d.m, 1.0 + l * cfg.gamma)
        for z in range(d.k // Q):
            free, copy = z * Q, z * Q + l
            for i in range(d.m):
                s, e = T.indptr[i], T.indptr[i + 1]
                terms = [(W(i, copy), 1.0)]
                terms += [(W(int(r), free), -float(v)) for r, v in zip(T.indices[s:e], T.data[s:e])]
                rows.append(eq(terms, 0.0))
    meta = {"shift_Q": Q, "shift_gamma": cfg.gamma}
    return sys.add_rows(rows).with_meta(**meta)


# ------------------------------------------------------------------- Gibbs

def _group_bound(sys: ConstraintSystem, Q: int):
    """Big-M for a phase concentration: 1 under normalization, else H bounds."""
    d = sys.dims
    if sys.meta.get("normalized") == "column":
        return 1.0
    hi = sys.upper[d.h_index()]
    U = hi.reshape(d.k // Q, Q, d.n).sum(axis=1).max()
    if not np.isfinite(U):
        raise ValueError("big-M rows need normalized H columns or finite H upper bounds")
    return float(U)


def build_gibbs(base, M: int, Q: int = 1) -> ConstraintSystem:
    """At most ``M`` phases (groups of ``Q`` rows of H) present at each point.

    Adds binaries ``gibbs[z, j]`` with ``h[zQ+l, j] <= U * gibbs[z, j]`` for
    every copy and ``sum_z gibbs[z, j] <= M``.
    """
    sys = _as_system(base)
    d = sys.dims
    if d.k % Q:
        raise ValueError(f"k={d.k} is not a multiple of Q={Q}")
    kf = d.k // Q
    if not isinstance(M, (int, np.integer)) or M <= 0:
        raise ValueError(f"Gibbs bound M must be a positive integer, got {M!r}")
    if M > kf:
        raise ValueError(f"M={M} exceeds the number of phases {kf}")
    if sys.has_block("gibbs"):
        raise ValueError("Gibbs rows are already present")
    if sys.meta.get("normalized") == "column":
        U = 1.0
    else:
        hi = sys.upper[d.h_index()]
        U = float(hi.max())
        if not np.isfinite(U):
            raise ValueError("Gibbs rows need normalized H columns or finite H upper bounds")
    sys, blk = sys.add_binaries("gibbs", (kf, d.n))
    rows = []
    for j in range(d.n):
        for z in range(kf):
            for l in range(Q):
                rows.append(leq([(H(z * Q + l, j), 1.0), (blk.ref(z, j), -U)], 0.0))
        rows.append(leq([(blk.ref(z, j), 1.0) for z in range(kf)], float(M)))
    return sys.add_rows(rows).with_meta(gibbs_block="gibbs", gibbs_M=int(M), phase_Q=int(Q))


# ------------------------------------------------------------ connectivity

def _group_terms(z, j, Q, coef):
    return [(H(z * Q + l, j), coef) for l in range(Q)]


def build_connectivity_collinear(base, compositions, Q: int = 1, tol: float = 1e-6,
                                 lazy: bool = True) -> ConstraintSystem:
    """``g[v2] >= min(g[v1], g[v3])`` for every collinear triple and phase.

    ``g`` is the phase concentration (sum over its copies).  One binary
    ``t`` per triple and phase selects which end point bounds ``g[v2]``:
    ``g[v2] >= g[v1] - U (1 - t)`` and ``g[v2] >= g[v3] - U t``.
    """
    sys = _as_system(base)
    d = sys.dims
    comp = np.asarray(compositions, float)
    if comp.shape[0] != d.n:
        raise ValueError(f"{comp.shape[0]} compositions for {d.n} points")
    kf = d.k // Q
    U = _group_bound(sys, Q)
    triples = collinear_triples(comp, tol)
    if not triples:
        return sys.with_meta(collinear_triples=[])
    sys, blk = sys.add_binaries("collinear", (len(triples), kf))
    rows = []
    for t, (v1, v2, v3) in enumerate(triples):
        for z in range(kf):
            tb = blk.ref(t, z)
            rows.append(leq(_group_terms(z, v1, Q, 1.0) + _group_terms(z, v2, Q, -1.0)
                            + [(tb, U)], U, lazy=lazy))
            rows.append(leq(_group_terms(z, v3, Q, 1.0) + _group_terms(z, v2, Q, -1.0)
                            + [(tb, -U)], 0.0, lazy=lazy))
    return sys.add_rows(rows).with_meta(collinear_triples=[list(t) for t in triples])


def _check_connected(n, edges):
    from combifd.metrics import is_connected

    if n > 1 and not is_connected(range(n), edges, n):
        raise ValueError("neighbor graph is not connected")


def build_connectivity_flow(base, edges, Q: int = 1, usage: str | None = None) -> ConstraintSystem:
    """Single-commodity flow certificate that each phase's support is connected.

    Per phase: a root binary per point (exactly one root), a source arc into
    every point with capacity ``n * root``, arc flows in both directions of
    every edge with capacity ``n`` times the usage of both end points, and
    conservation ``source + in - out = usage`` at every point.  Usage
    indicators are the Gibbs binaries when present (or the named block);
    otherwise fresh binaries linked by ``g <= U * usage``.
    """
    sys = _as_system(base)
    d = sys.dims
    n = d.n
    kf = d.k // Q
    edges = [(int(u), int(v)) for u, v in edges]
    _check_connected(n, edges)
    name = usage or ("gibbs" if sys.has_block("gibbs") else None)
    rows = []
    if name is None:
        U = _group_bound(sys, Q)
        sys, ublk = sys.add_binaries("usage", (kf, n))
        for z in range(kf):
            for j in range(n):
                rows.append(leq(_group_terms(z, j, Q, 1.0) + [(ublk.ref(z, j), -U)], 0.0))
    else:
        ublk = sys.block(name)
    E = len(edges)
    sys, rblk = sys.add_binaries("flow_root", (kf, n))
    sys, fblk = sys.add_aux("flow_arc", (kf, 2 * E), lower=0.0)
    sys, sblk = sys.add_aux("flow_source", (kf, n), lower=0.0)
    cap = float(n)
    for z in range(kf):
        rows.append(eq([(rblk.ref(z, j), 1.0) for j in range(n)], 1.0))
        inflow = [[] for _ in range(n)]
        for e, (u, v) in enumerate(edges):
            for a, (s, t) in enumerate(((u, v), (v, u))):
                f = fblk.ref(z, 2 * e + a)
                rows.append(leq([(f, 1.0), (ublk.ref(z, s), -cap)], 0.0))
                rows.append(leq([(f, 1.0), (ublk.ref(z, t), -cap)], 0.0))
                inflow[t].append((f, 1.0))
                inflow[s].append((f, -1.0))
        for j in range(n):
            src = sblk.ref(z, j)
            rows.append(leq([(src, 1.0), (rblk.ref(z, j), -cap)], 0.0))
            rows.append(eq([(src, 1.0)] + inflow[j] + [(ublk.ref(z, j), -1.0)], 0.0))
    return sys.add_rows(rows).with_meta(flow_edges=[list(e) for e in edges], flow_usage=ublk.name)


def build_phasemap_system(inst_or_dims, k_phases: int, M: int, cfg: ShiftConfig,
                          connectivity: str | None = "collinear", compositions=None, edges=None,
                          normalize: bool = True, tol: float = 1e-6) -> ConstraintSystem:
    """Non-negativity, shifting, Gibbs and connectivity rows for ``k_phases`` phases."""
    if isinstance(inst_or_dims, PhaseMapInstance):
        inst = inst_or_dims
        dims = Dims(inst.m, k_phases * cfg.Q, inst.n)
        compositions = inst.compositions if compositions is None else compositions
        edges = inst.edges if edges is None else edges
    else:
        dims = inst_or_dims
    sys = build_nonnegativity(dims)
    if normalize:
        sys = sys.add_rows(normalization_rows(dims)).with_meta(normalized="column")
    else:
        sys = sys.with_bounds(dims.h_index().ravel(), upper=1.0)
    if cfg.Q > 1:
        sys = build_shifting(sys, cfg)
    sys = build_gibbs(sys, M, cfg.Q)
    if connectivity == "collinear":
        sys = build_connectivity_collinear(sys, compositions, cfg.Q, tol)
    elif connectivity == "flow":
        sys = build_connectivity_flow(sys, edges, cfg.Q)
    elif connectivity not in (None, "none"):
        raise ValueError(f"unknown connectivity mode {connectivity!r}")
    return sys.with_meta(phases=int(k_phases))


def phase_concentrations(h, Q: int) -> np.ndarray:
    """Sum the rows of H over each phase's copies."""
    h = np.asarray(h, float)
    k, n = h.shape
    return h.reshape(k // Q, Q, n).sum(axis=1)


# --------------------------------------------------------------- generator

def _gauss_pattern(m, centers, widths, heights, factor=1.0):
    x = np.arange(m)[:, None]
    c = np.asarray(centers)[None, :] / factor
    w = np.asarray(widths)[None, :] / factor
    return (np.asarray(heights)[None, :] * np.exp(-0.5 * ((x - c) / w) ** 2)).sum(axis=1)


def _seed_triangulation(rng, k):
    """Phase seeds (barycentric, k x 3) and the triangles joining them.

    The three corners always carry a phase.  Up to three more sit on the
    triangle edges; the corners they cut off become triangles and the
    remaining convex polygon is fanned, so every seed's star is convex and
    lever-rule weights stay unimodal along lattice lines.  Seeds beyond six
    are interior points joined by a Delaunay triangulation.
    """
    corners = np.eye(3)
    n_edge = min(k - 3, 3)
    cut_edges = sorted(rng.choice(3, size=n_edge, replace=False).tolist())
    # boundary walk: corner 0, edge (0,1), corner 1, edge (1,2), corner 2, edge (2,0)
    walk, seeds = [], [c for c in corners]
    edge_seed = {}
    for e in range(3):
        walk.append(e)
        if e in cut_edges:
            t = rng.uniform(0.3, 0.7)
            seeds.append((1 - t) * corners[e] + t * corners[(e + 1) % 3])
            edge_seed[e] = len(seeds) - 1
            walk.append(edge_seed[e])
    simplices = []
    for c in range(3):
        before, after = (c - 1) % 3, c
        if before in edge_seed and after in edge_seed:
            simplices.append((c, edge_seed[before], edge_seed[after]))
            walk.remove(c)
    if edge_seed:
        # fan from an edge seed so no triangle is degenerate
        apex = walk.index(min(edge_seed.values()))
        walk = walk[apex:] + walk[:apex]
    simplices += [(walk[0], walk[i], walk[i + 1]) for i in range(1, len(walk) - 1)]
    seeds = np.array(seeds)
    if k > 6:
        inner = []
        while len(inner) < k - 6:
            u = rng.dirichlet(np.ones(3))
            if u.min() >= 0.12 and all(np.abs(u - q).sum() > 0.3 for q in inner):
                inner.append(u)
        seeds = np.vstack([seeds, inner])
        xy = ternary_to_xy(seeds)
        simplices = []
        for tri in Delaunay(xy, qhull_options="QJ").simplices:
            e1, e2 = xy[tri[1]] - xy[tri[0]], xy[tri[2]] - xy[tri[0]]
            if abs(e1[0] * e2[1] - e1[1] * e2[0]) > 1e-9:  # drop joggle slivers
                simplices.append(tuple(tri))
    return seeds, np.array(simplices)


def _barycentric_concentrations(xy, seeds_xy, simplices, M):
    """Lever-rule weights: barycentric coordinates in the seed triangulation.

    For ``M < 3`` only the ``M`` largest weights are kept and renormalized.
    """
    k = seeds_xy.shape[0]
    conc = np.zeros((k, xy.shape[0]))
    for j, pt in enumerate(xy):
        for tri in simplices:
            v = seeds_xy[tri]
            T = np.column_stack([v[0] - v[2], v[1] - v[2]])
            b2 = np.linalg.solve(T, pt - v[2])
            w = np.array([b2[0], b2[1], 1.0 - b2.sum()])
            if w.min() >= -1e-9:
                break
        else:
            raise RuntimeError("phase seeds do not cover the composition triangle")
        w[np.abs(w) < 1e-12] = 0.0
        w = w.clip(0.0, None)
        if M < 3:
            order = np.argsort(-w, kind="stable")
            w[order[M:]] = 0.0
        conc[tri, j] += w / w.sum()
    return conc


def gen_synthetic(seed: int = 0, n: int | None = None, m: int = 650, k_true: int = 6, M: int = 3,
                  peaks: int = 42, shift_range: float = 0.02, noise: float = 0.0, side: int = 6,
                  width_range=(4.0, 8.0), max_tries: int = 500) -> PhaseMapInstance:
    """Synthetic ternary composition spread with known phases.

    Points form a triangular lattice (``n`` must be a triangular number,
    ``side`` is derived from it when given).  Phase concentrations are
    lever-rule weights in a triangulation of ``k_true`` phase seeds (corners
    first, then edge points, then interior points), truncated to at most
    ``M`` phases per point.  Seeds are redrawn until every phase region is
    connected in the neighbor graph.  Each
    phase is a sum of up to ``peaks`` Gaussian peaks (standard deviation in
    ``width_range`` grid units) that stretches by up to ``1 + shift_range``
    across the composition triangle.  Noise is non-negative, uniform, and
    scaled by ``noise`` times the largest signal value.
    """
    if n is not None:
        side = int(round((math.sqrt(8 * n + 1) - 3) / 2))
        if (side + 1) * (side + 2) // 2 != n:
            raise ValueError(f"n={n} is not a triangular number of lattice points")
    if k_true < 3:
        raise ValueError("the generator needs at least 3 phases (one per corner)")
    if M < 1 or M > k_true:
        raise ValueError(f"M must lie in [1, k_true], got M={M}, k_true={k_true}")
    if peaks < 1 or m < 10 or shift_range < 0 or noise < 0:
        raise ValueError("peaks and m must be positive; shift_range and noise non-negative")
    rng = np.random.default_rng(seed)
    comp = triangular_lattice(side)
    xy = ternary_to_xy(comp)
    edges = neighbor_graph(comp)
    npts = comp.shape[0]
    from combifd.metrics import is_connected

    for _ in range(max_tries):
        seeds, simplices = _seed_triangulation(rng, k_true)
        conc = _barycentric_concentrations(xy, ternary_to_xy(seeds), simplices, M)
        support = conc > 0
        if all(support[z].any() and is_connected(np.flatnonzero(support[z]), edges, npts)
               for z in range(k_true)):
            break
    else:
        raise RuntimeError("could not draw connected phase regions")
    # peak patterns
    lo_w, hi_w = width_range
    centers, widths, heights = [], [], []
    for z in range(k_true):
        npk = int(rng.integers(max(1, peaks // 2), peaks + 1))
        centers.append(rng.uniform(0.05 * m, 0.9 * m, npk))
        widths.append(rng.uniform(lo_w, hi_w, npk))
        heights.append(rng.uniform(0.2, 1.0, npk))
    patterns = np.column_stack([_gauss_pattern(m, centers[z], widths[z], heights[z])
                                for z in range(k_true)])
    # per-phase stretch: linear in composition, spanning [0, shift_range]
    shifts = np.zeros((k_true, npts))
    for z in range(k_true):
        direction = rng.dirichlet(np.ones(3))
        lin = comp @ direction
        span = lin.max() - lin.min()
        shifts[z] = shift_range * (lin - lin.min()) / span if span > 0 else 0.0
    A = np.zeros((m, npts))
    for j in range(npts):
        for z in np.flatnonzero(conc[:, j] > 0):
            A[:, j] += conc[z, j] * _gauss_pattern(m, centers[z], widths[z], heights[z],
                                                   1.0 + shifts[z, j])
    if noise > 0:
        A += noise * A.max() * rng.uniform(0.0, 1.0, A.shape)
    max_shift = float(max(c.max() for c in centers)) * shift_range / (1.0 + shift_range)
    fwhm = 2.0 * math.sqrt(2.0 * math.log(2.0))
    min_width = float(min(w.min() for w in widths)) * fwhm
    truth = {
        "concentrations": conc.tolist(),
        "supports": support.astype(int).tolist(),
        "shifts": shifts.tolist(),
        "patterns": patterns.T.tolist(),
        "seeds": seeds.tolist(),
    }
    meta = {
        "seed": int(seed), "k_true": int(k_true), "M": int(M), "shift_range": float(shift_range),
        "max_shift": max_shift, "min_width": min_width, "noise": float(noise),
    }
    grid = np.linspace(15.0, 85.0, m)
    return PhaseMapInstance(comp, edges, grid, A, truth, meta)


def truth_factors(inst: PhaseMapInstance, cfg: ShiftConfig):
    """Ground-truth ``(W, H)`` in the layout of :func:`build_phasemap_system`.

    Copy ``l`` of phase ``z`` is the free pattern stretched by ``1 + l gamma``;
    each point's concentration goes to the copy nearest its true shift.
    """
    if inst.truth is None:
        raise ValueError("instance carries no ground truth")
    patterns = np.asarray(inst.truth["patterns"], float).T
    conc = np.asarray(inst.truth["concentrations"], float)
    shifts = np.asarray(inst.truth["shifts"], float)
    kf, Q = conc.shape[0], cfg.Q
    w = np.zeros((inst.m, kf * Q))
    h = np.zeros((kf * Q, inst.n))
    for l in range(Q):
        T = stretch_matrix(inst.m, 1.0 + l * cfg.gamma)
        w[:, l::Q] = T @ patterns
    if Q > 1 and cfg.gamma > 0:
        copy = np.clip(np.rint(shifts / cfg.gamma), 0, Q - 1).astype(int)
    else:
        copy = np.zeros(shifts.shape, int)
    for z in range(kf):
        h[z * Q + copy[z], np.arange(inst.n)] = conc[z]
    return w, h


def _tree_flows(nodes, edges, n):
    """Root, per-arc flow and source values routing one unit to every node."""
    nodes = sorted(int(v) for v in nodes)
    arc = np.zeros(2 * len(edges))
    source = np.zeros(n)
    root = np.zeros(n)
    if not nodes:
        root[0] = 1.0
        return root, arc, source
    inside = set(nodes)
    adj = {v: [] for v in nodes}
    for e, (u, v) in enumerate(edges):
        if u in inside and v in inside:
            adj[u].append((v, 2 * e))      # arc u -> v
            adj[v].append((u, 2 * e + 1))  # arc v -> u
    r = nodes[0]
    root[r] = 1.0
    source[r] = len(nodes)
    order, parent = [r], {r: None}
    for u in order:
        for v, a in adj[u]:
            if v not in parent:
                parent[v] = (u, a)
                order.append(v)
    if len(order) != len(nodes):
        raise ValueError("support is not connected")
    sub = {v: 1.0 for v in nodes}
    for v in reversed(order[1:]):
        u, a = parent[v]
        arc[a] = sub[v]
        sub[u] += sub[v]
    return root, arc, source


def truth_point(inst: PhaseMapInstance, sys: ConstraintSystem, cfg: ShiftConfig):
    """Full variable vector for ``sys`` extending the ground-truth factors.

    Gibbs/usage indicators are the true supports, collinear selectors pick
    the smaller end point, and connectivity flows follow a BFS tree of each
    support.  Blocks of other kinds are rejected.
    """
    w, h = truth_factors(inst, cfg)
    d = sys.dims
    Q = cfg.Q
    conc = phase_concentrations(h, Q)
    support = (conc > 0).astype(float)
    x = np.zeros(d.n_aux)
    b = np.zeros(d.n_bin)
    edges = [tuple(e) for e in sys.meta.get("flow_edges", inst.edges)]
    flows = None
    if sys.has_block("flow_root"):
        flows = [_tree_flows(np.flatnonzero(support[z]), edges, d.n) for z in range(conc.shape[0])]
    for blk in sys.blocks:
        dest = x if blk.kind == "x" else b
        if blk.name in ("gibbs", "usage"):
            vals = support
        elif blk.name == "collinear":
            triples = sys.meta["collinear_triples"]
            vals = np.array([[1.0 if conc[z, t[0]] <= conc[z, t[2]] else 0.0
                              for z in range(conc.shape[0])] for t in triples])
        elif blk.name in ("flow_root", "flow_arc", "flow_source"):
            part = ("flow_root", "flow_arc", "flow_source").index(blk.name)
            vals = np.stack([fl[part] for fl in flows])
        else:
            raise ValueError(f"no ground-truth rule for variable block {blk.name!r}")
        dest[blk.start: blk.start + blk.size] = np.asarray(vals, float).ravel()
    v = d.flatten(w, h, x, b)
    viol = validate(sys, v)
    if viol:
        raise InfeasibleSystemError("ground truth violates the system", {"violations": viol[:10]})
    return v


# ---------------------------------------------------------------------- I/O

def save_instance(inst: PhaseMapInstance, path) -> Path:
    """Write ``path`` (JSON) and the signals as a sidecar CSV next to it."""
    path = Path(path)
    csv_path = path.with_name(path.stem + "_signals.csv")
    write_csv(csv_path, inst.signals)
    obj = {
        "compositions": inst.compositions.tolist(),
        "edges": [list(e) for e in inst.edges],
        "grid": inst.grid.tolist(),
        "signals_csv_path": csv_path.name,
        "meta": inst.meta,
    }
    if inst.truth is not None:
        obj["truth"] = inst.truth
    path.write_text(json.dumps(obj))
    return path


def load_instance(path) -> PhaseMapInstance:
    path = Path(path)
    obj = json.loads(path.read_text())
    for key in ("compositions", "grid", "signals_csv_path"):
        if key not in obj:
            raise ValueError(f"{path}: instance file lacks {key!r}")
    csv_path = Path(obj["signals_csv_path"])
    if not csv_path.is_absolute():
        csv_path = path.parent / csv_path
    signals = read_csv(csv_path)
    comp = np.asarray(obj["compositions"], float)
    edges = obj.get("edges") or neighbor_graph(comp)
    return PhaseMapInstance(comp, edges, obj["grid"], signals, obj.get("truth"), obj.get("meta", {}))
