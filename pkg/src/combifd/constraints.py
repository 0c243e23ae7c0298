"""Linear constraint systems over the stacked variable vector [vec(W), vec(H), x, b].

A :class:`ConstraintSystem` holds sparse linear rows (``<=`` or ``=``) plus
per-variable bounds.  Binary variables are ordinary [0, 1]-bounded variables
carrying an integrality flag, so relaxations and integral solves share one
variable space.  ``vec`` stacks columns, i.e. ``W[i, s]`` lives at flat index
``s * m + i``.

Systems are immutable; every builder returns a new system.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "VariableRef",
    "W",
    "H",
    "Aux",
    "Binary",
    "Dims",
    "LinearRow",
    "leq",
    "geq",
    "eq",
    "normalization_rows",
    "Block",
    "ConstraintSystem",
    "LinearSystem",
    "Violation",
    "InfeasibleSystemError",
    "build_nonnegativity",
    "build_upper_bounds",
    "build_sparsity",
    "build_semi_supervised",
    "fix_factor",
    "validate",
    "load_json",
    "dump_json",
]

KINDS = ("W", "H", "x", "b")
FEAS_TOL = 1e-6


class InfeasibleSystemError(ValueError):
    """Raised when a system is provably infeasible before any solve."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class VariableRef(NamedTuple):
    """One scalar variable: ``W[i, j]``, ``H[i, j]``, aux ``x[i]`` or binary ``b[i]``."""

    kind: str
    i: int
    j: int = 0

    def __repr__(self):
        if self.kind in ("W", "H"):
            return f"{self.kind}({self.i},{self.j})"
        return f"{self.kind}({self.i})"


def W(i: int, j: int) -> VariableRef:
    return VariableRef("W", int(i), int(j))


def H(i: int, j: int) -> VariableRef:
    return VariableRef("H", int(i), int(j))


def Aux(i: int) -> VariableRef:
    return VariableRef("x", int(i), 0)


def Binary(i: int) -> VariableRef:
    return VariableRef("b", int(i), 0)


@dataclass(frozen=True)
class Dims:
    """Sizes of the variable blocks: W is m x k, H is k x n, plus aux and binaries."""

    m: int
    k: int
    n: int
    n_aux: int = 0
    n_bin: int = 0

    def __post_init__(self):
        for name in ("m", "k", "n"):
            if getattr(self, name) < 1:
                raise ValueError(f"dimension {name} must be positive")
        if self.n_aux < 0 or self.n_bin < 0:
            raise ValueError("aux/binary counts must be non-negative")

    @property
    def n_w(self) -> int:
        return self.m * self.k

    @property
    def n_h(self) -> int:
        return self.k * self.n

    @property
    def h_offset(self) -> int:
        return self.n_w

    @property
    def aux_offset(self) -> int:
        return self.n_w + self.n_h

    @property
    def bin_offset(self) -> int:
        return self.n_w + self.n_h + self.n_aux

    @property
    def size(self) -> int:
        return self.n_w + self.n_h + self.n_aux + self.n_bin

    def contains(self, ref: VariableRef) -> bool:
        kind, i, j = ref
        if kind == "W":
            return 0 <= i < self.m and 0 <= j < self.k
        if kind == "H":
            return 0 <= i < self.k and 0 <= j < self.n
        if kind == "x":
            return 0 <= i < self.n_aux and j == 0
        if kind == "b":
            return 0 <= i < self.n_bin and j == 0
        return False

    def flat_index(self, ref: VariableRef) -> int:
        if not self.contains(ref):
            raise IndexError(f"{ref!r} is outside dims {self.astuple()}")
        kind, i, j = ref
        if kind == "W":
            return j * self.m + i
        if kind == "H":
            return self.h_offset + j * self.k + i
        if kind == "x":
            return self.aux_offset + i
        return self.bin_offset + i

    def unflatten(self, idx: int) -> VariableRef:
        idx = int(idx)
        if idx < 0 or idx >= self.size:
            raise IndexError(f"flat index {idx} outside [0, {self.size})")
        if idx < self.n_w:
            return W(idx % self.m, idx // self.m)
        idx -= self.n_w
        if idx < self.n_h:
            return H(idx % self.k, idx // self.k)
        idx -= self.n_h
        if idx < self.n_aux:
            return Aux(idx)
        return Binary(idx - self.n_aux)

    def w_index(self) -> np.ndarray:
        """Flat indices of W as an (m, k) array."""
        return np.arange(self.n_w).reshape(self.k, self.m).T

    def h_index(self) -> np.ndarray:
        """Flat indices of H as a (k, n) array."""
        return self.h_offset + np.arange(self.n_h).reshape(self.n, self.k).T

    def astuple(self):
        return (self.m, self.k, self.n, self.n_aux, self.n_bin)

    def flatten(self, w, h, x=None, b=None) -> np.ndarray:
        """Stack factor values into one flat vector."""
        w = np.asarray(w, dtype=float)
        h = np.asarray(h, dtype=float)
        if w.shape != (self.m, self.k) or h.shape != (self.k, self.n):
            raise ValueError(
                f"factor shapes W{w.shape}, H{h.shape} do not match dims {self.astuple()}"
            )
        x = np.zeros(self.n_aux) if x is None else np.asarray(x, dtype=float).ravel()
        b = np.zeros(self.n_bin) if b is None else np.asarray(b, dtype=float).ravel()
        if x.size != self.n_aux or b.size != self.n_bin:
            raise ValueError("aux/binary vector lengths do not match dims")
        return np.concatenate([w.T.ravel(), h.T.ravel(), x, b])

    def split(self, v):
        """Inverse of :meth:`flatten`: returns ``(W, H, x, b)``."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got {v.shape}")
        w = v[: self.n_w].reshape(self.k, self.m).T.copy()
        h = v[self.h_offset : self.aux_offset].reshape(self.n, self.k).T.copy()
        x = v[self.aux_offset : self.bin_offset].copy()
        b = v[self.bin_offset :].copy()
        return w, h, x, b


@dataclass(frozen=True)
class LinearRow:
    """``sum(coef * var) <sense> rhs`` with ``sense`` either ``'<='`` or ``'='``.

    ``lazy`` marks rows a solver may hold back until a candidate violates them.
    """

    terms: tuple
    sense: str
    rhs: float
    lazy: bool = False

    def __post_init__(self):
        if self.sense not in ("<=", "="):
            raise ValueError(f"row sense must be '<=' or '=', got {self.sense!r}")
        if not np.isfinite(self.rhs):
            raise ValueError("row right-hand side must be finite")

    @classmethod
    def make(cls, terms: Iterable, sense: str = "<=", rhs: float = 0.0, lazy=False):
        """Build a row, summing coefficients of repeated variables."""
        acc: dict[VariableRef, float] = {}
        for ref, coef in terms:
            ref = VariableRef(*ref)
            coef = float(coef)
            if not np.isfinite(coef):
                raise ValueError(f"non-finite coefficient on {ref!r}")
            acc[ref] = acc.get(ref, 0.0) + coef
        canon = tuple((r, c) for r, c in acc.items() if c != 0.0)
        if sense == ">=":
            canon = tuple((r, -c) for r, c in canon)
            sense, rhs = "<=", -float(rhs)
        return cls(canon, sense, float(rhs), bool(lazy))

    def evaluate(self, dims: Dims, v: np.ndarray) -> float:
        return sum(c * v[dims.flat_index(r)] for r, c in self.terms)


def leq(terms, rhs, lazy=False) -> LinearRow:
    return LinearRow.make(terms, "<=", rhs, lazy)


def geq(terms, rhs, lazy=False) -> LinearRow:
    return LinearRow.make(terms, ">=", rhs, lazy)


def eq(terms, rhs, lazy=False) -> LinearRow:
    return LinearRow.make(terms, "=", rhs, lazy)


@dataclass(frozen=True)
class Block:
    """A named, contiguous range of aux or binary variables."""

    name: str
    kind: str
    start: int
    shape: tuple

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    def ref(self, *idx) -> VariableRef:
        flat = int(np.ravel_multi_index(idx, self.shape)) if len(self.shape) > 1 else int(idx[0])
        return VariableRef(self.kind, self.start + flat, 0)


class Violation(NamedTuple):
    """``kind`` is one of row / lower / upper / integrality / fixed."""

    kind: str
    index: int
    amount: float


@dataclass(frozen=True)
class LinearSystem:
    """Matrix form of a constraint system: ``a @ v (<= or =) rhs``, bounds, flags."""

    a: sp.csr_matrix
    rhs: np.ndarray
    is_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray
    lazy: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.a.shape[1]

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    @classmethod
    def empty(cls, n, lower=None, upper=None, integer=None):
        return cls(
            a=sp.csr_matrix((0, n)),
            rhs=np.zeros(0),
            is_eq=np.zeros(0, bool),
            lower=np.full(n, -np.inf) if lower is None else np.asarray(lower, float),
            upper=np.full(n, np.inf) if upper is None else np.asarray(upper, float),
            integer=np.zeros(n, bool) if integer is None else np.asarray(integer, bool),
            lazy=np.zeros(0, bool),
        )

    @classmethod
    def from_dense(cls, n, a_ub=None, b_ub=None, a_eq=None, b_eq=None,
                   lower=None, upper=None, integer=None):
        blocks, rhs, is_eq = [], [], []
        if a_ub is not None and len(a_ub):
            blocks.append(np.atleast_2d(np.asarray(a_ub, float)))
            rhs.append(np.asarray(b_ub, float).ravel())
            is_eq.append(np.zeros(len(rhs[-1]), bool))
        if a_eq is not None and len(a_eq):
            blocks.append(np.atleast_2d(np.asarray(a_eq, float)))
            rhs.append(np.asarray(b_eq, float).ravel())
            is_eq.append(np.ones(len(rhs[-1]), bool))
        base = cls.empty(n, lower, upper, integer)
        if not blocks:
            return base
        a = sp.csr_matrix(np.vstack(blocks))
        return dataclasses.replace(
            base,
            a=a,
            rhs=np.concatenate(rhs),
            is_eq=np.concatenate(is_eq),
            lazy=np.zeros(a.shape[0], bool),
        )

    def row_activity(self, v) -> np.ndarray:
        return self.a @ np.asarray(v, float)

    def violations(self, v, tol=FEAS_TOL, check_integrality=True, rows=None):
        v = np.asarray(v, float)
        out: list[Violation] = []
        act = self.a @ v - self.rhs
        idx = np.arange(self.n_rows) if rows is None else np.asarray(rows, int)
        for r in idx:
            s = act[r]
            if (self.is_eq[r] and abs(s) > tol) or (not self.is_eq[r] and s > tol):
                out.append(Violation("row", int(r), float(s)))
        lo = np.flatnonzero(v < self.lower - tol)
        out += [Violation("lower", int(j), float(self.lower[j] - v[j])) for j in lo]
        hi = np.flatnonzero(v > self.upper + tol)
        out += [Violation("upper", int(j), float(v[j] - self.upper[j])) for j in hi]
        if check_integrality:
            frac = np.abs(v - np.round(v))
            bad = np.flatnonzero(self.integer & (frac > tol))
            out += [Violation("integrality", int(j), float(frac[j])) for j in bad]
        return out


@dataclass(frozen=True)
class ConstraintSystem:
    """Rows and bounds over the variables described by ``dims``.

    ``blocks`` names aux/binary ranges added by constraint compilers;
    ``meta`` carries compiler facts later builders rely on (e.g. whether H
    columns are normalized).  ``row_origin`` maps rows of a factor-fixed
    system back to the rows of the system it was derived from.
    """

    dims: Dims
    rows: tuple = ()
    lower: np.ndarray = None
    upper: np.ndarray = None
    blocks: tuple = ()
    meta: Mapping = field(default_factory=dict)
    row_origin: tuple | None = None
    infeasible_rows: tuple = ()

    def __post_init__(self):
        n = self.dims.size
        lo = np.full(n, -np.inf) if self.lower is None else np.array(self.lower, float)
        hi = np.full(n, np.inf) if self.upper is None else np.array(self.upper, float)
        if lo.shape != (n,) or hi.shape != (n,):
            raise ValueError("bound arrays do not match the variable count")
        b0 = self.dims.bin_offset
        lo[b0:] = np.maximum(lo[b0:], 0.0)
        hi[b0:] = np.minimum(hi[b0:], 1.0)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "meta", dict(self.meta))

    @classmethod
    def empty(cls, dims: Dims) -> "ConstraintSystem":
        return cls(dims)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def block(self, name: str) -> Block:
        for blk in self.blocks:
            if blk.name == name:
                return blk
        raise KeyError(f"no variable block named {name!r}")

    def has_block(self, name: str) -> bool:
        return any(blk.name == name for blk in self.blocks)

    def _check_row(self, row: LinearRow):
        for ref, _ in row.terms:
            if not self.dims.contains(ref):
                raise IndexError(f"row references {ref!r} outside dims {self.dims.astuple()}")

    def add_row(self, row: LinearRow) -> "ConstraintSystem":
        return self.add_rows([row])

    def add_rows(self, rows: Iterable[LinearRow]) -> "ConstraintSystem":
        rows = tuple(rows)
        for r in rows:
            self._check_row(r)
        origin = None
        if self.row_origin is not None:
            origin = self.row_origin + (None,) * len(rows)
        return dataclasses.replace(self, rows=self.rows + rows, row_origin=origin)

    def with_bounds(self, refs_or_idx, lower=None, upper=None, tighten=True):
        """Set bounds on the given variables (refs or flat indices).

        With ``tighten`` the new bound is intersected with the old one.
        """
        lo = self.lower.copy()
        hi = self.upper.copy()
        idx = np.array(
            [self.dims.flat_index(r) if isinstance(r, tuple) else int(r) for r in refs_or_idx],
            dtype=int,
        )
        if lower is not None:
            val = np.broadcast_to(np.asarray(lower, float), idx.shape)
            lo[idx] = np.maximum(lo[idx], val) if tighten else val
        if upper is not None:
            val = np.broadcast_to(np.asarray(upper, float), idx.shape)
            hi[idx] = np.minimum(hi[idx], val) if tighten else val
        return dataclasses.replace(self, lower=lo, upper=hi)

    def _extend(self, kind: str, name: str, shape, lower, upper):
        if self.has_block(name):
            raise ValueError(f"variable block {name!r} already exists")
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        size = int(np.prod(shape))
        d = self.dims
        if kind == "x":
            start = d.n_aux
            dims = dataclasses.replace(d, n_aux=d.n_aux + size)
            insert_at = d.bin_offset
        else:
            start = d.n_bin
            dims = dataclasses.replace(d, n_bin=d.n_bin + size)
            insert_at = d.size
        lo = np.insert(self.lower, insert_at, np.full(size, lower))
        hi = np.insert(self.upper, insert_at, np.full(size, upper))
        blk = Block(name, kind, start, shape)
        return dataclasses.replace(self, dims=dims, lower=lo, upper=hi,
                                   blocks=self.blocks + (blk,)), blk

    def add_binaries(self, name: str, shape):
        """Append a block of binary variables; returns ``(system, block)``."""
        return self._extend("b", name, shape, 0.0, 1.0)

    def add_aux(self, name: str, shape, lower=-np.inf, upper=np.inf):
        """Append a block of real auxiliary variables; returns ``(system, block)``."""
        return self._extend("x", name, shape, lower, upper)

    def with_meta(self, **kw) -> "ConstraintSystem":
        meta = dict(self.meta)
        meta.update(kw)
        return dataclasses.replace(self, meta=meta)

    def merge(self, other: "ConstraintSystem") -> "ConstraintSystem":
        """Conjunction of two systems built on the same dims."""
        if other.dims != self.dims or other.blocks != self.blocks:
            raise ValueError("can only merge systems with identical dims and blocks")
        meta = dict(self.meta)
        meta.update(other.meta)
        return dataclasses.replace(
            self,
            rows=self.rows + other.rows,
            lower=np.maximum(self.lower, other.lower),
            upper=np.minimum(self.upper, other.upper),
            meta=meta,
            row_origin=None,
        )

    @cached_property
    def arrays(self) -> LinearSystem:
        """Compiled sparse form, built once per system."""
        d = self.dims
        data, ri, ci = [], [], []
        rhs = np.empty(len(self.rows))
        is_eq = np.empty(len(self.rows), bool)
        lazy = np.empty(len(self.rows), bool)
        for r, row in enumerate(self.rows):
            for ref, c in row.terms:
                ri.append(r)
                ci.append(d.flat_index(ref))
                data.append(c)
            rhs[r] = row.rhs
            is_eq[r] = row.sense == "="
            lazy[r] = row.lazy
        a = sp.csr_matrix((data, (ri, ci)), shape=(len(self.rows), d.size))
        integer = np.zeros(d.size, bool)
        integer[d.bin_offset :] = True
        return LinearSystem(a, rhs, is_eq, self.lower.copy(), self.upper.copy(), integer, lazy)

    def integrality(self) -> np.ndarray:
        return self.arrays.integer


def _as_system(base) -> ConstraintSystem:
    if isinstance(base, ConstraintSystem):
        return base
    if isinstance(base, Dims):
        return ConstraintSystem(base)
    if isinstance(base, (tuple, list)):
        return ConstraintSystem(Dims(*base))
    raise TypeError(f"expected Dims or ConstraintSystem, got {type(base).__name__}")


def build_nonnegativity(base) -> ConstraintSystem:
    """Lower bound 0 on every W and H entry (as bounds, not rows)."""
    sys = _as_system(base)
    d = sys.dims
    return sys.with_bounds(range(d.n_w + d.n_h), lower=0.0)


def build_upper_bounds(base, w_upper=None, h_upper=None) -> ConstraintSystem:
    """Entry-wise upper bounds, scalar or full-shape, on W and/or H."""
    sys = _as_system(base)
    d = sys.dims
    if w_upper is not None:
        vals = np.broadcast_to(np.asarray(w_upper, float), (d.m, d.k))
        sys = sys.with_bounds(d.w_index().ravel(), upper=vals.ravel())
    if h_upper is not None:
        vals = np.broadcast_to(np.asarray(h_upper, float), (d.k, d.n))
        sys = sys.with_bounds(d.h_index().ravel(), upper=vals.ravel())
    return sys


def normalization_rows(dims: Dims, axis: str = "column", rows_of=None) -> list[LinearRow]:
    """Rows making H columns (per data point) or H rows sum to one."""
    if axis == "column":
        ks = range(dims.k) if rows_of is None else rows_of
        return [eq([(H(i, j), 1.0) for i in ks], 1.0) for j in range(dims.n)]
    if axis == "row":
        return [eq([(H(i, j), 1.0) for j in range(dims.n)], 1.0) for i in range(dims.k)]
    raise ValueError(f"normalization axis must be 'column' or 'row', got {axis!r}")


def build_sparsity(base, S: int, normalize: str | None = "column") -> ConstraintSystem:
    """At most ``S`` non-zero entries per column of H, via k*n support binaries.

    Adds ``b[i,j] >= h[i,j]``, ``sum_i b[i,j] <= S`` and, unless
    ``normalize`` is None, the normalization rows.  ``normalize='row'``
    reproduces the literal row-wise sum; the default normalizes each data
    point's column.
    """
    sys = _as_system(base)
    d = sys.dims
    if not isinstance(S, (int, np.integer)) or S <= 0 or S > d.k:
        raise ValueError(f"sparsity level S must be an integer in [1, {d.k}], got {S!r}")
    sys, blk = sys.add_binaries("support", (d.k, d.n))
    rows = []
    for j in range(d.n):
        for i in range(d.k):
            rows.append(leq([(H(i, j), 1.0), (blk.ref(i, j), -1.0)], 0.0))
    if normalize is not None:
        rows += normalization_rows(sys.dims, normalize)
    for j in range(d.n):
        rows.append(leq([(blk.ref(i, j), 1.0) for i in range(d.k)], float(S)))
    sys = sys.add_rows(rows)
    meta = {"support_block": "support", "sparsity": int(S)}
    if normalize is not None:
        meta["normalized"] = normalize
    return sys.with_meta(**meta)


def _canon_pairs(pairs, n, label):
    out = []
    for p in pairs:
        a, b = (int(p[0]), int(p[1]))
        if not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"{label} pair {p!r} indexes outside [0, {n})")
        if a == b:
            raise ValueError(f"{label} pair {p!r} links a point to itself")
        out.append((min(a, b), max(a, b)))
    return out


def build_semi_supervised(base, S: int, ml=(), cl=(), normalize="column") -> ConstraintSystem:
    """Non-negative, S-sparse factorization with must-link / cannot-link rows on b."""
    sys = _as_system(base)
    d = sys.dims
    ml = _canon_pairs(ml, d.n, "must-link")
    cl = _canon_pairs(cl, d.n, "cannot-link")
    clash = sorted(set(ml) & set(cl))
    if clash:
        raise InfeasibleSystemError(
            f"pairs appear as both must-link and cannot-link: {clash}", {"pairs": clash}
        )
    sys = build_nonnegativity(sys)
    sys = build_sparsity(sys, S, normalize=normalize)
    blk = sys.block("support")
    rows = []
    for p, q in ml:
        for i in range(d.k):
            rows.append(eq([(blk.ref(i, p), 1.0), (blk.ref(i, q), -1.0)], 0.0))
    for p, q in cl:
        for i in range(d.k):
            rows.append(leq([(blk.ref(i, p), 1.0), (blk.ref(i, q), 1.0)], 1.0))
    return sys.add_rows(rows).with_meta(must_link=ml, cannot_link=cl)


def fix_factor(sys: ConstraintSystem, which: str, values) -> ConstraintSystem:
    """Substitute fixed W or H values into every row.

    The returned system has the fixed factor pinned by equal bounds and no
    row refers to it any more.  Rows left with no free variables are dropped;
    those the fixed values violate are listed in ``infeasible_rows`` (as
    indices into the original rows).
    """
    d = sys.dims
    which = which.upper()[0]
    if which not in ("W", "H"):
        raise ValueError(f"which must be 'W' or 'H', got {which!r}")
    values = np.asarray(values, float)
    shape = (d.m, d.k) if which == "W" else (d.k, d.n)
    if values.shape != shape:
        raise ValueError(f"fixed {which} has shape {values.shape}, expected {shape}")
    new_rows, origin, bad = [], [], []
    base_origin = sys.row_origin
    for r, row in enumerate(sys.rows):
        const = 0.0
        free = []
        for ref, c in row.terms:
            if ref.kind == which:
                const += c * values[ref.i, ref.j]
            else:
                free.append((ref, c))
        rhs = row.rhs - const
        src = r if base_origin is None else base_origin[r]
        if not free:
            viol = abs(rhs) if row.sense == "=" else -rhs
            if viol > FEAS_TOL:
                bad.append(src)
            continue
        if len(free) == len(row.terms):
            new_rows.append(row)
        else:
            new_rows.append(LinearRow(tuple(free), row.sense, rhs, row.lazy))
        origin.append(src)
    idx = d.w_index() if which == "W" else d.h_index()
    lo = sys.lower.copy()
    hi = sys.upper.copy()
    lo[idx.ravel()] = values.ravel()
    hi[idx.ravel()] = values.ravel()
    return dataclasses.replace(
        sys,
        rows=tuple(new_rows),
        lower=lo,
        upper=hi,
        row_origin=tuple(origin),
        infeasible_rows=tuple(sys.infeasible_rows) + tuple(bad),
        meta={**sys.meta, "fixed": which},
    )


def validate(sys: ConstraintSystem, v, tol: float = FEAS_TOL) -> list[Violation]:
    """All violated rows, bounds and integrality conditions at the point ``v``.

    Row violations are signed ``lhs - rhs``.  An empty list means feasible.
    """
    v = np.asarray(v, float)
    if v.shape != (sys.dims.size,):
        raise ValueError(f"point has length {v.shape}, system has {sys.dims.size} variables")
    out = sys.arrays.violations(v, tol)
    out += [Violation("fixed", int(r), float("nan")) for r in sys.infeasible_rows]
    return out


# --------------------------------------------------------------------- JSON

def _ref_to_json(ref: VariableRef):
    return [ref.kind, ref.i, ref.j]


def _ref_from_json(item) -> VariableRef:
    kind = str(item[0])
    aliases = {"w": "W", "h": "H", "x": "x", "aux": "x", "b": "b", "binary": "b"}
    kind = aliases.get(kind.lower(), kind)
    if kind not in KINDS:
        raise ValueError(f"unknown variable kind {item[0]!r}")
    j = item[2] if len(item) > 2 and item[2] is not None else 0
    return VariableRef(kind, int(item[1]), int(j))


def dump_json(sys: ConstraintSystem) -> dict:
    d = sys.dims
    rows = [
        {
            "terms": [_ref_to_json(r) + [c] for r, c in row.terms],
            "sense": row.sense,
            "rhs": row.rhs,
            **({"lazy": True} if row.lazy else {}),
        }
        for row in sys.rows
    ]
    bounds = []
    default_lo = np.full(d.size, -np.inf)
    default_lo[d.bin_offset :] = 0.0
    default_hi = np.full(d.size, np.inf)
    default_hi[d.bin_offset :] = 1.0
    changed = np.flatnonzero((sys.lower != default_lo) | (sys.upper != default_hi))
    for idx in changed:
        lo, hi = sys.lower[idx], sys.upper[idx]
        bounds.append(
            _ref_to_json(d.unflatten(idx))
            + [None if np.isinf(lo) else float(lo), None if np.isinf(hi) else float(hi)]
        )
    return {
        "dims": {"m": d.m, "k": d.k, "n": d.n, "n_aux": d.n_aux, "n_bin": d.n_bin},
        "rows": rows,
        "bounds": bounds,
        "blocks": [
            {"name": b.name, "kind": b.kind, "start": b.start, "shape": list(b.shape)}
            for b in sys.blocks
        ],
        "meta": {k: v for k, v in sys.meta.items() if _jsonable(v)},
    }


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
    except TypeError:
        return False
    return True


def load_json(obj) -> ConstraintSystem:
    """Parse the JSON constraint format (a dict, a JSON string, or a path)."""
    if not isinstance(obj, Mapping):
        text = str(obj)
        if not text.lstrip().startswith("{"):
            with open(text) as fh:
                text = fh.read()
        obj = json.loads(text)
    dd = obj["dims"]
    if isinstance(dd, Mapping):
        dims = Dims(int(dd["m"]), int(dd["k"]), int(dd["n"]),
                    int(dd.get("n_aux", dd.get("M_aux", 0))), int(dd.get("n_bin", dd.get("N_bin", 0))))
    else:
        dims = Dims(*[int(v) for v in dd])
    sys = ConstraintSystem(dims)
    blocks = tuple(
        Block(b["name"], b["kind"], int(b["start"]), tuple(b["shape"]))
        for b in obj.get("blocks", [])
    )
    rows = []
    for item in obj.get("rows", []):
        terms = [(_ref_from_json(t[:-1]), float(t[-1])) for t in item["terms"]]
        rows.append(LinearRow.make(terms, item.get("sense", "<="), float(item["rhs"]),
                                   bool(item.get("lazy", False))))
    sys = sys.add_rows(rows)
    lo = sys.lower.copy()
    hi = sys.upper.copy()
    for item in obj.get("bounds", []):
        ref = _ref_from_json(item[:3])
        idx = dims.flat_index(ref)
        if item[3] is not None:
            lo[idx] = float(item[3])
        if item[4] is not None:
            hi[idx] = float(item[4])
    return dataclasses.replace(sys, lower=lo, upper=hi, blocks=blocks,
                               meta=dict(obj.get("meta", {})))
