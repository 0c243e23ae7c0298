"""Dense real matrices used for A, W and H.

Matrices are plain C-ordered ``float64`` numpy arrays; the helpers here only
add shape checking, finiteness checking and CSV round-tripping.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

__all__ = [
    "as_matrix",
    "matmul",
    "residual_norm",
    "read_csv",
    "write_csv",
]


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Return ``data`` as a finite, row-major 2-D float64 array."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def residual_norm(a, w, h, p: int = 2) -> float:
    """Entry-wise ``p``-norm of ``A - W H`` for ``p`` in {1, 2}.

    ``p=2`` gives the Frobenius norm, ``p=1`` the sum of absolute residuals.
    """
    if p not in (1, 2):
        raise ValueError(f"norm order must be 1 or 2, got {p!r}")
    a = as_matrix(a, "A")
    w = as_matrix(w, "W")
    h = as_matrix(h, "H")
    if w.shape[0] != a.shape[0] or w.shape[1] != h.shape[0] or h.shape[1] != a.shape[1]:
        raise ValueError(
            f"shapes do not compose: A{a.shape}, W{w.shape}, H{h.shape}"
        )
    r = a - w @ h
    if p == 2:
        return float(np.sqrt(np.sum(r * r)))
    return float(np.sum(np.abs(r)))


def read_csv(path, header: bool = False) -> np.ndarray:
    """Read a comma-separated matrix, one row per line.

    With ``header=True`` the first line is skipped.
    """
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    values = []
    for lineno, r in enumerate(rows, start=2 if header else 1):
        if len(r) != width:
            raise ValueError(f"{path}: row {lineno} has {len(r)} fields, expected {width}")
        try:
            values.append([float(cell) for cell in r])
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return as_matrix(values, str(path))


def write_csv(path, matrix, header: list[str] | None = None) -> None:
    m = as_matrix(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in m:
            # repr keeps full precision, so a write/read round trip is exact
            writer.writerow([repr(float(v)) for v in row])
