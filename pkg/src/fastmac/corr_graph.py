"""Compatibility graphs over 3D correspondences.

A correspondence is stored as one row ``(x, y, z, u, v, w)`` of an ``(N, 6)``
float array: source point first, target point second.  Node ``i`` of every
graph built here is row ``i`` of that array.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist


class Correspondence(NamedTuple):
    source_point: tuple[float, float, float]
    target_point: tuple[float, float, float]

    @classmethod
    def from_row(cls, row) -> "Correspondence":
        row = [float(v) for v in row]
        return cls(tuple(row[:3]), tuple(row[3:6]))

    def as_array(self) -> np.ndarray:
        return np.array([*self.source_point, *self.target_point], dtype=float)


@dataclass(frozen=True)
class GraphConfig:
    d_cmp: float = 0.1
    t: float = 0.999

    def __post_init__(self):
        if not self.d_cmp > 0:
            raise ValueError(f"d_cmp must be positive, got {self.d_cmp}")
        if not 0.0 <= self.t < 1.0:
            raise ValueError(f"t must lie in [0, 1), got {self.t}")


@dataclass(frozen=True, eq=False)
class CompatibilityGraph:
    w: np.ndarray
    w_sog: np.ndarray
    degree: np.ndarray

    @property
    def n(self) -> int:
        return int(self.w.shape[0])

    def adjacency(self) -> np.ndarray:
        """Boolean adjacency used for clique search (``w_sog > 0``)."""
        return self.w_sog > 0

    def subgraph(self, indices) -> "CompatibilityGraph":
        """Second-order graph rebuilt on a node subset (first-order weights reused)."""
        idx = np.asarray(indices, dtype=np.intp)
        return graph_from_weights(self.w[np.ix_(idx, idx)])


def as_correspondences(corrs) -> np.ndarray:
    """Validate and coerce correspondences to a finite ``(N, 6)`` float array."""
    if isinstance(corrs, Correspondence):
        corrs = [corrs]
    if isinstance(corrs, Sequence) and corrs and isinstance(corrs[0], Correspondence):
        arr = np.array([c.as_array() for c in corrs], dtype=float)
    else:
        arr = np.asarray(corrs, dtype=float)
    if arr.ndim == 1 and arr.size == 6:
        arr = arr.reshape(1, 6)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise ValueError(f"correspondences must have shape (N, 6), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("correspondence set is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("correspondences contain non-finite coordinates")
    return arr


def compatibility_distance(ci, cj) -> float:
    """Difference of intra-cloud distances: | |ps_i - ps_j| - |pt_i - pt_j| |."""
    ci = np.asarray(ci, dtype=float).reshape(6)
    cj = np.asarray(cj, dtype=float).reshape(6)
    d_src = np.linalg.norm(ci[:3] - cj[:3])
    d_tgt = np.linalg.norm(ci[3:] - cj[3:])
    return float(abs(d_src - d_tgt))


def weight_from_distance(s_dist, cfg: GraphConfig):
    s_dist = np.asarray(s_dist, dtype=float)
    v = 1.0 - s_dist**2 / (2.0 * cfg.d_cmp**2)
    out = np.where(v > cfg.t, v, 0.0)
    return float(out) if out.ndim == 0 else out


def edge_weight(ci, cj, cfg: GraphConfig = GraphConfig()) -> float:
    return weight_from_distance(compatibility_distance(ci, cj), cfg)


def first_order_weights(corrs, cfg: GraphConfig = GraphConfig()) -> np.ndarray:
    """Pairwise compatibility matrix ``W`` with a zero diagonal."""
    arr = as_correspondences(corrs)
    d_src = cdist(arr[:, :3], arr[:, :3])
    d_tgt = cdist(arr[:, 3:], arr[:, 3:])
    w = weight_from_distance(np.abs(d_src - d_tgt), cfg)
    w = np.atleast_2d(w)
    # cdist is not exactly symmetric in floating point for every input
    w = np.maximum(w, w.T)
    np.fill_diagonal(w, 0.0)
    return w


def graph_from_weights(w: np.ndarray) -> CompatibilityGraph:
    """Second-order graph ``W * (W @ W)`` and its generalized degree."""
    w = np.array(w, dtype=float, copy=True)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weight matrix must be square, got {w.shape}")
    np.fill_diagonal(w, 0.0)
    w_sog = w * (w @ w)
    w_sog = 0.5 * (w_sog + w_sog.T)
    np.fill_diagonal(w_sog, 0.0)
    degree = w_sog.sum(axis=1)
    for a in (w, w_sog, degree):
        a.setflags(write=False)
    return CompatibilityGraph(w=w, w_sog=w_sog, degree=degree)


def build_graph(corrs, cfg: GraphConfig = GraphConfig()) -> CompatibilityGraph:
    return graph_from_weights(first_order_weights(corrs, cfg))


def load_correspondences(path) -> np.ndarray:
    """Read the whitespace-separated ``x y z u v w`` text format."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 values, got {len(parts)}")
        rows.append([float(p) for p in parts])
    return as_correspondences(rows)


def save_correspondences(path, corrs, header: str | None = None) -> None:
    arr = as_correspondences(corrs)
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend(" ".join(repr(float(v)) for v in row) for row in arr)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
