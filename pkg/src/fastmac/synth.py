"""Synthetic registration scenes, connected caveman graphs and feature matching."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .corr_graph import CompatibilityGraph, as_correspondences, graph_from_weights, save_correspondences
from .registration import RigidTransform

OUTLIER_MODES = ("shuffled_targets", "uniform_box")
CUBE_SCALE = 10.0


@dataclass(frozen=True, eq=False)
class SceneSpec:
    n_points: int = 1000
    inlier_ratio: float = 0.3
    noise_sigma: float = 0.005
    transform: RigidTransform | None = None
    outlier_mode: str = "shuffled_targets"
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 3:
            raise ValueError("a scene needs at least 3 points")
        if not 0.0 <= self.inlier_ratio <= 1.0:
            raise ValueError("inlier_ratio must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.outlier_mode not in OUTLIER_MODES:
            raise ValueError(f"outlier_mode must be one of {OUTLIER_MODES}")


@dataclass(frozen=True, eq=False)
class Scene:
    corrs: np.ndarray
    transform: RigidTransform
    inlier_mask: np.ndarray

    @property
    def n(self) -> int:
        return int(self.corrs.shape[0])


def random_transform(rng: np.random.Generator, max_translation: float = CUBE_SCALE) -> RigidTransform:
    rot = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(rot, rng.uniform(-max_translation, max_translation, size=3))


def generate_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    tf = spec.transform if spec.transform is not None else random_transform(rng)
    n = spec.n_points
    n_in = int(round(spec.inlier_ratio * n))

    src = rng.uniform(0.0, CUBE_SCALE, size=(n, 3))
    clean = tf.apply(src)
    noise = rng.normal(0.0, spec.noise_sigma, size=(n, 3)) if spec.noise_sigma > 0 else np.zeros((n, 3))
    tgt = clean + noise

    order = rng.permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[order[:n_in]] = True
    out = np.sort(order[n_in:])

    if out.size:
        if spec.outlier_mode == "shuffled_targets" and out.size >= 2:
            # Sattolo's algorithm: a uniformly random single cycle, hence no fixed points
            perm = np.arange(out.size)
            for i in range(out.size - 1, 0, -1):
                j = int(rng.integers(i))
                perm[i], perm[j] = perm[j], perm[i]
            tgt[out] = tgt[out[perm]]
        else:
            corners = tf.apply(np.array([[a, b, c] for a in (0, CUBE_SCALE) for b in (0, CUBE_SCALE) for c in (0, CUBE_SCALE)]))
            lo, hi = corners.min(axis=0), corners.max(axis=0)
            tgt[out] = rng.uniform(lo, hi, size=(out.size, 3))

    corrs = np.hstack([src, tgt])
    corrs.setflags(write=False)
    mask.setflags(write=False)
    return Scene(corrs, tf, mask)


def save_scene(scene: Scene, corr_path, truth_path, header: str | None = None, extra: dict | None = None) -> None:
    save_correspondences(corr_path, scene.corrs, header=header)
    truth = {
        **scene.transform.to_dict(),
        "inlier_mask": "".join("1" if b else "0" for b in scene.inlier_mask),
        **(extra or {}),
    }
    Path(truth_path).write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")


def load_truth(path) -> tuple[RigidTransform, np.ndarray | None]:
    data = json.loads(Path(path).read_text())
    tf = RigidTransform(np.array(data["rotation"], dtype=float).reshape(3, 3), np.array(data["translation"], dtype=float))
    bits = data.get("inlier_mask")
    mask = None if bits is None else np.array([c == "1" for c in bits], dtype=bool)
    return tf, mask


@dataclass(frozen=True)
class CavemanSpec:
    num_cliques: int = 8
    clique_size: int = 6

    def __post_init__(self):
        if self.num_cliques < 2 or self.clique_size < 3:
            raise ValueError("caveman graphs need at least 2 cliques of size >= 3")


def caveman_adjacency(spec: CavemanSpec, seed: int | None = None) -> np.ndarray:
    """Cycle of cliques with one edge per clique rewired to the next clique.

    In clique ``c`` the edge ``(a_c, b_c)`` is removed and ``a_c`` is joined
    to ``a_{c+1}``.  Without a seed ``a_c, b_c`` are the two lowest indices of
    the block; with a seed they are a random pair, which yields an isomorphic
    graph under a random relabeling inside each block.
    """
    k, s = spec.num_cliques, spec.clique_size
    n = k * s
    adj = np.zeros((n, n), dtype=bool)
    for c in range(k):
        block = slice(c * s, (c + 1) * s)
        adj[block, block] = True
    np.fill_diagonal(adj, False)
    rng = None if seed is None else np.random.default_rng(seed)
    pairs = []
    for c in range(k):
        if rng is None:
            a, b = c * s, c * s + 1
        else:
            a, b = (c * s + rng.choice(s, size=2, replace=False)).tolist()
        pairs.append((a, b))
    for c, (a, b) in enumerate(pairs):
        adj[a, b] = adj[b, a] = False
    for c, (a, _) in enumerate(pairs):
        nxt = pairs[(c + 1) % k][0]
        adj[a, nxt] = adj[nxt, a] = True
    return adj


def connected_caveman(spec: CavemanSpec, seed: int | None = None) -> CompatibilityGraph:
    """Unit-weight caveman graph; the adjacency itself carries the degree signal."""
    w = caveman_adjacency(spec, seed).astype(float)
    w.setflags(write=False)
    return CompatibilityGraph(w=w, w_sog=w, degree=w.sum(axis=1))


def caveman_second_order(spec: CavemanSpec, seed: int | None = None) -> CompatibilityGraph:
    """Caveman adjacency pushed through the second-order construction."""
    return graph_from_weights(caveman_adjacency(spec, seed).astype(float))


def nn_match(features_source, features_target, points_source, points_target) -> np.ndarray:
    """Pair each source point with its nearest target in feature space (ties: lower index)."""
    fs = np.atleast_2d(np.asarray(features_source, dtype=float))
    ft = np.atleast_2d(np.asarray(features_target, dtype=float))
    ps = np.asarray(points_source, dtype=float).reshape(-1, 3)
    pt = np.asarray(points_target, dtype=float).reshape(-1, 3)
    if fs.shape[1] != ft.shape[1]:
        raise ValueError(f"feature dimensions differ: {fs.shape[1]} vs {ft.shape[1]}")
    if fs.shape[0] != ps.shape[0] or ft.shape[0] != pt.shape[0]:
        raise ValueError("each feature needs exactly one point")
    rows = max(1, 4_000_000 // max(1, ft.shape[0] * ft.shape[1]))
    match = np.empty(fs.shape[0], dtype=np.intp)
    for lo in range(0, fs.shape[0], rows):
        block = fs[lo : lo + rows]
        # explicit differences keep exact ties exact
        d2 = ((block[:, None, :] - ft[None, :, :]) ** 2).sum(axis=2)
        match[lo : lo + rows] = np.argmin(d2, axis=1)
    return as_correspondences(np.hstack([ps, pt[match]]))
