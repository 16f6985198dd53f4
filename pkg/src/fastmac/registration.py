"""Pose hypotheses from cliques and the sampled maximal-clique registration pipeline."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .clique import Clique, CliqueBudget, maximal_cliques, node_guided_selection
from .corr_graph import GraphConfig, as_correspondences, build_graph
from .sampling import SamplerConfig, draw

STAGES = ("Sampling", "GC", "MCS", "NCS", "PE")
SCORE_METRICS = ("inlier_count", "truncated_mae")


class DegenerateClique(ValueError):
    """Too few or collinear correspondences to fix a rigid pose."""


class InsufficientStructure(RuntimeError):
    """No clique of size three or more survived; no hypothesis can be formed."""


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self after other``."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def is_proper(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(np.allclose(r.T @ r, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) <= tol)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }


@dataclass(frozen=True)
class PipelineConfig:
    ratio: float = 1.0
    seed: int = 0
    graph: GraphConfig = field(default_factory=GraphConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    inlier_threshold: float = 0.1
    budget: CliqueBudget = field(default_factory=CliqueBudget)
    score_metric: str = "inlier_count"
    pose_weights: str = "equal"
    strict: bool = True
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if self.score_metric not in SCORE_METRICS:
            raise ValueError(f"score_metric must be one of {SCORE_METRICS}")
        if self.pose_weights not in ("equal", "clique"):
            raise ValueError("pose_weights must be 'equal' or 'clique'")

    def sample_size(self, n: int) -> int:
        return min(n, max(3, math.ceil(self.ratio * n - 1e-9)))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RegistrationResult:
    transform: RigidTransform
    best_score: float
    hypothesis_count: int
    stage_timings: dict[str, float]
    flags: dict[str, bool]
    sampled: np.ndarray | None = None
    best_clique: tuple[int, ...] = ()

    @property
    def total_ms(self) -> float:
        return float(sum(self.stage_timings.values()))

    def to_dict(self, mask_timings: bool = False) -> dict:
        out = {
            **self.transform.to_dict(),
            "score": float(self.best_score),
            "hypothesis_count": int(self.hypothesis_count),
            "timings_ms": {k: (0.0 if mask_timings else float(self.stage_timings[k])) for k in STAGES},
            "flags": {k: bool(v) for k, v in sorted(self.flags.items())},
        }
        return out

    def to_json(self, mask_timings: bool = False, **extra) -> str:
        return json.dumps({**self.to_dict(mask_timings), **extra}, indent=2, sort_keys=False) + "\n"


def estimate_pose_svd(corrs, weights=None) -> RigidTransform:
    """Weighted least-squares rigid transform from source to target points."""
    x = as_correspondences(corrs)
    if x.shape[0] < 3:
        raise DegenerateClique(f"need at least 3 correspondences, got {x.shape[0]}")
    src, tgt = x[:, :3], x[:, 3:]
    w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (x.shape[0],) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be a nonnegative vector with positive mass")
    w = w / w.sum()
    mu_s, mu_t = w @ src, w @ tgt
    ds, dt = src - mu_s, tgt - mu_t
    h = (ds * w[:, None]).T @ dt
    u, sv, vt = np.linalg.svd(h)
    scale = max(sv[0], np.finfo(float).tiny)
    if sv[1] <= 1e-10 * scale or np.linalg.matrix_rank(ds * np.sqrt(w)[:, None], tol=1e-9 * max(1.0, np.abs(ds).max())) < 2:
        raise DegenerateClique("correspondences are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = mu_t - r @ mu_s
    return RigidTransform(r, t)


def residuals(tf: RigidTransform, corrs) -> np.ndarray:
    x = as_correspondences(corrs)
    return np.linalg.norm(tf.apply(x[:, :3]) - x[:, 3:], axis=1)


def hypothesis_score(tf: RigidTransform, full_corrs, inlier_threshold: float = 0.1, metric: str = "inlier_count") -> float:
    """Consensus of a pose over the full correspondence set."""
    err = residuals(tf, full_corrs)
    inl = err <= inlier_threshold
    if metric == "inlier_count":
        return float(np.count_nonzero(inl))
    if metric == "truncated_mae":
        return float(np.sum((inlier_threshold - err[inl]) / inlier_threshold))
    raise ValueError(f"unknown score metric {metric!r}")


def _clique_weights(w_sog: np.ndarray, nodes) -> np.ndarray:
    idx = np.asarray(nodes, dtype=np.intp)
    return w_sog[np.ix_(idx, idx)].sum(axis=1)


def fastmac_register(corrs, cfg: PipelineConfig = PipelineConfig()) -> RegistrationResult:
    """Sample the correspondence graph, then run maximal-clique registration.

    Stage clocks: Sampling covers the full-graph degree signal, filtering and
    the draw; GC builds the graph on the kept correspondences; MCS, NCS and
    PE are clique search, node-guided selection and pose estimation.  At
    ratio 1 nothing is sampled and the Sampling stage is empty.
    """
    x = as_correspondences(corrs)
    n = x.shape[0]
    if n < 3:
        raise InsufficientStructure(f"need at least 3 correspondences, got {n}")
    flags = {"truncated_cliques": False, "degenerate_distribution": False, "insufficient_structure": False}
    timings = dict.fromkeys(STAGES, 0.0)
    m = cfg.sample_size(n)

    tick = time.perf_counter()
    if m >= n:
        kept = np.arange(n)
    else:
        full = build_graph(x, cfg.graph) if cfg.sampler.needs_graph else None
        selection, dist = draw(x, full, m, cfg.seed, cfg.sampler)
        flags["degenerate_distribution"] = bool(dist is not None and dist.degenerate)
        kept = np.sort(selection.indices)
    tock = time.perf_counter()
    timings["Sampling"] = (tock - tick) * 1e3

    tick = tock
    sub = x[kept]
    graph = build_graph(sub, cfg.graph)
    tock = time.perf_counter()
    timings["GC"] = (tock - tick) * 1e3

    tick = tock
    search = maximal_cliques(graph, cfg.budget)
    flags["truncated_cliques"] = not search.complete
    tock = time.perf_counter()
    timings["MCS"] = (tock - tick) * 1e3

    tick = tock
    candidates = [c for c in search.cliques if len(c) >= 3]
    selected = node_guided_selection(candidates) if candidates else []
    tock = time.perf_counter()
    timings["NCS"] = (tock - tick) * 1e3

    tick = tock

    def evaluate(c: Clique):
        weights = _clique_weights(graph.w_sog, c.nodes) if cfg.pose_weights == "clique" else None
        try:
            tf = estimate_pose_svd(sub[list(c.nodes)], weights)
        except DegenerateClique:
            return None
        return tf, hypothesis_score(tf, x, cfg.inlier_threshold, cfg.score_metric)

    if cfg.threads > 1 and len(selected) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            scored = list(pool.map(evaluate, selected))
    else:
        scored = [evaluate(c) for c in selected]

    best = None
    count = 0
    for c, res in zip(selected, scored):
        if res is None:
            continue
        count += 1
        tf, score = res
        key = (-score, tuple(int(kept[i]) for i in c.nodes))
        if best is None or key < best[0]:
            best = (key, tf, score)
    tock = time.perf_counter()
    timings["PE"] = (tock - tick) * 1e3

    if best is None:
        if cfg.strict:
            raise InsufficientStructure("no clique of size >= 3 yields a pose hypothesis")
        flags["insufficient_structure"] = True
        return RegistrationResult(RigidTransform.identity(), 0.0, 0, timings, flags, kept)
    key, tf, score = best
    return RegistrationResult(tf, score, count, timings, flags, kept, key[1])
