"""Sampling distributions and node samplers for correspondence graphs.

The production sampler turns a filter response into a probability vector and
draws nodes from it.  The deterministic greedy sampler and the random, 6D-FPS
and xyz-signal samplers are kept alongside as baselines and oracles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .corr_graph import CompatibilityGraph, as_correspondences
from .gsp import (
    GraphShift,
    all_pass,
    apply_filter,
    decompose,
    haar_high_pass,
    haar_low_pass,
    laplacian_response,
    normalize_shift,
    random_walk_shift,
)

log = logging.getLogger(__name__)

MAGNITUDE_MODES = ("squared", "abs")
SAMPLERS = ("degree", "random", "fps", "xyz", "greedy", "degree_xyz")
FILTERS = ("laplacian", "high", "low", "all")
XYZ_COMBINE = ("source_only", "target_only", "both")

_DEGENERATE_MASS = 1e-12


@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    pi: np.ndarray
    magnitude_mode: str = "squared"
    source: str = ""
    degenerate: bool = False

    @property
    def n(self) -> int:
        return int(self.pi.shape[0])

    def to_csv(self) -> str:
        lines = ["index,pi"]
        lines.extend(f"{i},{p!r}" for i, p in enumerate(self.pi.tolist()))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class SampleSelection:
    indices: np.ndarray
    replacement: bool = False
    seed: int | None = None
    topped_up: int = 0

    def __len__(self) -> int:
        return int(self.indices.shape[0])


def node_magnitude(f, mode: str = "squared") -> np.ndarray:
    """Per-node ``||f_i||`` (abs) or ``||f_i||^2`` (squared); rows of 2D input are nodes."""
    if mode not in MAGNITUDE_MODES:
        raise ValueError(f"magnitude mode must be one of {MAGNITUDE_MODES}, got {mode!r}")
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("filter response contains non-finite values")
    sq = f**2 if f.ndim == 1 else np.sum(f**2, axis=tuple(range(1, f.ndim)))
    return sq if mode == "squared" else np.sqrt(sq)


def response_to_distribution(f, mode: str = "squared", source: str = "") -> SamplingDistribution:
    mag = node_magnitude(f, mode)
    n = mag.shape[0]
    if n == 0:
        raise ValueError("empty response")
    total = float(mag.sum())
    if total < _DEGENERATE_MASS:
        pi = np.full(n, 1.0 / n)
        degenerate = True
    else:
        pi = mag / total
        degenerate = False
    pi.setflags(write=False)
    return SamplingDistribution(pi=pi, magnitude_mode=mode, source=source, degenerate=degenerate)


def filtered_degree(graph: CompatibilityGraph, filter: str = "laplacian") -> np.ndarray:
    """Response of the generalized degree signal to one of the four filters."""
    s = graph.degree
    if filter == "laplacian":
        return laplacian_response(graph)
    if filter == "high":
        return apply_filter(haar_high_pass(normalize_shift(graph.w_sog)), s)
    if filter == "low":
        return apply_filter(haar_low_pass(random_walk_shift(graph.w_sog)), s)
    if filter == "all":
        return apply_filter(all_pass(graph.n), s)
    raise ValueError(f"filter must be one of {FILTERS}, got {filter!r}")


def degree_distribution(
    graph: CompatibilityGraph, filter: str = "laplacian", mode: str = "squared"
) -> SamplingDistribution:
    return response_to_distribution(filtered_degree(graph, filter), mode, source=f"{filter}:degree")


def stochastic_sample(dist, m: int, seed: int = 0, replacement: bool = False) -> SampleSelection:
    """Draw ``m`` nodes from ``dist``.

    Without replacement the result has the law of sequential weighted draws
    with renormalization after every pick; it is computed in one pass with
    exponential race keys so the cost does not grow with ``m``.  If fewer than
    ``m`` nodes carry mass, the remainder is drawn uniformly from the rest.
    """
    pi = dist.pi if isinstance(dist, SamplingDistribution) else np.asarray(dist, dtype=float)
    n = pi.shape[0]
    m = int(m)
    if m < 1:
        raise ValueError(f"sample size must be at least 1, got {m}")
    rng = np.random.default_rng(seed)
    if replacement:
        p = pi / pi.sum()
        return SampleSelection(rng.choice(n, size=m, p=p), replacement=True, seed=seed)
    if m > n:
        raise ValueError(f"cannot draw {m} distinct nodes from {n}")

    support = np.flatnonzero(pi > 0)
    keys = rng.exponential(size=support.size) / pi[support]
    # a full sort keeps the cost flat in m and returns picks in draw order
    chosen = support[np.argsort(keys, kind="stable")[:m]]
    missing = m - chosen.size
    if missing:
        rest = np.setdiff1d(np.arange(n), support)
        log.info("topping up %d of %d samples uniformly from zero-probability nodes", missing, m)
        chosen = np.concatenate([chosen, rng.permutation(rest)[:missing]])
    return SampleSelection(chosen, seed=seed, topped_up=missing)


def random_sample(n: int, m: int, seed: int = 0) -> SampleSelection:
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    return SampleSelection(rng.choice(n, size=m, replace=False), seed=seed)


def fps_sample_6d(corrs, m: int, seed: int = 0, start: int | None = None) -> SampleSelection:
    """Farthest-point sampling with each correspondence treated as a 6D point."""
    x = as_correspondences(corrs)
    n = x.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(m, dtype=np.intp)
    chosen[0] = start
    nearest = np.linalg.norm(x - x[start], axis=1)
    for k in range(1, m):
        nxt = int(np.argmax(nearest))
        chosen[k] = nxt
        np.minimum(nearest, np.linalg.norm(x - x[nxt], axis=1), out=nearest)
    return SampleSelection(chosen, seed=seed)


def knn_high_pass_magnitude(points, knn_k: int) -> np.ndarray:
    """``||(I - D^-1 W) X||`` per point on a directed unweighted kNN graph."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if knn_k < 1:
        raise ValueError(f"knn_k must be at least 1, got {knn_k}")
    if n <= knn_k:
        raise ValueError(f"need more than knn_k={knn_k} points, got {n}")
    _, idx = cKDTree(pts).query(pts, k=knn_k + 1)
    rows = np.arange(n)[:, None]
    # drop self from each neighbor list; with duplicate points self may not come first
    is_self = idx == rows
    has_self = is_self.any(axis=1)
    keep = ~is_self
    keep[~has_self, -1] = False
    neigh = idx[keep].reshape(n, knn_k)
    q = pts - pts[neigh].mean(axis=1)
    return np.linalg.norm(q, axis=1)


def _unit_rescale(v: np.ndarray) -> np.ndarray:
    top = float(np.max(v)) if v.size else 0.0
    return v / top if top > _DEGENERATE_MASS else np.zeros_like(v)


def xyz_signal_distribution(corrs, knn_k: int = 10, combine: str = "both") -> SamplingDistribution:
    """Contour-style distribution from high-passed source/target coordinates."""
    if combine not in XYZ_COMBINE:
        raise ValueError(f"combine must be one of {XYZ_COMBINE}, got {combine!r}")
    x = as_correspondences(corrs)
    total = np.zeros(x.shape[0])
    if combine in ("source_only", "both"):
        total += _unit_rescale(knn_high_pass_magnitude(x[:, :3], knn_k))
    if combine in ("target_only", "both"):
        total += _unit_rescale(knn_high_pass_magnitude(x[:, 3:], knn_k))
    return response_to_distribution(total, "abs", source=f"haar_high:xyz:{combine}")


def combined_distribution(*dists: SamplingDistribution, source: str = "combined") -> SamplingDistribution:
    """Sum of max-rescaled distributions, renormalized."""
    total = sum(_unit_rescale(np.asarray(d.pi)) for d in dists)
    return response_to_distribution(total, "abs", source=source)


def expected_reconstruction_error(dist, f, m: int = 1) -> float:
    """Closed-form ``E||S Psi^T Psi f - f||^2`` for ``m`` i.i.d. draws.

    ``S`` scales a drawn node ``k`` by ``1 / (m * pi_k)``, which makes the
    estimator unbiased; its variance is ``sum_i (1/pi_i - 1) ||f_i||^2 / m``.
    Returns ``inf`` if a node with nonzero response has zero probability.
    """
    pi = dist.pi if isinstance(dist, SamplingDistribution) else np.asarray(dist, dtype=float)
    energy = node_magnitude(f, "squared")
    live = energy > 0
    if np.any(live & (pi <= 0)):
        return math.inf
    return float(np.sum((1.0 / pi[live] - 1.0) * energy[live]) / m)


def interpolate_samples(f, indices, pi, m: int | None = None) -> np.ndarray:
    """``S Psi^T Psi f``: scatter sampled values back, scaled by ``1/(m pi)``."""
    f = np.asarray(f, dtype=float)
    idx = np.asarray(indices)
    m = idx.size if m is None else m
    counts = np.bincount(idx, minlength=f.shape[0]).astype(float)
    pi = np.asarray(pi, dtype=float)
    scale = np.divide(counts, m * pi, out=np.zeros_like(counts), where=pi > 0)
    return scale.reshape((-1,) + (1,) * (f.ndim - 1)) * f


# -- deterministic greedy oracle ------------------------------------------------------


def _arrow_min_eig(d: np.ndarray, z: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of ``[[diag(d), z], [z^T, c]]`` for each column of ``z``.

    Root of the secular function ``c - x - sum(z^2 / (d - x))`` below
    ``min(d)``; safeguarded Newton on the bracket ``[0, min(c, d_min)]``.
    """
    d0 = d[0]
    out = np.zeros(c.shape[0])
    live = (c > 0) & (d0 > 0)
    if not np.any(live):
        return out
    z2 = z[:, live] ** 2
    cc = c[live]
    lo = np.zeros(cc.shape[0])
    hi = np.minimum(cc, d0)
    x = lo.copy()
    # a root pinned at a pole overflows the Newton step; bisection takes over
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        x = _secular_iterate(d, z2, cc, lo, hi, x)
    out[live] = x
    return out


def _secular_iterate(d, z2, cc, lo, hi, x):
    for _ in range(100):
        gap = d[:, None] - x[None, :]
        gap = np.where(gap > 0, gap, np.finfo(float).tiny)
        q = z2 / gap
        g = cc - x - q.sum(axis=0)
        gp = -1.0 - (q / gap).sum(axis=0)
        lo = np.where(g >= 0, x, lo)
        hi = np.where(g < 0, x, hi)
        step = x - g / gp
        ok = (step > lo) & (step < hi)
        nxt = np.where(ok, step, 0.5 * (lo + hi))
        done = np.abs(nxt - x) <= 4 * np.finfo(float).eps * np.maximum(np.abs(x), 1e-300)
        x = nxt
        if np.all(done | (hi - lo <= 4 * np.finfo(float).eps * hi)):
            break
    return x


def candidate_sigma_min(vk: np.ndarray, selected) -> np.ndarray:
    """Smallest singular value of ``vk[selected + [r]]`` for every row ``r``."""
    sel = list(selected)
    n, k = vk.shape
    if not sel:
        return np.linalg.norm(vk, axis=1)
    a = vk[sel]
    if len(sel) < k:
        d, q = np.linalg.eigh(a @ a.T)
        d = np.clip(d, 0.0, None)
        z = q.T @ (a @ vk.T)
        c = np.einsum("ij,ij->i", vk, vk)
        lam = _arrow_min_eig(d, z, c)
    else:
        gram = a.T @ a
        lam = np.empty(n)
        for lo in range(0, n, 256):
            rows = vk[lo : lo + 256]
            stack = gram[None, :, :] + rows[:, :, None] * rows[:, None, :]
            lam[lo : lo + 256] = np.linalg.eigvalsh(stack)[:, 0]
    return np.sqrt(np.clip(lam, 0.0, None))


def greedy_deterministic_sample(shift, m: int, k: int | None = None, tie_tol: float = 1e-12) -> SampleSelection:
    """Greedy maximization of the smallest singular value of the sampled eigenbasis.

    Uses the first ``k`` eigenvectors (descending eigenvalues) of a symmetric
    shift; ``k`` defaults to ``m``.  Ties go to the lowest row index.
    """
    if not isinstance(shift, GraphShift):
        shift = normalize_shift(shift)
    n = shift.n
    k = m if k is None else int(k)
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    vk = decompose(shift).eigenvectors[:, :k]
    selected: list[int] = []
    free = np.ones(n, dtype=bool)
    for _ in range(m):
        score = candidate_sigma_min(vk, selected)
        score[~free] = -np.inf
        best = np.max(score)
        pick = int(np.flatnonzero(score >= best - tie_tol)[0])
        selected.append(pick)
        free[pick] = False
    return SampleSelection(np.array(selected, dtype=np.intp))


# -- sampler dispatch -------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    sampler: str = "degree"
    filter: str = "laplacian"
    magnitude_mode: str = "squared"
    knn_k: int = 10
    xyz_combine: str = "both"
    greedy_bandwidth: int | None = None

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if self.magnitude_mode not in MAGNITUDE_MODES:
            raise ValueError(f"magnitude mode must be one of {MAGNITUDE_MODES}")

    @property
    def needs_graph(self) -> bool:
        return self.sampler in ("degree", "greedy", "degree_xyz")


def sampler_distribution(corrs, graph: CompatibilityGraph | None, cfg: SamplerConfig) -> SamplingDistribution | None:
    """Distribution behind a probabilistic sampler, or None for random/fps/greedy."""
    if cfg.sampler == "degree":
        return degree_distribution(graph, cfg.filter, cfg.magnitude_mode)
    if cfg.sampler == "xyz":
        return xyz_signal_distribution(corrs, cfg.knn_k, cfg.xyz_combine)
    if cfg.sampler == "degree_xyz":
        return combined_distribution(
            degree_distribution(graph, cfg.filter, cfg.magnitude_mode),
            xyz_signal_distribution(corrs, cfg.knn_k, cfg.xyz_combine),
            source="degree+xyz",
        )
    return None


def draw(corrs, graph, m: int, seed: int, cfg: SamplerConfig) -> tuple[SampleSelection, SamplingDistribution | None]:
    n = as_correspondences(corrs).shape[0]
    dist = sampler_distribution(corrs, graph, cfg)
    if dist is not None:
        return stochastic_sample(dist, m, seed, replacement=False), dist
    if cfg.sampler == "random":
        return random_sample(n, m, seed), None
    if cfg.sampler == "fps":
        return fps_sample_6d(corrs, m, seed), None
    return greedy_deterministic_sample(normalize_shift(graph.w_sog), m, cfg.greedy_bandwidth), None
