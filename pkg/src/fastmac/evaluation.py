"""Registration metrics, sweep drivers and CSV reporting."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .registration import STAGES, PipelineConfig, RegistrationResult, RigidTransform, fastmac_register
from .sampling import SamplerConfig

log = logging.getLogger(__name__)

ROW_HEADER = (
    "sampler", "ratio", "seed", "re_deg", "te", "success",
    "t_sampling_ms", "t_gc_ms", "t_mcs_ms", "t_ncs_ms", "t_pe_ms",
)
STAGE_COLUMNS = dict(zip(STAGES, ROW_HEADER[6:]))

# sampler labels understood by run_sweep beyond the plain sampler names
VARIANTS = {
    "degree": SamplerConfig("degree"),
    "random": SamplerConfig("random"),
    "fps": SamplerConfig("fps"),
    "xyz": SamplerConfig("xyz"),
    "greedy": SamplerConfig("greedy"),
    "degree_xyz": SamplerConfig("degree_xyz"),
    "high": SamplerConfig("degree", filter="laplacian"),
    "haar_high": SamplerConfig("degree", filter="high"),
    "low": SamplerConfig("degree", filter="low", magnitude_mode="abs"),
    "all": SamplerConfig("degree", filter="all", magnitude_mode="abs"),
    # signal-ablation codes: source xyz / target xyz / degree
    "000": SamplerConfig("random"),
    "110": SamplerConfig("xyz", xyz_combine="both"),
    "001": SamplerConfig("degree"),
    "111": SamplerConfig("degree_xyz", xyz_combine="both"),
}


@dataclass(frozen=True)
class MetricThresholds:
    re_max: float = 15.0
    te_max: float = 0.3

    def __post_init__(self):
        if not (self.re_max > 0 and self.te_max > 0):
            raise ValueError("metric thresholds must be positive")


INDOOR = MetricThresholds(15.0, 0.3)
OUTDOOR = MetricThresholds(5.0, 0.6)


def rotation_error(r_est, r_gt) -> float:
    """Geodesic angle between two rotations, in degrees."""
    r_est = np.asarray(r_est, dtype=float)
    r_gt = np.asarray(r_gt, dtype=float)
    rel = r_gt.T @ r_est
    cos = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    # atan2 keeps full precision near 0 where arccos bottoms out around 1e-6 degrees
    sin = 0.5 * np.linalg.norm([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    return float(np.degrees(np.arctan2(sin, cos)))


def translation_error(t_est, t_gt) -> float:
    return float(np.linalg.norm(np.asarray(t_est, dtype=float) - np.asarray(t_gt, dtype=float)))


def is_success(re: float, te: float, thresholds: MetricThresholds) -> bool:
    return bool(re <= thresholds.re_max and te <= thresholds.te_max)


def registration_recall(results: Iterable, thresholds: MetricThresholds = INDOOR) -> float:
    """Fraction of runs within both thresholds.

    Items are ``(re, te)`` pairs or objects with ``re_deg``/``te``; ``None``
    and NaN entries are failed runs and count as unsuccessful.
    """
    total = hits = 0
    for item in results:
        total += 1
        if item is None:
            continue
        re, te = (item.re_deg, item.te) if hasattr(item, "re_deg") else item
        if re is not None and te is not None and is_success(re, te, thresholds):
            hits += 1
    return hits / total if total else 0.0


@dataclass
class SweepRow:
    sampler: str
    ratio: float
    seed: int
    re_deg: float
    te: float
    success: bool
    timings: dict[str, float]
    scene: int = 0
    wall_ms: float = math.nan
    error: str = ""
    flags: dict[str, bool] = field(default_factory=dict)
    contended: bool = False

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass
class SweepReport:
    rows: list[SweepRow]
    aggregates: dict[tuple[str, float], dict[str, float]]

    def recall(self, sampler: str, ratio: float) -> float:
        return self.aggregates[(sampler, ratio)]["rr"]

    def mean_recall(self, sampler: str, ratios: Sequence[float]) -> float:
        return float(np.mean([self.recall(sampler, r) for r in ratios]))

    def rows_csv(self, mask_timings: bool = False) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(ROW_HEADER)
        for r in self.rows:
            times = [0.0 if mask_timings else r.timings.get(s, 0.0) for s in STAGES]
            out.writerow([r.sampler, _num(r.ratio), r.seed, _num(r.re_deg), _num(r.te), int(r.success), *map(_num, times)])
        return buf.getvalue()

    def aggregates_csv(self, mask_timings: bool = False) -> str:
        cols = ["rr", "runs", "failures", "re_mean", "re_var", "te_mean", "te_var"]
        for c in ROW_HEADER[6:]:
            cols += [f"{c}_mean", f"{c}_var"]
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["sampler", "ratio", *cols])
        for (sampler, ratio), agg in self.aggregates.items():
            vals = [0.0 if (mask_timings and c.startswith("t_")) else agg[c] for c in cols]
            out.writerow([sampler, _num(ratio), *map(_num, vals)])
        return buf.getvalue()

    def table(self, ratios: Sequence[float], samplers: Sequence[str]) -> list[dict]:
        """Rows per ratio with RR (%), mean RE and mean TE per sampler column."""
        table = []
        for ratio in ratios:
            row = {"ratio": ratio}
            for s in samplers:
                agg = self.aggregates[(s, ratio)]
                row[s] = {"rr": 100.0 * agg["rr"], "re": agg["re_mean"], "te": agg["te_mean"]}
            table.append(row)
        return table


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _stats(values) -> tuple[float, float]:
    arr = np.array([v for v in values if v is not None and not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.var())


def aggregate(rows: Sequence[SweepRow]) -> dict[tuple[str, float], dict[str, float]]:
    groups: dict[tuple[str, float], list[SweepRow]] = {}
    for r in rows:
        groups.setdefault((r.sampler, r.ratio), []).append(r)
    out = {}
    for key in sorted(groups, key=lambda k: (k[0], -k[1])):
        g = sorted(groups[key], key=lambda r: (r.scene, r.seed))
        agg = {
            "rr": sum(r.success for r in g) / len(g),
            "runs": float(len(g)),
            "failures": float(sum(r.failed for r in g)),
        }
        agg["re_mean"], agg["re_var"] = _stats(r.re_deg for r in g)
        agg["te_mean"], agg["te_var"] = _stats(r.te for r in g)
        for stage, col in STAGE_COLUMNS.items():
            agg[f"{col}_mean"], agg[f"{col}_var"] = _stats(r.timings.get(stage, math.nan) for r in g)
        out[key] = agg
    return out


def variant_config(label: str, base: SamplerConfig) -> SamplerConfig:
    """Sampler config for a sweep label, inheriting tunables from ``base``.

    ``low`` and ``all`` keep their fixed abs magnitude; the plain ``degree``
    label also inherits the filter choice.
    """
    variant = VARIANTS.get(label) or SamplerConfig(label)
    overrides = {"knn_k": base.knn_k, "greedy_bandwidth": base.greedy_bandwidth}
    if label not in ("low", "all"):
        overrides["magnitude_mode"] = base.magnitude_mode
    if label == "degree":
        overrides["filter"] = base.filter
    return replace(variant, **overrides)


def _run_one(scene, scene_idx, label, ratio, seed, base: PipelineConfig, thresholds) -> SweepRow:
    cfg = replace(base, ratio=ratio, seed=seed, sampler=variant_config(label, base.sampler))
    corrs, truth = scene.corrs, scene.transform
    tick = time.perf_counter()
    try:
        res: RegistrationResult = fastmac_register(corrs, cfg)
    except Exception as exc:  # failed runs are kept and count as unsuccessful
        wall = (time.perf_counter() - tick) * 1e3
        log.debug("run failed: %s %s %s: %s", label, ratio, seed, exc)
        return SweepRow(label, ratio, seed, math.nan, math.nan, False, dict.fromkeys(STAGES, math.nan),
                        scene_idx, wall, f"{type(exc).__name__}: {exc}")
    wall = (time.perf_counter() - tick) * 1e3
    re = rotation_error(res.transform.rotation, truth.rotation)
    te = translation_error(res.transform.translation, truth.translation)
    return SweepRow(label, ratio, seed, re, te, is_success(re, te, thresholds), dict(res.stage_timings),
                    scene_idx, wall, flags=dict(res.flags))


def run_sweep(
    scenes: Sequence,
    samplers: Sequence[str],
    ratios: Sequence[float],
    seeds: Sequence[int],
    cfg: PipelineConfig = PipelineConfig(),
    thresholds: MetricThresholds = INDOOR,
    threads: int = 1,
) -> SweepReport:
    """Run every (scene, sampler, ratio, seed) combination and aggregate.

    ``scenes`` items need ``corrs`` and ``transform`` attributes.  Rows come
    back in cross-product order regardless of ``threads``.
    """
    jobs = [
        (scene, i, label, float(ratio), int(seed))
        for i, scene in enumerate(scenes)
        for label in samplers
        for ratio in ratios
        for seed in seeds
    ]
    contended = threads > (os.cpu_count() or 1)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(lambda j: _run_one(*j, cfg, thresholds), jobs))
    else:
        rows = [_run_one(*j, cfg, thresholds) for j in jobs]
    for r in rows:
        r.contended = contended
    return SweepReport(rows, aggregate(rows))


def filter_ablation(
    scenes: Sequence,
    cfg: PipelineConfig = PipelineConfig(),
    ratios: Sequence[float] = (0.5, 0.2, 0.1, 0.05, 0.01),
    seeds: Sequence[int] = (0,),
    thresholds: MetricThresholds = INDOOR,
    threads: int = 1,
) -> SweepReport:
    """High-pass (Laplacian) vs all-pass vs low-pass degree distributions."""
    return run_sweep(scenes, ("high", "all", "low"), ratios, seeds, cfg, thresholds, threads)


def signal_ablation(
    scenes: Sequence,
    cfg: PipelineConfig = PipelineConfig(),
    ratios: Sequence[float] = (0.5, 0.2, 0.1, 0.05, 0.01),
    seeds: Sequence[int] = (0,),
    thresholds: MetricThresholds = INDOOR,
    threads: int = 1,
) -> SweepReport:
    """Random (000) vs xyz (110) vs degree (001) vs degree + xyz (111)."""
    return run_sweep(scenes, ("000", "110", "001", "111"), ratios, seeds, cfg, thresholds, threads)


def pose_errors(tf: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    return rotation_error(tf.rotation, truth.rotation), translation_error(tf.translation, truth.translation)
