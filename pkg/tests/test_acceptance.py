"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import csv
import io
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from fastmac.cli import main
from fastmac.clique import CliqueBudget, maximal_cliques
from fastmac.corr_graph import build_graph, graph_from_weights
from fastmac.evaluation import INDOOR, filter_ablation, rotation_error, run_sweep, translation_error
from fastmac.gsp import apply_filter, laplacian_filter, laplacian_response, normalize_shift
from fastmac.registration import PipelineConfig, fastmac_register
from fastmac.sampling import (
    expected_reconstruction_error,
    greedy_deterministic_sample,
    interpolate_samples,
    response_to_distribution,
    stochastic_sample,
)
from fastmac.synth import CavemanSpec, SceneSpec, connected_caveman, generate_scene
from oracles import brute_force_maximal_cliques, random_symmetric_adjacency, sog_triple_loop

pytestmark = pytest.mark.slow

STAGE_COLS = ("t_sampling_ms", "t_gc_ms", "t_mcs_ms", "t_ncs_ms", "t_pe_ms")
# clique search on a full 1000-node scene would otherwise run to the 10 s default per run
HARNESS_BUDGET = CliqueBudget(time_budget=1000.0)


def record(num: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[num] = (bool(ok), detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def harness_scenes():
    spec = dict(n_points=1000, inlier_ratio=0.3, noise_sigma=0.005, outlier_mode="shuffled_targets")
    return [generate_scene(SceneSpec(**spec, seed=1000 + i)) for i in range(50)]


def test_01_clique_oracle():
    rng = np.random.default_rng(1)
    densities = (0.2, 0.5, 0.8)
    mismatches = 0
    tick = time.perf_counter()
    for k in range(100):
        adj = random_symmetric_adjacency(rng, int(rng.integers(1, 13)), densities[k % 3])
        found = {c.nodes for c in maximal_cliques(adj.astype(float))}
        mismatches += found != brute_force_maximal_cliques(adj)
    elapsed = time.perf_counter() - tick
    record(1, mismatches == 0 and elapsed < 10.0, f"100 graphs, {mismatches} mismatches, {elapsed:.2f}s")


def test_02_graph_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 65))
        src = rng.uniform(0, 1, size=(n, 3))
        tgt = src + rng.normal(0, 0.002, size=(n, 3))
        n_out = int(rng.integers(0, n))
        tgt[:n_out] = rng.uniform(0, 1, size=(n_out, 3))
        corrs = np.hstack([src, tgt])
        _, sog = sog_triple_loop(corrs)
        worst = max(worst, float(np.max(np.abs(build_graph(corrs).w_sog - np.array(sog)))))
    record(2, worst <= 1e-12, f"50 sets, max |diff| = {worst:.2e}")


def test_03_filter_correctness():
    rng = np.random.default_rng(3)
    worst = 0.0
    for n in (1, 2, 8, 64, 128, 256):
        w = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.2), 1)
        g = graph_from_weights(w + w.T)
        c = rng.normal()
        worst = max(worst, float(np.max(np.abs(laplacian_response(g, np.full(n, c))))))
        worst = max(worst, float(np.max(np.abs(apply_filter(laplacian_filter(g), np.full(n, c))))))
    star_ok = True
    for scale in (1.0, 0.5, 2.0):
        w = np.zeros((4, 4))
        w[0, 1:] = w[1:, 0] = scale
        out = apply_filter(laplacian_filter(w), w.sum(axis=1))
        star_ok &= bool(np.array_equal(out, scale**2 * np.array([6.0, -2.0, -2.0, -2.0])))
    record(3, worst < 1e-12 and star_ok, f"constant residual {worst:.2e}, star pattern exact: {star_ok}")


def test_04_reconstruction_optimality():
    rng = np.random.default_rng(4)
    beaten = 0
    for _ in range(20):
        w = np.triu(rng.random((50, 50)) * (rng.random((50, 50)) < 0.3), 1)
        g = graph_from_weights(w + w.T)
        f = laplacian_response(g)
        best = expected_reconstruction_error(response_to_distribution(f, "abs"), f)
        rivals = [np.full(50, 1 / 50)]
        for _ in range(20):
            p = np.abs(f) * np.exp(rng.normal(0, 0.3, size=50)) + 1e-3 * np.abs(f).mean()
            rivals.append(p / p.sum())
        beaten += sum(expected_reconstruction_error(p, f) < best * (1 - 1e-12) for p in rivals)

    # Monte Carlo with i.i.d. draws: N = 16, m = 4, 1e5 trials
    n, m, trials = 16, 4, 100_000
    f = rng.normal(size=n)
    pi = response_to_distribution(f, "abs").pi
    draws = stochastic_sample(pi, m * trials, seed=4, replacement=True).indices.reshape(trials, m)
    counts = np.zeros((trials, n))
    np.add.at(counts, (np.repeat(np.arange(trials), m), draws.ravel()), 1.0)
    est = counts / (m * pi) * f
    assert np.allclose(est[0], interpolate_samples(f, draws[0], pi, m))
    mc = float(np.mean(np.sum((est - f) ** 2, axis=1)))
    closed = expected_reconstruction_error(pi, f, m=m)
    rel = abs(mc - closed) / closed
    z = np.abs(est.mean(axis=0) - f) / (est.std(axis=0, ddof=1) / np.sqrt(trials))
    ok = beaten == 0 and rel <= 0.05 and bool(np.all(z <= 3.0))
    record(4, ok, f"optimum beaten {beaten}/420, MC vs closed form {100 * rel:.2f}%, max |z| {z.max():.2f}")


def test_05_sampler_recall(harness_scenes):
    cfg = PipelineConfig(budget=HARNESS_BUDGET)
    tick = time.perf_counter()
    low = run_sweep(harness_scenes, ["degree", "random", "fps"], [0.05, 0.1], [0], cfg, INDOOR)
    full = run_sweep(harness_scenes, ["degree"], [1.0], [0], cfg, INDOOR)
    elapsed = time.perf_counter() - tick
    rr = {s: low.mean_recall(s, [0.05, 0.1]) for s in ("degree", "random", "fps")}
    at_01, at_1 = low.recall("degree", 0.1), full.recall("degree", 1.0)
    ok = rr["degree"] >= rr["random"] and rr["degree"] >= rr["fps"] and abs(at_01 - at_1) <= 0.05 and elapsed < 600
    detail = (f"RR degree {rr['degree']:.2f} random {rr['random']:.2f} fps {rr['fps']:.2f}; "
              f"degree@0.1 {at_01:.2f} vs @1.0 {at_1:.2f}; {elapsed:.0f}s")
    record(5, ok, detail)


def test_06_filter_ablation(harness_scenes):
    rep = filter_ablation(harness_scenes, PipelineConfig(budget=HARNESS_BUDGET), [0.05], [0], INDOOR)
    rr = {s: rep.recall(s, 0.05) for s in ("high", "all", "low")}
    ok = rr["high"] >= rr["all"] and rr["high"] >= rr["low"]
    record(6, ok, f"RR@0.05 high {rr['high']:.2f} all {rr['all']:.2f} low {rr['low']:.2f}")


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        tick = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tick)
    return float(np.median(times))


def test_07_timing_shape():
    rng = np.random.default_rng(7)
    pi = rng.random(5000)
    pi /= pi.sum()
    t_small = _median_time(lambda: stochastic_sample(pi, 50, seed=1), 51)
    t_large = _median_time(lambda: stochastic_sample(pi, 2500, seed=1), 51)
    w = np.triu(rng.random((1000, 1000)) * (rng.random((1000, 1000)) < 0.05), 1)
    shift = normalize_shift(w + w.T)
    g_small = _median_time(lambda: greedy_deterministic_sample(shift, 20), 3)
    g_large = _median_time(lambda: greedy_deterministic_sample(shift, 200), 1)
    ok = t_large <= 2 * t_small and g_large >= 5 * g_small
    record(7, ok, f"stochastic x{t_large / t_small:.2f} (<= 2), greedy x{g_large / g_small:.1f} (>= 5)")


def test_08_stage_accounting(tmp_path):
    assert main(["bench", "--output-dir", str(tmp_path), "--seed", "0"]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "bench.csv").read_text())))
    worst = max(abs(sum(float(r[c]) for c in STAGE_COLS) - float(r["t_wall_ms"])) / float(r["t_wall_ms"]) for r in rows)
    back = {float(r["ratio"]): sum(float(r[c]) for c in ("t_mcs_ms", "t_ncs_ms", "t_pe_ms")) for r in rows}
    faster = all(back[r] < back[1.0] for r in back if r <= 0.2)
    detail = f"max stage-sum gap {100 * worst:.2f}%, back-end ms " + ", ".join(f"{r}: {v:.0f}" for r, v in back.items())
    record(8, worst <= 0.05 and faster, detail)


def _top_k_tie_inclusive(values: np.ndarray, k: int) -> np.ndarray:
    cut = np.sort(values)[::-1][k - 1]
    return np.flatnonzero(values >= cut)


def test_09_caveman_coverage():
    spec = CavemanSpec(8, 6)
    failures = []
    for seed in [None] + list(range(20)):
        mag = np.abs(laplacian_response(connected_caveman(spec, seed)))
        hit = {int(i) // spec.clique_size for i in _top_k_tie_inclusive(mag, 8)}
        top24 = np.bincount(_top_k_tie_inclusive(mag, 24) // spec.clique_size, minlength=8)
        if len(hit) != 8 or np.sum(top24 >= 3) < 6:
            failures.append(seed)
    record(9, not failures, f"21 graphs (fixed + 20 seeds), failures: {failures}")


def test_10_exact_recovery():
    worst_re = worst_te = 0.0
    for seed in range(20):
        scene = generate_scene(SceneSpec(n_points=40, inlier_ratio=1.0, noise_sigma=0.0, seed=seed))
        for ratio in (0.5, 0.75, 1.0):
            res = fastmac_register(scene.corrs, PipelineConfig(ratio=ratio, seed=seed))
            worst_re = max(worst_re, rotation_error(res.transform.rotation, scene.transform.rotation))
            worst_te = max(worst_te, translation_error(res.transform.translation, scene.transform.translation))
    record(10, worst_re < 1e-6 and worst_te < 1e-8, f"worst RE {worst_re:.2e} deg, TE {worst_te:.2e}")


def _outputs(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix in (".csv", ".json") and p.name != "manifest.json"}


def test_11_cli_determinism(tmp_path):
    assert main(["synth", "--n-points", "300", "--seed", "11", "--output-dir", str(tmp_path / "data")]) == 0
    scene = str(tmp_path / "data" / "scene_000.txt")
    truth = str(tmp_path / "data" / "scene_000_truth.json")
    commands = {
        "sample": ["sample", "--input", scene, "--ratio", "0.1", "--seed", "5"],
        "register": ["register", "--input", scene, "--truth", truth, "--ratio", "0.2", "--seed", "5", "--mask-timings"],
        "bench": ["bench", "--input", scene, "--seed", "5", "--mask-timings"],
        "ablate": ["ablate", "--scenes", "2", "--n-points", "200", "--ratios", "0.2", "0.05", "--seeds", "0", "1", "--mask-timings"],
    }
    differing = []
    for name, argv in commands.items():
        produced = []
        for run, threads in enumerate(("1", "1", "4")):
            out = tmp_path / f"{name}_{run}"
            assert main(argv + ["--threads", threads, "--output-dir", str(out)]) == 0
            produced.append(_outputs(out))
            assert set(json.loads((out / "manifest.json").read_text())["outputs"]) == set(produced[-1])
        if not (produced[0] == produced[1] == produced[2] and produced[0]):
            differing.append(name)
    record(11, not differing, f"{len(commands)} commands x (2 runs, threads 1/4), differing: {differing}")
