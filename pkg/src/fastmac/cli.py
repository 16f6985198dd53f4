"""Command-line entry point: synth, sample, register, bench, ablate."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .clique import CliqueBudget
from .corr_graph import GraphConfig, build_graph, load_correspondences
from .evaluation import MetricThresholds, filter_ablation, pose_errors, run_sweep, signal_ablation
from .registration import STAGES, PipelineConfig, fastmac_register
from .sampling import FILTERS, MAGNITUDE_MODES, SAMPLERS, SamplerConfig, draw
from .synth import OUTLIER_MODES, Scene, SceneSpec, generate_scene, load_truth, save_scene

log = logging.getLogger("fastmac")

BENCH_RATIOS = (1.0, 0.5, 0.2, 0.1, 0.05, 0.01)
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--output-dir", type=Path, default=Path("."))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--mask-timings", action="store_true",
                        help="write zeros in timing fields (for byte-comparable outputs)")
    parser.add_argument("-v", "--verbose", action="store_true")


def _pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ratio", type=float, default=1.0)
    parser.add_argument("--sampler", choices=SAMPLERS, default="degree")
    parser.add_argument("--filter", choices=FILTERS, default="laplacian")
    parser.add_argument("--magnitude", choices=MAGNITUDE_MODES, default="squared")
    parser.add_argument("--knn-k", type=int, default=10)
    parser.add_argument("--d-cmp", type=float, default=0.1)
    parser.add_argument("--tau", type=float, default=0.999)
    parser.add_argument("--inlier-thresh", type=float, default=0.1)
    parser.add_argument("--max-cliques", type=int, default=10_000_000)
    parser.add_argument("--time-budget-ms", type=float, default=10_000.0)
    parser.add_argument("--re-max", type=float, default=15.0)
    parser.add_argument("--te-max", type=float, default=0.3)


def _scene_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-points", type=int, default=1000)
    parser.add_argument("--inlier-ratio", type=float, default=0.3)
    parser.add_argument("--noise", type=float, default=0.005)
    parser.add_argument("--outlier-mode", choices=OUTLIER_MODES, default="shuffled_targets")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastmac", description="Spectral sampling for maximal-clique registration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate synthetic scenes with ground truth")
    _common(p)
    _scene_flags(p)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("sample", help="write the sampling distribution and selection for a correspondence file")
    _common(p)
    _pipeline_flags(p)
    p.add_argument("--input", type=Path, required=True)

    p = sub.add_parser("register", help="register a correspondence file")
    _common(p)
    _pipeline_flags(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--truth", type=Path, help="ground-truth JSON; adds RE/TE to the result")

    p = sub.add_parser("bench", help="stage timings over the standard ratio ladder")
    _common(p)
    _pipeline_flags(p)
    _scene_flags(p)
    p.add_argument("--input", type=Path, help="correspondence file (default: a synthetic scene)")
    p.add_argument("--ratios", type=float, nargs="+", default=list(BENCH_RATIOS))
    p.add_argument("--repeats", type=int, default=1)

    p = sub.add_parser("ablate", help="sampler, filter or signal ablation sweeps")
    _common(p)
    _pipeline_flags(p)
    _scene_flags(p)
    p.add_argument("--kind", choices=("samplers", "filters", "signals"), default="samplers")
    p.add_argument("--samplers", nargs="+", default=["degree", "random", "fps"])
    p.add_argument("--ratios", type=float, nargs="+", default=[0.5, 0.2, 0.1, 0.05, 0.01])
    p.add_argument("--scenes", type=int, default=5, help="number of synthetic scenes")
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="sampler seeds (default: --seed)")
    return parser


def pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        ratio=args.ratio,
        seed=args.seed,
        graph=GraphConfig(d_cmp=args.d_cmp, t=args.tau),
        sampler=SamplerConfig(args.sampler, filter=args.filter, magnitude_mode=args.magnitude, knn_k=args.knn_k),
        inlier_threshold=args.inlier_thresh,
        budget=CliqueBudget(max_cliques=args.max_cliques, time_budget=args.time_budget_ms),
        threads=args.threads,
    )


def _scene_spec(args, seed: int) -> SceneSpec:
    return SceneSpec(n_points=args.n_points, inlier_ratio=args.inlier_ratio, noise_sigma=args.noise,
                     outlier_mode=args.outlier_mode, seed=seed)


def _config_echo(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func",):
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


class Run:
    """Tracks outputs of one command and writes its manifest."""

    def __init__(self, args, argv: list[str]):
        self.args = args
        self.argv = argv
        self.out = Path(args.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = datetime.now(timezone.utc).isoformat()
        self.outputs: list[str] = []

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.outputs.append(name)
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        return self.write(name, json.dumps({**payload, "manifest": MANIFEST}, indent=2) + "\n")

    def finish(self) -> None:
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "config": _config_echo(self.args),
            "seed": self.args.seed,
            "version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": self.outputs,
        }
        (self.out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def cmd_synth(args, run: Run) -> None:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    for i in range(args.count):
        scene = generate_scene(_scene_spec(args, args.seed + i))
        stem = f"scene_{i:03d}"
        save_scene(scene, run.out / f"{stem}.txt", run.out / f"{stem}_truth.json",
                   header=f"x y z u v w; manifest: {MANIFEST}", extra={"manifest": MANIFEST})
        run.outputs += [f"{stem}.txt", f"{stem}_truth.json"]


def cmd_sample(args, run: Run) -> None:
    cfg = pipeline_config(args)
    corrs = load_correspondences(args.input)
    n = corrs.shape[0]
    m = cfg.sample_size(n)
    graph = build_graph(corrs, cfg.graph) if cfg.sampler.needs_graph else None
    selection, dist = draw(corrs, graph, m, cfg.seed, cfg.sampler)
    chosen = np.zeros(n, dtype=bool)
    chosen[selection.indices] = True
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["index", "pi", "selected"])
    for i in range(n):
        out.writerow([i, "" if dist is None else repr(float(dist.pi[i])), int(chosen[i])])
    run.write("selection.csv", buf.getvalue())


def _load_input(args) -> np.ndarray:
    return load_correspondences(args.input)


def cmd_register(args, run: Run) -> None:
    cfg = pipeline_config(args)
    corrs = _load_input(args)
    res = fastmac_register(corrs, cfg)
    payload = res.to_dict(mask_timings=args.mask_timings)
    if args.truth:
        truth, _ = load_truth(args.truth)
        re, te = pose_errors(res.transform, truth)
        payload.update(re_deg=re, te=te, success=bool(re <= args.re_max and te <= args.te_max))
    run.write_json("result.json", payload)


def cmd_bench(args, run: Run) -> None:
    base = pipeline_config(args)
    if args.input:
        corrs = _load_input(args)
    else:
        corrs = generate_scene(_scene_spec(args, args.seed)).corrs
    cols = ["ratio", "seed", "repeat", "n", "m", "t_sampling_ms", "t_gc_ms", "t_mcs_ms", "t_ncs_ms", "t_pe_ms",
            "t_stage_sum_ms", "t_wall_ms", "score", "truncated", "insufficient"]
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(cols)
    for ratio in args.ratios:
        # a ratio too small to leave any clique is reported, not fatal
        cfg = replace(base, ratio=ratio, strict=False)
        for rep in range(args.repeats):
            tick = time.perf_counter()
            res = fastmac_register(corrs, cfg)
            wall = (time.perf_counter() - tick) * 1e3
            times = [res.stage_timings[s] for s in STAGES] + [res.total_ms, wall]
            if args.mask_timings:
                times = [0.0] * len(times)
            out.writerow([repr(ratio), cfg.seed, rep, corrs.shape[0], cfg.sample_size(corrs.shape[0]),
                          *map(repr, times), repr(res.best_score), int(res.flags["truncated_cliques"]),
                          int(res.flags["insufficient_structure"])])
    run.write("bench.csv", buf.getvalue())


def cmd_ablate(args, run: Run) -> None:
    cfg = pipeline_config(args)
    thresholds = MetricThresholds(args.re_max, args.te_max)
    scenes: list[Scene] = [generate_scene(_scene_spec(args, args.seed + i)) for i in range(args.scenes)]
    seeds = args.seeds if args.seeds is not None else [args.seed]
    if args.kind == "filters":
        report = filter_ablation(scenes, cfg, args.ratios, seeds, thresholds, args.threads)
    elif args.kind == "signals":
        report = signal_ablation(scenes, cfg, args.ratios, seeds, thresholds, args.threads)
    else:
        report = run_sweep(scenes, args.samplers, args.ratios, seeds, cfg, thresholds, args.threads)
    run.write(f"{args.kind}_rows.csv", report.rows_csv(args.mask_timings))
    run.write(f"{args.kind}_aggregates.csv", report.aggregates_csv(args.mask_timings))


COMMANDS = {
    "synth": cmd_synth,
    "sample": cmd_sample,
    "register": cmd_register,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: UsageError: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        run = Run(args, argv)
        COMMANDS[args.command](args, run)
        run.finish()
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        reason = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {reason}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
