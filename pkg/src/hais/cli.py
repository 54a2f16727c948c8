"""Command-line entry point: ``hais <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import gradcheck
from .core import PointCloud
from .errors import HaisError
from .evaluation import evaluate
from .io import export_results, load_cloud, load_predictions, load_results, write_cloud, write_predictions
from .pipeline import STAGES, _Timer, run_pipeline
from .refine import HeuristicMaskProvider, IdentityMaskProvider, OracleMaskProvider, ReplayMaskProvider
from .set_aggregation import (
    RADIUS_STATISTICS,
    AggregationConfig,
    compute_class_radii,
    read_class_radii,
    write_class_radii,
)
from .synth import (
    NoiseSpec,
    SceneSpec,
    degrade_predictions,
    generate_scene,
    load_scene_spec,
    oracle_predictions,
    parse_keyvalue,
)

log = logging.getLogger("hais")

# flag dest -> (config-file key, parser)
_CLUSTER_OPTIONS = {
    "r_point": ("r_point", float),
    "alpha": ("alpha", float),
    "primary_threshold": ("primary_threshold", int),
    "min_points": ("min_points", int),
    "mask_threshold": ("mask_threshold", float),
    "class_radii": ("class_radii", str),
    "coord_space": ("coord_space", str),
    "background": ("background", str),
    "mask_provider": ("mask_provider", str),
    "mask_scale": ("mask_scale", float),
    "threads": ("threads", int),
    "no_set_aggregation": ("no_set_aggregation", lambda v: v.lower() in ("1", "true", "yes")),
}
_DEFAULTS = {
    "r_point": 0.03,
    "alpha": 0.01,
    "primary_threshold": 100,
    "min_points": 100,
    "mask_threshold": 0.5,
    "class_radii": None,
    "coord_space": "shifted",
    "background": "0",
    "mask_provider": "auto",
    "mask_scale": 2.5,
    "threads": 1,
    "no_set_aggregation": False,
}


def _add_cluster_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; explicit flags take precedence")
    p.add_argument("--r-point", type=float, dest="r_point", help="point aggregation bandwidth (m)")
    p.add_argument("--alpha", type=float, help="size term coefficient of the set bandwidth")
    p.add_argument("--primary-threshold", type=int, dest="primary_threshold")
    p.add_argument("--min-points", type=int, dest="min_points")
    p.add_argument("--mask-threshold", type=float, dest="mask_threshold")
    p.add_argument("--class-radii", dest="class_radii", help="class_id<TAB>radius table")
    p.add_argument("--no-set-aggregation", action="store_const", const=True, dest="no_set_aggregation")
    p.add_argument("--coord-space", choices=("shifted", "original"), dest="coord_space")
    p.add_argument("--background", help="comma separated background class ids (default 0)")
    p.add_argument(
        "--mask-provider",
        choices=("auto", "heuristic", "oracle", "replay", "identity"),
        dest="mask_provider",
        help="auto: replay when the prediction file has instances, else heuristic",
    )
    p.add_argument("--mask-scale", type=float, dest="mask_scale")
    p.add_argument("--threads", type=int, help="worker threads (HAIS_THREADS overrides)")


def resolve_options(args) -> dict:
    """Defaults, then ``--config`` file, then flags, then ``HAIS_THREADS``."""
    opts = dict(_DEFAULTS)
    if getattr(args, "config", None):
        values = parse_keyvalue(Path(args.config).read_text(), args.config)
        for key, raw in values.items():
            match = [d for d, (k, _) in _CLUSTER_OPTIONS.items() if k == key.replace("-", "_")]
            if not match:
                raise HaisError(f"{args.config}: unknown config key {key!r}")
            opts[match[0]] = _CLUSTER_OPTIONS[match[0]][1](raw)
    for dest in _CLUSTER_OPTIONS:
        value = getattr(args, dest, None)
        if value is not None:
            opts[dest] = value
    env = os.environ.get("HAIS_THREADS")
    if env:
        opts["threads"] = int(env)
    if opts["threads"] < 1:
        raise HaisError("threads must be >= 1")
    return opts


def build_config(opts: dict) -> AggregationConfig:
    radii = read_class_radii(opts["class_radii"]) if opts["class_radii"] else {}
    background = tuple(int(c) for c in str(opts["background"]).split(",") if c.strip())
    return AggregationConfig(
        r_point=opts["r_point"],
        alpha=opts["alpha"],
        primary_size_threshold=opts["primary_threshold"],
        class_radii=radii,
        min_final_points=opts["min_points"],
        mask_threshold=opts["mask_threshold"],
        background_classes=background,
        set_aggregation=not opts["no_set_aggregation"],
        coord_space=opts["coord_space"],
    )


def _provider(kind: str, cloud: PointCloud, predfile, scale: float):
    instances = predfile.instances if predfile is not None else {}
    if kind == "auto":
        kind = "replay" if instances else "heuristic"
    if kind == "heuristic":
        return HeuristicMaskProvider(scale)
    if kind == "identity":
        return IdentityMaskProvider()
    if kind == "oracle":
        return OracleMaskProvider(cloud)
    if kind == "replay":
        if not instances:
            raise HaisError("replay mask provider needs INSTANCE records in the prediction file")
        return ReplayMaskProvider(instances)
    raise HaisError(f"unknown mask provider {kind!r}")


def cmd_cluster(args) -> int:
    opts = resolve_options(args)
    config = build_config(opts)
    cloud = load_cloud(args.cloud)
    predfile = load_predictions(args.predictions, cloud)
    provider = _provider(opts["mask_provider"], cloud, predfile, opts["mask_scale"])
    result = run_pipeline(cloud, predfile.prediction, config, provider, threads=opts["threads"])
    scene = args.scene or Path(args.cloud).stem
    index = export_results(result.ranked, len(cloud), args.output, scene)
    diag = result.diagnostics()
    print(f"{scene}: {diag['final']} instances -> {index}")
    if args.report:
        Path(args.report).write_text(json.dumps({"diagnostics": diag, "timings_ms": result.timings_ms}, indent=2))
    return 0


def cmd_eval(args) -> int:
    scenes = []
    for cloud_path in args.clouds:
        cloud = load_cloud(cloud_path)
        scene = Path(cloud_path).stem
        preds = load_results(args.results, scene)
        scenes.append((preds, cloud.gt_instances()))
    report = evaluate(scenes)
    sys.stdout.write(report.to_table())
    if args.out:
        report.write(args.out)
    return 0


def cmd_synth(args) -> int:
    spec, noise = load_scene_spec(args.spec)
    if args.no_noise:
        noise = None
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        cloud = generate_scene(spec, k)
        pred = oracle_predictions(cloud)
        if noise is not None:
            pred = degrade_predictions(
                pred,
                NoiseSpec(noise.shift_noise_sigma, noise.shift_dropout_fraction, noise.semantic_error_rate, noise.seed + k),
            )
        write_cloud(cloud, out / f"scene_{k:04d}.cloud")
        write_predictions(pred, out / f"scene_{k:04d}.pred")
        print(f"scene_{k:04d}: {len(cloud)} points, {int(cloud.gt_instance.max()) + 1} instances")
    return 0


def cmd_class_radii(args) -> int:
    radii = compute_class_radii((load_cloud(p) for p in args.clouds), args.statistic)
    write_class_radii(radii, args.output)
    for k, v in radii.items():
        print(f"{k}\t{v:.4f}")
    return 0


def cmd_loss_check(args) -> int:
    results = gradcheck.run_all(args.trials, args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  (max rel. error {r.max_rel_error:.3g})")
    return 0 if all(r.passed for r in results) else 1


def cmd_bench(args) -> int:
    opts = resolve_options(args)
    config = build_config(opts)
    timer = _Timer()
    t0 = time.perf_counter()
    with timer.stage("point_wise_prediction"):
        if args.cloud:
            cloud = load_cloud(args.cloud)
            predfile = load_predictions(args.predictions, cloud) if args.predictions else None
            pred = predfile.prediction if predfile else oracle_predictions(cloud)
        else:
            spec = SceneSpec(
                n_instances=(20, 20),
                class_sizes={1: (args.points // 25, args.points // 25), 2: (args.points // 25, args.points // 25)},
                class_shapes={1: "box", 2: "sphere"},
                extent=(20.0, 20.0),
                seed=args.seed,
            )
            cloud = generate_scene(spec)
            pred = degrade_predictions(
                oracle_predictions(cloud), NoiseSpec(0.02, 0.3, 0.01, seed=args.seed)
            )
            predfile = None
    provider = _provider(opts["mask_provider"], cloud, predfile, opts["mask_scale"])
    result = run_pipeline(cloud, pred, config, provider, threads=opts["threads"], timer=timer)
    total = 1e3 * (time.perf_counter() - t0)
    print(f"points: {len(cloud)}  instances: {len(result.ranked)}")
    for stage in STAGES:
        print(f"{stage:28s} {timer.ms.get(stage, 0.0):10.1f} ms")
    print(f"{'total':28s} {total:10.1f} ms")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hais", description="Hierarchical aggregation instance clustering")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="cluster a cloud from per-point predictions")
    p.add_argument("cloud")
    p.add_argument("predictions")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--scene", help="scene name (default: cloud file stem)")
    p.add_argument("--report", help="write diagnostics and timings as JSON")
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="evaluate exported results against ground truth")
    p.add_argument("results", help="directory with <scene>.txt index files")
    p.add_argument("clouds", nargs="+", help="ground-truth clouds; stems name the scenes")
    p.add_argument("--out", help="write key = value report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic scenes and predictions")
    p.add_argument("spec", help="scene spec file (key = value)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--no-noise", action="store_true", help="write oracle predictions even if the scene file sets noise")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("class-radii", help="average instance radius per class")
    p.add_argument("clouds", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--statistic", choices=RADIUS_STATISTICS, default="mean")
    p.set_defaults(func=cmd_class_radii)

    p = sub.add_parser("loss-check", help="finite-difference check of all loss gradients")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("bench", help="per-stage timing")
    p.add_argument("cloud", nargs="?")
    p.add_argument("predictions", nargs="?")
    p.add_argument("--points", type=int, default=100_000, help="synthetic scene size when no cloud is given")
    p.add_argument("--seed", type=int, default=0)
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (HaisError, OSError, ValueError) as exc:
        print(f"hais: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
