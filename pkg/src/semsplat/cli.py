"""Command-line surface.

Subcommands: generate-scene, build-hierarchy, train, query, evaluate,
run (end-to-end), check-gradients.  A JSON config supplies defaults; flags
override individual keys.  Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import containers
from .errors import ContainerError, NumericalError, SemsplatError, ValidationError
from .experiment import (ExperimentConfig, QueryConfig, import_external_masks,
                         load_config, prepare_run, run_experiment,
                         run_view_queries, score_records, write_metrics_report,
                         write_predictions)
from .losses import HyperParams
from .scene import SceneSpec, generate_scene
from .train import TrainConfig, gradient_check
from .views import build_view_packets, orbit_cameras

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage is 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _scene_spec_from_args(args) -> SceneSpec:
    return SceneSpec(n_whole=args.wholes, parts_per_whole=args.parts,
                     subparts_per_part=args.subparts,
                     gaussians_per_subpart=args.gaussians,
                     extent=args.extent, seed=args.seed, d=args.feature_dim)


def _add_scene_args(p):
    p.add_argument("--wholes", type=int, default=2)
    p.add_argument("--parts", type=int, default=2)
    p.add_argument("--subparts", type=int, default=2)
    p.add_argument("--gaussians", type=int, default=6)
    p.add_argument("--extent", type=float, default=4.0)
    p.add_argument("--feature-dim", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)


def cmd_generate_scene(args) -> int:
    scene = generate_scene(_scene_spec_from_args(args))
    containers.write_scene(args.out, scene)
    print(f"wrote {scene.n_points} points to {args.out}")
    return EXIT_OK


def cmd_build_hierarchy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        from .hierarchy import build_mask_tree
        packets = import_external_masks(Path(args.manifest).parent, args.manifest)
        for p in packets:
            p.tree = build_mask_tree(p.masks, args.theta)
    else:
        scene = containers.read_scene(args.scene)
        cameras = orbit_cameras(args.n_views, width=args.width, height=args.height,
                                focal=args.focal, radius=args.radius,
                                elevation_deg=args.elevation)
        packets = build_view_packets(scene, cameras, args.theta)
    for packet in packets:
        view_dir = out / f"view_{packet.view_id:03d}"
        view_dir.mkdir(parents=True, exist_ok=True)
        for mask in packet.masks:
            containers.write_mask(view_dir / f"mask_{mask.id:03d}.hlsm", mask)
        containers.write_tree(view_dir / "tree.txt", packet.tree)
        print(f"view {packet.view_id}: {len(packet.masks)} masks, "
              f"{len(packet.tree.edges())} edges")
    return EXIT_OK


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        from .experiment import desk_train_config
        seed = args.seed if getattr(args, "seed", None) is not None else 0
        cfg = ExperimentConfig(scene_spec=SceneSpec(2, 2, 2, 6, seed=seed),
                               train=desk_train_config(seed), seed=seed)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "iterations", None) is not None:
        overrides["train"] = TrainConfig(**dict(asdict(cfg.train),
                                                iterations=args.iterations))
    if overrides:
        raw = {**_cfg_as_kwargs(cfg), **overrides}
        cfg = ExperimentConfig(**raw)
    return cfg


def _cfg_as_kwargs(cfg: ExperimentConfig) -> dict:
    return {k: getattr(cfg, k) for k in (
        "seed", "scene_spec", "scene_file", "views", "masks_manifest",
        "hyperparams", "train", "feature_init", "ambient_dim", "query",
        "band_radius", "output_dir")}


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    result = run_experiment(cfg, output_dir=args.out or cfg.output_dir,
                            write_figures=not args.no_figures)
    m = result.metrics
    print(f"artifacts in {result.output_dir}")
    for level in sorted(m.level_miou):
        print(f"level {level}: mIoU {m.level_miou[level]:.3f} "
              f"mBIoU {m.level_mbiou[level]:.3f}")
    print(f"localization {m.localization:.3f}  hc {m.hc:.3f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .experiment import write_train_report
    from .train import train as train_fn
    scene, packets, dictionary, codec = prepare_run(cfg)
    cfg_train = cfg.train if cfg.train.seed == cfg.seed \
        else TrainConfig(**dict(asdict(cfg.train), seed=cfg.seed))
    features, report = train_fn(scene, packets, cfg.hyperparams, cfg_train)
    containers.write_scene(out / "checkpoint.txt", scene.with_features(features))
    containers.write_dictionary(out / "dictionary.txt", dictionary)
    containers.write_codec(out / "codec.hlsc", codec)
    write_train_report(out / "train_report.tsv", out / "train_summary.txt", report)
    print(f"final loss {report.final_loss:.6g}; checkpoint in {out}")
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = load_config(Path(args.run_dir) / "config_echo.json")
    scene = containers.read_scene(Path(args.run_dir) / "checkpoint.txt")
    dictionary = containers.read_dictionary(Path(args.run_dir) / "dictionary.txt")
    codec = containers.read_codec(Path(args.run_dir) / "codec.hlsc")
    extent = cfg.scene_spec.extent if cfg.scene_spec else 4.0
    cameras = orbit_cameras(cfg.views.count, width=cfg.views.width,
                            height=cfg.views.height, focal=cfg.views.focal,
                            radius=cfg.views.radius_factor * extent,
                            elevation_deg=cfg.views.elevation_deg)
    packets = build_view_packets(scene, cameras, cfg.hyperparams.coverage_threshold)
    views = [args.view] if args.view is not None else [p.view_id for p in packets]
    qcfg = QueryConfig(levels=(args.level,), threshold=args.threshold,
                       filter_size=args.filter_size,
                       smooth_before_segment=cfg.query.smooth_before_segment)
    selected = [p for p in packets if p.view_id in views]
    records = [r for r in run_view_queries(scene.features, selected, codec,
                                           dictionary, qcfg)
               if r.label_id == args.label]
    if not records:
        raise ValidationError(
            f"label {args.label} at level {args.level} is not visible in the "
            f"requested view(s)")
    for rec in records:
        print(f"view {rec.view_id}: argmax ({rec.argmax[0]}, {rec.argmax[1]}) "
              f"peak {rec.peak:.4f} mask_pixels {int(rec.mask.sum())}")
    if args.out:
        write_predictions(args.out, records)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(Path(args.run_dir) / "config_echo.json")
    scene = containers.read_scene(Path(args.run_dir) / "checkpoint.txt")
    dictionary = containers.read_dictionary(Path(args.run_dir) / "dictionary.txt")
    codec = containers.read_codec(Path(args.run_dir) / "codec.hlsc")
    extent = cfg.scene_spec.extent if cfg.scene_spec else 4.0
    cameras = orbit_cameras(cfg.views.count, width=cfg.views.width,
                            height=cfg.views.height, focal=cfg.views.focal,
                            radius=cfg.views.radius_factor * extent,
                            elevation_deg=cfg.views.elevation_deg)
    packets = build_view_packets(scene, cameras, cfg.hyperparams.coverage_threshold)
    records = run_view_queries(scene.features, packets, codec, dictionary, cfg.query)
    metrics = score_records(records, packets, cfg.hyperparams, cfg.band_radius)
    out = Path(args.out or args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_report(out / "metrics_report.txt", metrics)
    if not args.no_figures:
        from . import plots
        (out / "figures").mkdir(exist_ok=True)
        plots.save_level_bars(metrics, out / "figures" / "miou_by_level.svg")
    print(f"mean mIoU {metrics.mean_miou:.3f}  localization "
          f"{metrics.localization:.3f}  hc {metrics.hc:.3f}")
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    spec = SceneSpec(2, 2, 2, args.gaussians, seed=args.seed)
    scene = generate_scene(spec)
    cameras = orbit_cameras(1, width=args.width, height=args.height,
                            focal=1.5 * args.width, radius=2.2 * spec.extent)
    packets = build_view_packets(scene, cameras)
    hp = HyperParams()
    result = gradient_check(scene, packets[0], hp, n_probes=args.probes,
                            seed=args.seed)
    if result.max_rel_error is None:
        print(f"gradient check: {result.note}")
        return EXIT_OK
    print(f"gradient check: max relative error {result.max_rel_error:.3e} "
          f"over {result.probes} probes")
    if result.max_rel_error > args.tolerance:
        print(f"exceeds tolerance {args.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="semsplat",
                     description="Semantic Gaussian splatting lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-scene", help="write a synthetic scene file")
    _add_scene_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate_scene)

    p = sub.add_parser("build-hierarchy",
                       help="render GT masks and trees, or build trees for imported masks")
    p.add_argument("--scene")
    p.add_argument("--manifest", help="external mask manifest instead of a scene")
    p.add_argument("--n-views", type=int, default=6)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--focal", type=float, default=96.0)
    p.add_argument("--radius", type=float, default=8.8)
    p.add_argument("--elevation", type=float, default=55.0)
    p.add_argument("--theta", type=float, default=0.9)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_hierarchy)

    p = sub.add_parser("run", help="full experiment: scene to metrics")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("train", help="train features and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("query", help="query a finished run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--view", type=int)
    p.add_argument("--threshold", type=float, default=0.4)
    p.add_argument("--filter-size", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("evaluate", help="recompute metrics for a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("check-gradients",
                       help="analytic vs finite-difference gradients on a random instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaussians", type=int, default=4)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--probes", type=int, default=24)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_check_gradients)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ContainerError, ValidationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SemsplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
