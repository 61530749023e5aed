"""End-to-end experiment runner: scene, views, training, queries, metrics.

A run is fully determined by one config (single 64-bit seed); artifacts are
written with stable formatting so identical configs reproduce identical
bytes.  Wall-clock info goes to run_meta.txt only, which is the one volatile
file.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import containers
from .embed import LabelDictionary, SemanticCodec, build_dictionary, fit_codec
from .errors import ContainerError, ValidationError
from .hierarchy import MaskEntry, build_mask_tree
from .losses import HyperParams
from .metrics import (MetricsReport, QueryScore, boundary_iou,
                      default_band_radius, hierarchy_consistency, iou)
from .query import DEFAULT_THRESHOLD, run_query
from .raster import FeatureMap, render_feature_array
from .scene import Camera, Scene, SceneSpec, add_backdrop, generate_scene
from .train import TrainConfig, train
from .views import ViewPacket, build_view_packets, orbit_cameras


@dataclass(frozen=True)
class ViewRingConfig:
    count: int = 6
    width: int = 64
    height: int = 64
    focal: float = 96.0
    radius_factor: float = 2.2    # camera distance = factor * scene extent
    elevation_deg: float = 55.0


def desk_train_config(seed: int = 0, iterations: int = 2000) -> "TrainConfig":
    """Training preset validated by the desk-scale acceptance experiments.

    The learning rate keeps the 2000-iteration run in the regime where the
    clustering objective tightens clusters without erasing the initial
    dictionary calibration the queries rely on.
    """
    return TrainConfig(iterations=iterations, learning_rate=2.5e-5,
                       optimizer="adam", seed=seed)


@dataclass(frozen=True)
class QueryConfig:
    levels: tuple[int, ...] = (1, 2, 3)
    threshold: float = DEFAULT_THRESHOLD
    filter_size: int | None = None     # None = scaled from image height
    smooth_before_segment: bool = False
    exclusive_labels: bool = True      # per-level argmax competition across labels


@dataclass(frozen=True)
class FeatureInitConfig:
    mode: str = "dictionary"   # dictionary | random | keep
    noise: float = 0.05
    family_blend: float = 1.0  # weight of parent/whole vectors mixed into leaves

    def __post_init__(self):
        if self.mode not in ("dictionary", "random", "keep"):
            raise ValidationError(f"unknown feature init mode {self.mode!r}")
        if self.family_blend < 0:
            raise ValidationError("family_blend must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scene_spec: SceneSpec | None = None
    scene_file: str | None = None
    views: ViewRingConfig = field(default_factory=ViewRingConfig)
    masks_manifest: str | None = None   # external masks instead of rendered GT
    hyperparams: HyperParams = field(default_factory=HyperParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    feature_init: FeatureInitConfig = field(default_factory=FeatureInitConfig)
    ambient_dim: int = 16
    query: QueryConfig = field(default_factory=QueryConfig)
    band_radius: int | None = None      # None = 2% of image diagonal
    backdrop: bool = True               # ground-plane object behind the scene
    output_dir: str = "out"

    def __post_init__(self):
        if self.scene_spec is None and self.scene_file is None:
            raise ValidationError("config needs either a scene spec or a scene file")


_SECTION_TYPES = {
    "views": ViewRingConfig,
    "hyperparams": HyperParams,
    "train": TrainConfig,
    "feature_init": FeatureInitConfig,
    "query": QueryConfig,
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from parsed JSON, rejecting unknown keys."""
    raw = dict(raw)
    kwargs = {}
    scene_section = raw.pop("scene", None)
    if scene_section:
        if "spec" in scene_section:
            kwargs["scene_spec"] = SceneSpec(**scene_section["spec"])
        if "file" in scene_section:
            kwargs["scene_file"] = scene_section["file"]
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            section = raw.pop(name)
            if name == "query" and "levels" in section:
                section = dict(section, levels=tuple(section["levels"]))
            kwargs[name] = cls(**section)
    for key in ("seed", "ambient_dim", "band_radius", "backdrop", "output_dir",
                "masks_manifest"):
        if key in raw:
            kwargs[key] = raw.pop(key)
    if raw:
        raise ValidationError(f"unknown config keys: {sorted(raw)}")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ContainerError(f"config file not found: {path}")
    return config_from_dict(json.loads(path.read_text()))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {
        "seed": cfg.seed,
        "scene": {},
        "views": asdict(cfg.views),
        "hyperparams": asdict(cfg.hyperparams),
        "train": asdict(cfg.train),
        "feature_init": asdict(cfg.feature_init),
        "ambient_dim": cfg.ambient_dim,
        "query": dict(asdict(cfg.query), levels=list(cfg.query.levels)),
        "band_radius": cfg.band_radius,
        "backdrop": cfg.backdrop,
        "output_dir": cfg.output_dir,
    }
    if cfg.scene_spec is not None:
        out["scene"]["spec"] = asdict(cfg.scene_spec)
    if cfg.scene_file is not None:
        out["scene"]["file"] = cfg.scene_file
    if cfg.masks_manifest is not None:
        out["masks_manifest"] = cfg.masks_manifest
    return out


# ------------------------------------------------------- external masks

def _camera_from_dict(raw: dict) -> Camera:
    if "look_at" in raw:
        spec = raw["look_at"]
        return Camera.look_at(spec["position"], spec["target"], spec["focal"],
                              spec["width"], spec["height"],
                              up_hint=spec.get("up_hint", (0.0, 0.0, 1.0)))
    return Camera(position=np.array(raw["position"]), forward=np.array(raw["forward"]),
                  up=np.array(raw["up"]), right=np.array(raw["right"]),
                  focal=raw["focal"], width=raw["width"], height=raw["height"])


def import_external_masks(directory, manifest_path) -> list[ViewPacket]:
    """Read HLSM masks grouped by view per a JSON manifest.

    Manifest: {"views": [{"view_id": int, "camera": {...}|null,
    "masks": [relative paths]}]}.  Mask levels and ids come from the
    container headers; duplicate ids within a view are rejected by name.
    """
    directory = Path(directory)
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ContainerError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    packets = []
    for view in manifest.get("views", []):
        view_id = int(view["view_id"])
        camera = _camera_from_dict(view["camera"]) if view.get("camera") else None
        masks: list[MaskEntry] = []
        seen: set[int] = set()
        shape = None
        for rel in view["masks"]:
            mask = containers.read_mask(directory / rel, view_id=view_id)
            if mask.id in seen:
                raise ValidationError(
                    f"view {view_id}: duplicate mask id {mask.id} in {rel}")
            if shape is None:
                shape = mask.bits.shape
            elif mask.bits.shape != shape:
                raise ValidationError(f"view {view_id}: mask {mask.id} has "
                                      f"shape {mask.bits.shape}, expected {shape}")
            seen.add(mask.id)
            masks.append(mask)
        packets.append(ViewPacket(view_id=view_id, camera=camera, masks=masks))
    return packets


# ------------------------------------------------------------ evaluation

@dataclass
class QueryRecord:
    view_id: int
    level: int
    label_id: int
    score_map: np.ndarray
    mask: np.ndarray
    argmax: tuple[int, int]
    peak: float


def run_view_queries(features: np.ndarray, packets: list[ViewPacket],
                     codec: SemanticCodec, dictionary: LabelDictionary,
                     qcfg: QueryConfig) -> list[QueryRecord]:
    """Query every configured level's visible labels in every view.

    With exclusive_labels, the labels competing at one level keep only the
    pixels where their relevancy beats every other label's (the analogue of
    picking the binarized map with the best in-mask relevancy when maps
    overlap); each label's own threshold rule is unchanged.
    """
    records = []
    for packet in packets:
        if packet.weights is None or packet.label_map is None:
            raise ValidationError(f"view {packet.view_id} lacks weights or labels")
        flat = render_feature_array(packet.weights, features)
        fmap = FeatureMap.from_flat(flat, packet.weights.height, packet.weights.width)
        for level in qcfg.levels:
            labels = packet.label_map.present_ids(level)
            level_records = []
            for label_id in labels:
                result, raw = run_query(
                    fmap, codec, dictionary, level, label_id,
                    view_id=packet.view_id, threshold=qcfg.threshold,
                    filter_size=qcfg.filter_size,
                    smooth_before_segment=qcfg.smooth_before_segment)
                level_records.append(QueryRecord(
                    view_id=packet.view_id, level=level, label_id=label_id,
                    score_map=raw.values, mask=result.mask,
                    argmax=result.argmax, peak=result.peak_score))
            if qcfg.exclusive_labels and len(level_records) > 1:
                stack = np.stack([r.score_map for r in level_records])
                winner = np.argmax(stack, axis=0)
                for i, rec in enumerate(level_records):
                    rec.mask = rec.mask & (winner == i)
            records.extend(level_records)
    return records


def score_records(records: list[QueryRecord], packets: list[ViewPacket],
                  hp: HyperParams, band_radius: int | None = None) -> MetricsReport:
    """IoU/BIoU/localization against rendered ground truth, plus hierarchy
    consistency of the predicted masks per view."""
    by_view = {p.view_id: p for p in packets}
    scores = []
    for rec in records:
        packet = by_view[rec.view_id]
        gt = packet.label_map.level_mask(rec.level, rec.label_id)
        radius = band_radius if band_radius is not None \
            else default_band_radius(*gt.shape)
        scores.append(QueryScore(
            view_id=rec.view_id, level=rec.level, label_id=rec.label_id,
            iou=iou(rec.mask, gt), biou=boundary_iou(rec.mask, gt, radius),
            loc_hit=bool(gt[rec.argmax])))

    hc_values = []
    hc_no_pairs = 0
    for view_id in sorted(by_view):
        view_records = [r for r in records if r.view_id == view_id]
        pred_masks = []
        next_id = 0
        for rec in sorted(view_records, key=lambda r: (r.level, r.label_id)):
            if rec.mask.any():
                pred_masks.append(MaskEntry(id=next_id, level=rec.level,
                                            bits=rec.mask, view_id=view_id,
                                            label=(rec.level, rec.label_id)))
                next_id += 1
        if not pred_masks:
            continue
        tree = build_mask_tree(pred_masks, hp.coverage_threshold)
        hc = hierarchy_consistency(pred_masks, tree, hp.hc_orientation)
        if hc.no_pairs:
            hc_no_pairs += 1
        hc_values.append(hc.score)
    return MetricsReport.from_scores(scores, hc_values, hc_no_pairs)


# ------------------------------------------------------------- reporting

def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def write_metrics_report(path, report: MetricsReport) -> None:
    """Fixed-key-order structured text; diffable across runs."""
    lines = ["semsplat-metrics v1",
             f"n_queries {report.n_queries}",
             f"localization_accuracy {_fmt(report.localization)}",
             f"mean_miou {_fmt(report.mean_miou)}",
             f"mean_mbiou {_fmt(report.mean_mbiou)}"]
    for level in sorted(report.level_miou):
        lines.append(f"level {level} miou {_fmt(report.level_miou[level])} "
                     f"mbiou {_fmt(report.level_mbiou[level])}")
    lines.append(f"hc {_fmt(report.hc)}")
    lines.append(f"hc_views_no_pairs {report.hc_views_no_pairs}")
    lines.append("per_query")
    for s in sorted(report.per_query, key=lambda s: (s.view_id, s.level, s.label_id)):
        lines.append(f"view {s.view_id} level {s.level} label {s.label_id} "
                     f"iou {_fmt(s.iou)} biou {_fmt(s.biou)} loc {int(s.loc_hit)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_train_report(tsv_path, summary_path, report) -> None:
    rows = ["iteration\ttotal\tclustering\tinstance\tsibling"]
    for i in range(report.iterations):
        rows.append(f"{i}\t{_fmt(report.total[i])}\t{_fmt(report.clustering[i])}"
                    f"\t{_fmt(report.instance[i])}\t{_fmt(report.sibling[i])}")
    Path(tsv_path).write_text("\n".join(rows) + "\n")

    lines = ["semsplat-train v1",
             f"iterations {report.iterations}",
             f"final_total {_fmt(report.total[-1])}",
             f"final_clustering {_fmt(report.clustering[-1])}",
             f"final_instance {_fmt(report.instance[-1])}",
             f"final_sibling {_fmt(report.sibling[-1])}",
             f"feature_checksum {report.feature_checksum}"]
    for name, value in sorted(report.diagnostics.as_dict().items()):
        lines.append(f"diag_{name} {value}")
    Path(summary_path).write_text("\n".join(lines) + "\n")


def write_predictions(path, records: list[QueryRecord]) -> None:
    lines = ["semsplat-predictions v1"]
    for r in sorted(records, key=lambda r: (r.view_id, r.level, r.label_id)):
        lines.append(f"view {r.view_id} level {r.level} label {r.label_id} "
                     f"argmax {r.argmax[0]} {r.argmax[1]} peak {_fmt(r.peak)}")
    Path(path).write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------ run stages

@dataclass
class RunResult:
    scene: Scene
    trained: Scene
    packets: list[ViewPacket]
    dictionary: LabelDictionary
    codec: SemanticCodec
    train_report: object
    records: list[QueryRecord]
    metrics: MetricsReport
    output_dir: Path


def _resolve_scene(cfg: ExperimentConfig) -> Scene:
    if cfg.scene_file is not None:
        return containers.read_scene(cfg.scene_file)
    return generate_scene(cfg.scene_spec)


def initialize_features(scene: Scene, dictionary: LabelDictionary,
                        codec: SemanticCodec, init: FeatureInitConfig,
                        seed: int) -> Scene:
    """Feature start point standing in for externally supervised features.

    Dictionary mode encodes each point's subpart embedding blended with its
    part/whole embeddings (CLIP-style crops embed near their containing
    object, so leaf embeddings carry family semantics) plus seeded noise.
    Random mode draws a fresh standard normal; keep leaves the scene as is.
    """
    if init.mode == "keep":
        return scene
    rng = np.random.default_rng(seed)
    if init.mode == "random":
        return scene.with_features(rng.standard_normal(scene.features.shape))
    latents = np.zeros_like(scene.features)
    for i in range(scene.n_points):
        whole_id, part_id, sub_id = (int(v) for v in scene.labels[i])
        ambient = dictionary.vector(3, sub_id) + init.family_blend * (
            dictionary.vector(2, part_id) + dictionary.vector(1, whole_id))
        ambient = ambient / np.linalg.norm(ambient)
        latents[i] = codec.encode(ambient)
    latents += init.noise * rng.standard_normal(latents.shape)
    return scene.with_features(latents)


def prepare_run(cfg: ExperimentConfig):
    """Scene, packets, dictionary, codec and initialized features."""
    scene = _resolve_scene(cfg)
    extent = cfg.scene_spec.extent if cfg.scene_spec is not None else 4.0
    if cfg.backdrop:
        scene = add_backdrop(scene, extent, seed=cfg.seed)
    if cfg.masks_manifest is not None:
        manifest = Path(cfg.masks_manifest)
        packets = import_external_masks(manifest.parent, manifest)
        for p in packets:
            p.prepare(scene, cfg.hyperparams.coverage_threshold)
    else:
        cameras = orbit_cameras(
            cfg.views.count, width=cfg.views.width, height=cfg.views.height,
            focal=cfg.views.focal, radius=cfg.views.radius_factor * extent,
            elevation_deg=cfg.views.elevation_deg)
        packets = build_view_packets(scene, cameras, cfg.hyperparams.coverage_threshold)
    dictionary = build_dictionary(scene, cfg.ambient_dim, cfg.seed)
    codec = fit_codec(dictionary, scene.d)
    scene = initialize_features(scene, dictionary, codec, cfg.feature_init, cfg.seed)
    return scene, packets, dictionary, codec


def run_experiment(cfg: ExperimentConfig, output_dir=None,
                   write_figures: bool = True) -> RunResult:
    """Execute all stages and write every artifact under output_dir."""
    started = time.monotonic()
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    scene, packets, dictionary, codec = prepare_run(cfg)

    (out / "config_echo.json").write_text(
        json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    containers.write_scene(out / "scene.txt", scene)
    containers.write_dictionary(out / "dictionary.txt", dictionary)
    containers.write_codec(out / "codec.hlsc", codec)

    for packet in packets:
        view_dir = out / "views" / f"view_{packet.view_id:03d}"
        view_dir.mkdir(parents=True, exist_ok=True)
        for mask in packet.masks:
            containers.write_mask(view_dir / f"mask_{mask.id:03d}.hlsm", mask)
        containers.write_tree(view_dir / "tree.txt", packet.tree)

    cfg_train = cfg.train if cfg.train.seed == cfg.seed \
        else TrainConfig(**dict(asdict(cfg.train), seed=cfg.seed))
    checkpoint_fn = None
    if cfg_train.checkpoint_every > 0:
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)

        def checkpoint_fn(iteration, feats):
            containers.write_scene(ckpt_dir / f"iter_{iteration:06d}.txt",
                                   scene.with_features(feats))
    features, train_report = train(scene, packets, cfg.hyperparams, cfg_train,
                                   checkpoint_fn=checkpoint_fn)
    trained = scene.with_features(features)
    containers.write_scene(out / "checkpoint.txt", trained)
    write_train_report(out / "train_report.tsv", out / "train_summary.txt", train_report)

    records = run_view_queries(features, packets, codec, dictionary, cfg.query)
    for rec in records:
        qdir = out / "queries" / f"view_{rec.view_id:03d}"
        qdir.mkdir(parents=True, exist_ok=True)
        stem = f"l{rec.level}_label{rec.label_id}"
        containers.write_feature_map(qdir / f"score_{stem}.hlsf",
                                     FeatureMap(rec.score_map[None, :, :]))
        if rec.mask.any():
            containers.write_mask(
                qdir / f"pred_{stem}.hlsm",
                MaskEntry(id=0, level=rec.level, bits=rec.mask, view_id=rec.view_id))
    write_predictions(out / "predictions.txt", records)

    metrics = score_records(records, packets, cfg.hyperparams, cfg.band_radius)
    write_metrics_report(out / "metrics_report.txt", metrics)

    if write_figures:
        from . import plots
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plots.save_loss_curves(train_report, fig_dir / "loss_curve.svg")
        plots.save_level_bars(metrics, fig_dir / "miou_by_level.svg")

    meta = [f"started_unix {time.time() - (time.monotonic() - started):.3f}",
            f"wall_time_s {time.monotonic() - started:.3f}",
            f"train_wall_time_s {train_report.wall_time_s:.3f}"]
    (out / "run_meta.txt").write_text("\n".join(meta) + "\n")

    return RunResult(scene=scene, trained=trained, packets=packets,
                     dictionary=dictionary, codec=codec, train_report=train_report,
                     records=records, metrics=metrics, output_dir=out)
