import json

import numpy as np
import pytest

from semsplat import containers
from semsplat.cli import main
from semsplat.errors import ContainerError, ValidationError
from semsplat.experiment import (ExperimentConfig, FeatureInitConfig, QueryConfig,
                                 ViewRingConfig, config_from_dict, config_to_dict,
                                 import_external_masks, load_config, run_experiment)
from semsplat.hierarchy import MaskEntry
from semsplat.scene import SceneSpec
from semsplat.train import TrainConfig


def tiny_config(seed=3, iterations=20, **kwargs):
    return ExperimentConfig(
        seed=seed,
        scene_spec=SceneSpec(2, 2, 2, 3, seed=seed),
        views=ViewRingConfig(count=2, width=32, height=32, focal=48.0),
        train=TrainConfig(iterations=iterations, learning_rate=1e-3, seed=seed),
        **kwargs,
    )


class TestConfigRoundtrip:
    def test_dict_roundtrip(self):
        cfg = tiny_config()
        again = config_from_dict(config_to_dict(cfg))
        assert again == cfg

    def test_unknown_keys_rejected(self):
        raw = config_to_dict(tiny_config())
        raw["surprise"] = 1
        with pytest.raises(ValidationError):
            config_from_dict(raw)

    def test_missing_scene_rejected(self):
        with pytest.raises(ValidationError):
            ExperimentConfig()

    def test_missing_config_file_names_path(self, tmp_path):
        with pytest.raises(ContainerError, match="absent.json"):
            load_config(tmp_path / "absent.json")


class TestRunExperiment:
    def test_artifacts_written(self, tmp_path):
        result = run_experiment(tiny_config(), output_dir=tmp_path / "run",
                                write_figures=True)
        out = result.output_dir
        for name in ("config_echo.json", "scene.txt", "dictionary.txt",
                     "codec.hlsc", "checkpoint.txt", "train_report.tsv",
                     "train_summary.txt", "predictions.txt",
                     "metrics_report.txt", "run_meta.txt"):
            assert (out / name).exists(), name
        assert (out / "views" / "view_000" / "tree.txt").exists()
        assert (out / "figures" / "loss_curve.svg").exists()
        assert (out / "figures" / "miou_by_level.svg").exists()
        assert result.metrics.n_queries > 0

    def test_minimal_single_object_scores_perfectly(self, tmp_path):
        # one sub-pixel splat head-on: support, ground truth and prediction
        # all quantize to the same single pixel
        cfg = ExperimentConfig(
            seed=1,
            scene_file=str(tmp_path / "scene.txt"),
            views=ViewRingConfig(count=1, width=32, height=32, focal=40.0,
                                 radius_factor=0.5, elevation_deg=55.0),
            train=TrainConfig(iterations=10, learning_rate=1e-4, seed=1),
            feature_init=FeatureInitConfig(mode="dictionary", noise=0.0),
            backdrop=False,
        )
        from semsplat.scene import Scene
        scene = Scene(positions=np.zeros((1, 3)), opacities=np.array([0.9]),
                      scales=np.array([0.008]),
                      features=np.array([[0.3, 0.1, -0.2]]),
                      labels=np.zeros((1, 3), dtype=np.int64))
        containers.write_scene(tmp_path / "scene.txt", scene)
        result = run_experiment(cfg, output_dir=tmp_path / "run",
                                write_figures=False)
        assert result.metrics.level_miou[1] == 1.0
        report = (tmp_path / "run" / "metrics_report.txt").read_text()
        assert "level 1 miou 1 " in report

    def test_subpart_query_prefers_own_ground_truth(self):
        # converged-by-construction field: each point carries its subpart's
        # encoded embedding exactly; a subpart query must overlap its own GT
        # mask more than any other subpart's
        from semsplat.experiment import prepare_run, run_view_queries
        from semsplat.metrics import iou
        from semsplat.scene import SceneSpec
        cfg = ExperimentConfig(
            seed=1, scene_spec=SceneSpec(2, 2, 2, 6, seed=1),
            feature_init=FeatureInitConfig(noise=0.0, family_blend=0.0))
        scene, packets, dictionary, codec = prepare_run(cfg)
        records = run_view_queries(scene.features, packets, codec, dictionary,
                                   QueryConfig(levels=(3,)))
        checked = 0
        for rec in records:
            packet = packets[rec.view_id]
            own = packet.label_map.level_mask(3, rec.label_id)
            own_iou = iou(rec.mask, own)
            for other in packet.label_map.present_ids(3):
                if other == rec.label_id:
                    continue
                assert own_iou > iou(rec.mask, packet.label_map.level_mask(3, other))
                checked += 1
        assert checked > 0

    def test_periodic_checkpoints_written(self, tmp_path):
        cfg = tiny_config(seed=2, iterations=10)
        cfg = ExperimentConfig(**{**{k: getattr(cfg, k) for k in (
            "seed", "scene_spec", "scene_file", "views", "masks_manifest",
            "hyperparams", "feature_init", "ambient_dim", "query",
            "band_radius", "backdrop", "output_dir")},
            "train": TrainConfig(iterations=10, learning_rate=1e-3, seed=2,
                                 checkpoint_every=4)})
        result = run_experiment(cfg, output_dir=tmp_path / "run",
                                write_figures=False)
        names = sorted(p.name for p in (result.output_dir / "checkpoints").iterdir())
        assert names == ["iter_000004.txt", "iter_000008.txt"]
        containers.read_scene(result.output_dir / "checkpoints" / names[0])

    def test_determinism_byte_identical(self, tmp_path):
        cfg = tiny_config(seed=5, iterations=15)
        a = run_experiment(cfg, output_dir=tmp_path / "a", write_figures=True)
        b = run_experiment(cfg, output_dir=tmp_path / "b", write_figures=True)
        compared = 0
        for path_a in sorted(a.output_dir.rglob("*")):
            if path_a.is_dir() or path_a.name == "run_meta.txt":
                continue
            path_b = b.output_dir / path_a.relative_to(a.output_dir)
            assert path_b.exists(), path_b
            assert path_a.read_bytes() == path_b.read_bytes(), path_a.name
            compared += 1
        assert compared > 10


class TestImportExternalMasks:
    def write_view(self, tmp_path, view_id, mask_specs):
        names = []
        for mask_id, level, bits in mask_specs:
            name = f"v{view_id}_m{mask_id}.hlsm"
            containers.write_mask(tmp_path / name,
                                  MaskEntry(id=mask_id, level=level, bits=bits))
            names.append(name)
        return {"view_id": view_id, "camera": None, "masks": names}

    def test_one_view_three_levels(self, tmp_path):
        bits = np.zeros((8, 8), dtype=bool)
        whole, part, sub = bits.copy(), bits.copy(), bits.copy()
        whole[0:7, 0:7] = True
        part[0:4, 0:4] = True
        sub[0:2, 0:2] = True
        manifest = {"views": [self.write_view(
            tmp_path, 0, [(0, 1, whole), (1, 2, part), (2, 3, sub)])]}
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps(manifest))
        packets = import_external_masks(tmp_path, mpath)
        assert len(packets) == 1
        assert sorted(m.level for m in packets[0].masks) == [1, 2, 3]

    def test_duplicate_id_names_offender(self, tmp_path):
        bits = np.ones((4, 4), dtype=bool)
        view = self.write_view(tmp_path, 0, [(5, 1, bits)])
        view["masks"].append(view["masks"][0])
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps({"views": [view]}))
        with pytest.raises(ValidationError, match="5"):
            import_external_masks(tmp_path, mpath)

    def test_two_views_preserve_partition(self, tmp_path):
        b1 = np.zeros((6, 6), dtype=bool)
        b1[0:3, 0:3] = True
        b2 = np.zeros((6, 6), dtype=bool)
        b2[3:6, 3:6] = True
        manifest = {"views": [
            self.write_view(tmp_path, 0, [(0, 1, b1), (1, 2, b2)]),
            self.write_view(tmp_path, 1, [(0, 1, b2)]),
        ]}
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps(manifest))
        packets = import_external_masks(tmp_path, mpath)
        assert [p.view_id for p in packets] == [0, 1]
        assert [len(p.masks) for p in packets] == [2, 1]
        assert all(m.view_id == p.view_id for p in packets for m in p.masks)

    def test_camera_from_look_at(self, tmp_path):
        bits = np.ones((4, 4), dtype=bool)
        view = self.write_view(tmp_path, 0, [(0, 1, bits)])
        view["camera"] = {"look_at": {"position": [0, 0, -2], "target": [0, 0, 0],
                                      "focal": 50.0, "width": 4, "height": 4,
                                      "up_hint": [0, 1, 0]}}
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps({"views": [view]}))
        packets = import_external_masks(tmp_path, mpath)
        assert packets[0].camera is not None
        assert packets[0].camera.focal == 50.0


class TestCli:
    def test_generate_scene_roundtrip(self, tmp_path, capsys):
        out = tmp_path / "scene.txt"
        code = main(["generate-scene", "--out", str(out), "--wholes", "1",
                     "--parts", "2", "--subparts", "1", "--gaussians", "2",
                     "--seed", "3"])
        assert code == 0
        scene = containers.read_scene(out)
        assert scene.n_points == 4

    def test_missing_scene_file_exits_with_data_error(self, tmp_path, capsys):
        code = main(["build-hierarchy", "--scene", str(tmp_path / "missing.txt"),
                     "--out", str(tmp_path / "h")])
        assert code == 2
        assert "missing.txt" in capsys.readouterr().err

    def test_usage_error_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--not-a-flag"])
        assert exc.value.code == 1

    def test_check_gradients_smoke(self, capsys):
        code = main(["check-gradients", "--probes", "6", "--gaussians", "2",
                     "--width", "24", "--height", "24"])
        assert code == 0
        assert "max relative error" in capsys.readouterr().out

    def test_build_hierarchy_writes_masks_and_tree(self, tmp_path, capsys):
        scene_path = tmp_path / "scene.txt"
        main(["generate-scene", "--out", str(scene_path), "--seed", "4",
              "--gaussians", "3"])
        out = tmp_path / "hier"
        code = main(["build-hierarchy", "--scene", str(scene_path),
                     "--n-views", "1", "--width", "32", "--height", "32",
                     "--focal", "48", "--out", str(out)])
        assert code == 0
        assert (out / "view_000" / "tree.txt").exists()
        assert list((out / "view_000").glob("mask_*.hlsm"))
