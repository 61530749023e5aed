import numpy as np
import pytest

from semsplat.embed import (LabelDictionary, SemanticCodec, build_dictionary,
                            encode_query, fit_codec, import_dictionary,
                            normalized_mean, reconstruction_error)
from semsplat.errors import UnknownLabelError, ValidationError
from semsplat.scene import SceneSpec, generate_scene


def dictionary_from_rows(rows):
    rows = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    d = len(next(iter(rows.values())))
    return LabelDictionary(vectors=rows, ambient_dim=d)


class TestBuildDictionary:
    def test_single_child_mean_is_child(self):
        scene = generate_scene(SceneSpec(1, 1, 1, 2, seed=3))
        d = build_dictionary(scene, ambient_dim=8, seed=1)
        assert np.allclose(d.vector(2, 0), d.vector(3, 0))
        assert np.allclose(d.vector(1, 0), d.vector(3, 0))

    def test_orthogonal_children_mean(self):
        u = np.array([1.0, 0.0, 0.0, 0.0])
        v = np.array([0.0, 1.0, 0.0, 0.0])
        mean = normalized_mean([u, v])
        assert np.allclose(mean, (u + v) / np.sqrt(2.0))
        assert float(mean @ u) == pytest.approx(1.0 / np.sqrt(2.0))

    def test_deterministic_for_seed(self, small_scene):
        a = build_dictionary(small_scene, 16, seed=9)
        b = build_dictionary(small_scene, 16, seed=9)
        assert a.keys() == b.keys()
        for k in a.keys():
            assert np.array_equal(a.vectors[k], b.vectors[k])

    def test_all_vectors_unit_norm(self, small_scene):
        d = build_dictionary(small_scene, 16, seed=0)
        for k in d.keys():
            assert np.linalg.norm(d.vectors[k]) == pytest.approx(1.0, abs=1e-9)

    def test_rejects_tiny_ambient(self, small_scene):
        with pytest.raises(ValidationError):
            build_dictionary(small_scene, 1, seed=0)

    def test_parent_child_cosine_beats_sibling_cosine(self):
        # guaranteed for two-child families: cos(parent, child) = sqrt((1+c)/2) >= c
        for seed in range(6):
            scene = generate_scene(SceneSpec(2, 2, 2, 1, seed=seed))
            d = build_dictionary(scene, 16, seed=seed)
            for part_id in scene.label_ids(2):
                subs = [s for s in scene.label_ids(3)
                        if scene.parent_label(3, s) == part_id]
                parent = d.vector(2, part_id)
                sib_cos = float(d.vector(3, subs[0]) @ d.vector(3, subs[1]))
                for s in subs:
                    assert float(parent @ d.vector(3, s)) >= sib_cos - 1e-12


class TestFitCodec:
    def test_full_rank_is_identity_on_dictionary(self, small_scene):
        d = build_dictionary(small_scene, 8, seed=2)
        codec = fit_codec(d, 8)
        x = d.matrix()
        recon = codec.decode(codec.encode(x))
        assert np.allclose(recon, x, atol=1e-9)

    def test_planar_dictionary_exact_at_two(self):
        rows = {}
        rng = np.random.default_rng(0)
        for i in range(5):
            a, b = rng.standard_normal(2)
            v = np.zeros(6)
            v[0], v[3] = a, b
            rows[(3, i)] = v / np.linalg.norm(v)
        d = dictionary_from_rows(rows)
        codec = fit_codec(d, 2)
        assert reconstruction_error(codec, d) == pytest.approx(0.0, abs=1e-9)

    def test_discarded_spectrum_on_orthogonal_pair(self):
        # degenerate spectrum: the per-vector split is tie-break dependent,
        # but the total error always equals the discarded singular value
        rows = {(3, 0): np.array([1.0, 0, 0, 0]), (3, 1): np.array([0, 1.0, 0, 0])}
        d = dictionary_from_rows(rows)
        codec = fit_codec(d, 1)
        assert reconstruction_error(codec, d) == pytest.approx(1.0, abs=1e-9)

    def test_error_matches_discarded_spectrum(self, small_scene):
        d = build_dictionary(small_scene, 16, seed=5)
        x = d.matrix()
        s = np.linalg.svd(x, compute_uv=False)
        for latent in (2, 3, 5):
            codec = fit_codec(d, latent)
            assert reconstruction_error(codec, d) == pytest.approx(
                float(np.sum(s[latent:] ** 2)), abs=1e-6)

    def test_latent_dim_cannot_exceed_ambient(self, small_scene):
        d = build_dictionary(small_scene, 4, seed=0)
        with pytest.raises(ValidationError):
            fit_codec(d, 5)

    def test_degenerate_dictionary_still_fits(self):
        v = np.array([0.5, 0.5, 0.5, 0.5])
        rows = {(3, i): v.copy() for i in range(4)}
        d = dictionary_from_rows(rows)
        codec = fit_codec(d, 2)
        assert reconstruction_error(codec, d) == pytest.approx(0.0, abs=1e-9)

    def test_no_random_codec_beats_principal_subspace(self, small_scene):
        d = build_dictionary(small_scene, 12, seed=7)
        codec = fit_codec(d, 3)
        best = reconstruction_error(codec, d)
        x = d.matrix()
        rng = np.random.default_rng(123)
        for _ in range(200):
            q, _ = np.linalg.qr(rng.standard_normal((12, 3)))
            rival = SemanticCodec(encode_matrix=q, decode_matrix=q.copy())
            rival_err = float(np.sum((x - rival.decode(rival.encode(x))) ** 2))
            assert best <= rival_err + 1e-9


class TestEncodeQuery:
    def test_latent_is_projection(self, small_scene):
        d = build_dictionary(small_scene, 16, seed=2)
        codec = fit_codec(d, 3)
        latent, ambient = encode_query(d, codec, 1, 0)
        assert np.allclose(latent, codec.encode(ambient))
        assert np.allclose(ambient, d.vector(1, 0))

    def test_roundtrip_cosine_when_subspace_captured(self):
        rows = {}
        rng = np.random.default_rng(3)
        basis = np.linalg.qr(rng.standard_normal((8, 2)))[0]
        for i in range(4):
            coef = rng.standard_normal(2)
            v = basis @ coef
            rows[(3, i)] = v / np.linalg.norm(v)
        d = dictionary_from_rows(rows)
        codec = fit_codec(d, 2)
        latent, ambient = encode_query(d, codec, 3, 0)
        recon = codec.decode(latent)
        cos = float(recon @ ambient / np.linalg.norm(recon))
        assert cos >= 0.99

    def test_unknown_label_rejected(self, small_scene):
        d = build_dictionary(small_scene, 16, seed=2)
        codec = fit_codec(d, 3)
        with pytest.raises(UnknownLabelError):
            encode_query(d, codec, 1, 999)


class TestImportDictionary:
    def test_rows_normalized_and_keyed(self):
        matrix = np.array([[2.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
        d = import_dictionary(matrix, [(1, 0), (1, 1)])
        assert np.allclose(d.vector(1, 0), [1, 0, 0])
        assert np.allclose(d.vector(1, 1), [0, 1, 0])

    def test_zero_row_rejected(self):
        with pytest.raises(ValidationError):
            import_dictionary(np.zeros((1, 4)), [(1, 0)])

    def test_container_import_roundtrip(self, tmp_path):
        import json

        from semsplat import containers
        from semsplat.embed import load_dictionary_container
        from semsplat.raster import FeatureMap

        rng = np.random.default_rng(5)
        matrix = rng.standard_normal((3, 8)).astype(np.float32)  # 3 labels, D=8
        containers.write_feature_map(tmp_path / "emb.hlsf",
                                     FeatureMap(matrix.T[:, :, None]))
        keys = [[3, 0], [3, 1], [2, 0]]
        (tmp_path / "keys.json").write_text(json.dumps(keys))
        d = load_dictionary_container(tmp_path / "emb.hlsf", tmp_path / "keys.json")
        assert d.ambient_dim == 8
        for (l, i), row in zip(keys, matrix):
            expected = row.astype(np.float64) / np.linalg.norm(row.astype(np.float64))
            assert np.allclose(d.vector(l, i), expected, atol=1e-7)
