"""Label embeddings and the linear ambient<->latent codec.

Subpart labels get seeded random unit vectors in an ambient D-space; a part
embedding is the normalized mean of its subpart vectors and a whole embedding
the normalized mean of its part vectors, giving graded parent/child
similarity.  The codec projects onto the top-d principal directions of the
dictionary (uncentered SVD), so encode/decode are plain matrices and total
reconstruction error equals the discarded spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnknownLabelError, ValidationError
from .scene import Scene

LabelKey = tuple[int, int]  # (level, label_id)


def normalized_mean(vectors: list[np.ndarray]) -> np.ndarray:
    """Unit-norm mean of unit vectors; falls back to the first vector if the
    mean degenerates (opposed children cancelling out)."""
    if not vectors:
        raise ValidationError("cannot average an empty vector list")
    mean = np.mean(vectors, axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-9:
        return np.asarray(vectors[0], dtype=np.float64).copy()
    return mean / norm


@dataclass(frozen=True)
class LabelDictionary:
    """Unit-norm ambient vectors keyed by (level, label_id)."""

    vectors: dict[LabelKey, np.ndarray]
    ambient_dim: int

    def __post_init__(self):
        if self.ambient_dim < 2:
            raise ValidationError("ambient dimension must be >= 2")
        for key, v in self.vectors.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (self.ambient_dim,):
                raise ValidationError(f"vector for {key} has shape {v.shape}")
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValidationError(f"vector for {key} is not unit norm")
            self.vectors[key] = v

    def keys(self) -> list[LabelKey]:
        return sorted(self.vectors)

    def vector(self, level: int, label_id: int) -> np.ndarray:
        key = (int(level), int(label_id))
        if key not in self.vectors:
            raise UnknownLabelError(f"no dictionary entry for level {level} label {label_id}")
        return self.vectors[key]

    def matrix(self) -> np.ndarray:
        """All vectors stacked in sorted key order, shape (n_labels, D)."""
        return np.stack([self.vectors[k] for k in self.keys()])


def build_dictionary(scene: Scene, ambient_dim: int = 16, seed: int = 0) -> LabelDictionary:
    """Seeded random unit vectors for subparts; means up the label tree."""
    if ambient_dim < 2:
        raise ValidationError("ambient dimension must be >= 2")
    rng = np.random.default_rng(seed)
    vectors: dict[LabelKey, np.ndarray] = {}

    for sub_id in scene.label_ids(3):
        v = rng.standard_normal(ambient_dim)
        vectors[(3, sub_id)] = v / np.linalg.norm(v)

    for part_id in scene.label_ids(2):
        children = [vectors[(3, s)] for s in scene.label_ids(3)
                    if scene.parent_label(3, s) == part_id]
        vectors[(2, part_id)] = normalized_mean(children)

    for whole_id in scene.label_ids(1):
        children = [vectors[(2, p)] for p in scene.label_ids(2)
                    if scene.parent_label(2, p) == whole_id]
        vectors[(1, whole_id)] = normalized_mean(children)

    return LabelDictionary(vectors=vectors, ambient_dim=ambient_dim)


@dataclass(frozen=True)
class SemanticCodec:
    """Linear D->d encoder and d->D decoder, columns orthonormal."""

    encode_matrix: np.ndarray  # (D, d); latent = encode_matrix.T @ ambient
    decode_matrix: np.ndarray  # (D, d); ambient = decode_matrix @ latent

    def __post_init__(self):
        e = np.asarray(self.encode_matrix, dtype=np.float64)
        d = np.asarray(self.decode_matrix, dtype=np.float64)
        if e.ndim != 2 or e.shape != d.shape:
            raise ValidationError("codec matrices must share one (D, d) shape")
        object.__setattr__(self, "encode_matrix", e)
        object.__setattr__(self, "decode_matrix", d)

    @property
    def ambient_dim(self) -> int:
        return self.encode_matrix.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.encode_matrix.shape[1]

    def encode(self, ambient: np.ndarray) -> np.ndarray:
        """Project ambient vector(s) into the latent space."""
        return np.asarray(ambient, dtype=np.float64) @ self.encode_matrix

    def decode(self, latent: np.ndarray) -> np.ndarray:
        """Lift latent vector(s) back to the ambient space."""
        return np.asarray(latent, dtype=np.float64) @ self.decode_matrix.T


def fit_codec(dictionary: LabelDictionary, latent_dim: int) -> SemanticCodec:
    """Principal-subspace codec: top-d right singular vectors of the stacked
    dictionary, encode = projection, decode = its transpose back-projection."""
    if latent_dim < 1:
        raise ValidationError("latent dimension must be >= 1")
    if latent_dim > dictionary.ambient_dim:
        raise ValidationError(
            f"latent dim {latent_dim} exceeds ambient dim {dictionary.ambient_dim}")
    x = dictionary.matrix()
    _, _, vt = np.linalg.svd(x, full_matrices=True)
    basis = vt[:latent_dim].T  # (D, d)
    return SemanticCodec(encode_matrix=basis, decode_matrix=basis.copy())


def reconstruction_error(codec: SemanticCodec, dictionary: LabelDictionary) -> float:
    """Total squared reconstruction error of the dictionary under the codec."""
    x = dictionary.matrix()
    recon = codec.decode(codec.encode(x))
    return float(np.sum((x - recon) ** 2))


def encode_query(dictionary: LabelDictionary, codec: SemanticCodec,
                 level: int, label_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Latent and ambient embeddings for a label query."""
    ambient = dictionary.vector(level, label_id)
    return codec.encode(ambient), ambient


def import_dictionary(matrix: np.ndarray, keys: list[LabelKey]) -> LabelDictionary:
    """Build a dictionary from externally computed embeddings (rows of
    `matrix`, one per key); rows are normalized to unit length."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(keys):
        raise ValidationError("embedding matrix rows must match the key list")
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms < 1e-12):
        raise ValidationError("imported embeddings contain a zero vector")
    vectors = {(int(l), int(i)): row / n
               for (l, i), row, n in zip(keys, matrix, norms)}
    if len(vectors) != len(keys):
        raise ValidationError("duplicate keys in imported dictionary")
    return LabelDictionary(vectors=vectors, ambient_dim=matrix.shape[1])


def load_dictionary_container(container_path, keys_path) -> LabelDictionary:
    """Import external embeddings (e.g. 512-D CLIP vectors) stored in a
    feature-map container of shape (D, n_labels, 1), with a JSON sidecar
    listing [level, label_id] per row."""
    import json
    from pathlib import Path

    from . import containers

    fmap = containers.read_feature_map(container_path)
    if fmap.width != 1:
        raise ValidationError(
            f"embedding container must have width 1, got {fmap.width}")
    keys = [(int(l), int(i)) for l, i in json.loads(Path(keys_path).read_text())]
    matrix = fmap.values[:, :, 0].T  # (n_labels, D)
    return import_dictionary(matrix, keys)
