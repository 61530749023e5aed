"""On-disk containers: binary mask/feature/codec files and text formats.

Binary layout is little-endian throughout: a 4-byte magic, u32 header
fields, then the payload ("HLSM" masks carry one byte per pixel, "HLSF"
feature maps and "HLSC" codecs carry float32).  Text formats (scene, tree,
dictionary, reports) are line-based with %.9g floats so a write-read-write
cycle is byte-stable.

Error categories are distinct: BadMagicError, TruncatedError for short
payloads, DimensionError for absurd or zero dimensions.  Loaded artifacts
re-validate their type invariants on construction.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .embed import LabelDictionary, SemanticCodec
from .errors import (BadMagicError, ContainerError, DimensionError,
                     TruncatedError, ValidationError)
from .hierarchy import MaskEntry, MaskTree, TreeNode
from .raster import FeatureMap
from .scene import Scene

MASK_MAGIC = b"HLSM"
FEATURE_MAGIC = b"HLSF"
CODEC_MAGIC = b"HLSC"
MAX_ELEMENTS = 1 << 31

SCENE_HEADER = "semsplat-scene v1"
TREE_HEADER = "semsplat-tree v1"
DICT_HEADER = "semsplat-dict v1"


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedError(f"file ends inside {what}: wanted {n} bytes, got {len(data)}")
    return data


def _check_magic(f, magic: bytes, path):
    got = f.read(len(magic))
    if got != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {got!r}")


def _check_dims(path, **dims):
    total = 1
    for name, value in dims.items():
        if value <= 0:
            raise DimensionError(f"{path}: {name} must be positive, got {value}")
        total *= value
    if total > MAX_ELEMENTS:
        raise DimensionError(f"{path}: payload of {total} elements exceeds the limit")


# ---------------------------------------------------------------- masks

def write_mask(path, mask: MaskEntry) -> None:
    with open(path, "wb") as f:
        h, w = mask.bits.shape
        f.write(MASK_MAGIC)
        f.write(struct.pack("<4I", h, w, mask.level, mask.id))
        f.write(mask.bits.astype(np.uint8).tobytes())


def read_mask(path, view_id: int = 0) -> MaskEntry:
    path = Path(path)
    with open(path, "rb") as f:
        _check_magic(f, MASK_MAGIC, path)
        h, w, level, mask_id = struct.unpack("<4I", _read_exact(f, 16, "mask header"))
        _check_dims(path, height=h, width=w)
        payload = _read_exact(f, h * w, "mask payload")
        if f.read(1):
            raise ContainerError(f"{path}: trailing bytes after payload")
    bits = np.frombuffer(payload, dtype=np.uint8)
    if not np.all((bits == 0) | (bits == 1)):
        raise ValidationError(f"{path}: mask payload bytes must be 0 or 1")
    return MaskEntry(id=int(mask_id), level=int(level),
                     bits=bits.reshape(h, w).astype(bool), view_id=view_id)


# --------------------------------------------------------- feature maps

def write_feature_map(path, fmap: FeatureMap) -> None:
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<3I", fmap.d, fmap.height, fmap.width))
        f.write(fmap.values.astype("<f4").tobytes())


def read_feature_map(path) -> FeatureMap:
    path = Path(path)
    with open(path, "rb") as f:
        _check_magic(f, FEATURE_MAGIC, path)
        d, h, w = struct.unpack("<3I", _read_exact(f, 12, "feature-map header"))
        _check_dims(path, d=d, height=h, width=w)
        payload = _read_exact(f, 4 * d * h * w, "feature-map payload")
        if f.read(1):
            raise ContainerError(f"{path}: trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return FeatureMap(values.reshape(d, h, w))


# ---------------------------------------------------------------- codec

def write_codec(path, codec: SemanticCodec) -> None:
    with open(path, "wb") as f:
        f.write(CODEC_MAGIC)
        f.write(struct.pack("<2I", codec.ambient_dim, codec.latent_dim))
        f.write(codec.encode_matrix.astype("<f4").tobytes())
        f.write(codec.decode_matrix.astype("<f4").tobytes())


def read_codec(path) -> SemanticCodec:
    path = Path(path)
    with open(path, "rb") as f:
        _check_magic(f, CODEC_MAGIC, path)
        big_d, small_d = struct.unpack("<2I", _read_exact(f, 8, "codec header"))
        _check_dims(path, ambient=big_d, latent=small_d)
        n = 4 * big_d * small_d
        enc = _read_exact(f, n, "codec encode matrix")
        dec = _read_exact(f, n, "codec decode matrix")
        if f.read(1):
            raise ContainerError(f"{path}: trailing bytes after payload")
    shape = (big_d, small_d)
    return SemanticCodec(
        encode_matrix=np.frombuffer(enc, dtype="<f4").astype(np.float64).reshape(shape),
        decode_matrix=np.frombuffer(dec, dtype="<f4").astype(np.float64).reshape(shape),
    )


# ------------------------------------------------------------ scene text

def write_scene(path, scene: Scene) -> None:
    """Text scene file: header, then one point record per line with
    position(3), opacity, scale, labels(3), feature(d), all floats %.9g."""
    lines = [SCENE_HEADER, f"d {scene.d}", f"count {scene.n_points}"]
    for i in range(scene.n_points):
        parts = [_fmt(v) for v in scene.positions[i]]
        parts.append(_fmt(scene.opacities[i]))
        parts.append(_fmt(scene.scales[i]))
        parts.extend(str(int(v)) for v in scene.labels[i])
        parts.extend(_fmt(v) for v in scene.features[i])
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def read_scene(path) -> Scene:
    path = Path(path)
    if not path.exists():
        raise ContainerError(f"scene file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != SCENE_HEADER:
        raise BadMagicError(f"{path}: missing '{SCENE_HEADER}' header")
    try:
        d = int(lines[1].split()[1])
        count = int(lines[2].split()[1])
    except (IndexError, ValueError) as exc:
        raise ContainerError(f"{path}: malformed scene header") from exc
    if d < 1 or count < 1:
        raise DimensionError(f"{path}: d and count must be positive")
    records = [ln for ln in lines[3:] if ln.strip()]
    if len(records) < count:
        raise TruncatedError(f"{path}: expected {count} point records, found {len(records)}")
    positions, opacities, scales, labels, features = [], [], [], [], []
    for ln in records[:count]:
        toks = ln.split()
        if len(toks) != 8 + d:
            raise ContainerError(f"{path}: point record has {len(toks)} fields, expected {8 + d}")
        vals = [float(t) for t in toks[:5]]
        positions.append(vals[:3])
        opacities.append(vals[3])
        scales.append(vals[4])
        labels.append([int(t) for t in toks[5:8]])
        features.append([float(t) for t in toks[8:]])
    return Scene(positions=np.array(positions), opacities=np.array(opacities),
                 scales=np.array(scales), features=np.array(features),
                 labels=np.array(labels, dtype=np.int64))


# ------------------------------------------------------------- tree text

def write_tree(path, tree: MaskTree) -> None:
    lines = [TREE_HEADER]
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        record = {"id": node.id, "level": node.level, "parent_id": node.parent,
                  "children": sorted(node.children), "skip_level": node.skip_level}
        lines.append(json.dumps(record))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tree(path) -> MaskTree:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != TREE_HEADER:
        raise BadMagicError(f"{path}: missing '{TREE_HEADER}' header")
    nodes = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        rec = json.loads(ln)
        nodes[rec["id"]] = TreeNode(id=rec["id"], level=rec["level"],
                                    parent=rec["parent_id"],
                                    children=list(rec["children"]),
                                    skip_level=bool(rec.get("skip_level", False)))
    tree = MaskTree(nodes)
    for node in nodes.values():  # re-validate links on load
        if node.parent is not None:
            if node.parent not in nodes:
                raise ValidationError(f"{path}: node {node.id} has unknown parent")
            if nodes[node.parent].level >= node.level:
                raise ValidationError(f"{path}: node {node.id} parent is not coarser")
    return tree


# ------------------------------------------------------ dictionary text

def write_dictionary(path, dictionary: LabelDictionary) -> None:
    lines = [DICT_HEADER, f"ambient_dim {dictionary.ambient_dim}"]
    for level, label_id in dictionary.keys():
        vec = dictionary.vectors[(level, label_id)]
        lines.append(json.dumps({"label_id": label_id, "level": level,
                                 "vector": [float(v) for v in vec]}))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dictionary(path) -> LabelDictionary:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != DICT_HEADER:
        raise BadMagicError(f"{path}: missing '{DICT_HEADER}' header")
    try:
        ambient_dim = int(lines[1].split()[1])
    except (IndexError, ValueError) as exc:
        raise ContainerError(f"{path}: malformed dictionary header") from exc
    vectors = {}
    for ln in lines[2:]:
        if not ln.strip():
            continue
        rec = json.loads(ln)
        vectors[(int(rec["level"]), int(rec["label_id"]))] = np.array(rec["vector"])
    return LabelDictionary(vectors=vectors, ambient_dim=ambient_dim)
