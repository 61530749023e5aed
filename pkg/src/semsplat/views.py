"""View packets: one camera plus its leveled masks, weights, and tree.

A packet is the training unit.  For synthetic scenes the masks come from the
rendered ground-truth label map; imported packets carry masks read from disk
and compute weights lazily from the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .hierarchy import MaskEntry, MaskTree, build_mask_tree
from .raster import LabelMap, WeightField, compute_weights, render_label_map
from .scene import Camera, Scene


@dataclass
class ViewPacket:
    view_id: int
    camera: Camera | None
    masks: list[MaskEntry]
    weights: WeightField | None = None
    tree: MaskTree | None = None
    label_map: LabelMap | None = None
    _mask_pixels: dict[int, np.ndarray] | None = field(default=None, repr=False)

    def mask_pixels(self, mask_id: int) -> np.ndarray:
        """Flat pixel indices of a mask's true bits (cached)."""
        if self._mask_pixels is None:
            self._mask_pixels = {
                m.id: np.flatnonzero(m.bits.reshape(-1)) for m in self.masks}
        return self._mask_pixels[mask_id]

    def mask_by_id(self, mask_id: int) -> MaskEntry:
        for m in self.masks:
            if m.id == mask_id:
                return m
        raise ValidationError(f"view {self.view_id} has no mask id {mask_id}")

    def prepare(self, scene: Scene, theta: float = 0.9) -> "ViewPacket":
        """Fill in weights and tree if missing; returns self."""
        if self.weights is None:
            if self.camera is None:
                raise ValidationError(
                    f"view {self.view_id} has no camera; cannot compute weights")
            self.weights = compute_weights(scene, self.camera)
        if self.tree is None:
            self.tree = build_mask_tree(self.masks, theta)
        return self


def orbit_cameras(count: int, *, width: int, height: int, focal: float,
                  radius: float, elevation_deg: float = 55.0,
                  target=(0.0, 0.0, 0.0), start_azimuth: float = 0.0) -> list[Camera]:
    """Evenly spaced cameras on a ring above the target, all looking at it."""
    if count < 1:
        raise ValidationError("need at least one camera")
    target = np.asarray(target, dtype=np.float64)
    elev = math.radians(elevation_deg)
    cams = []
    for k in range(count):
        az = start_azimuth + 2.0 * math.pi * k / count
        offset = radius * np.array([
            math.cos(az) * math.cos(elev),
            math.sin(az) * math.cos(elev),
            math.sin(elev),
        ])
        cams.append(Camera.look_at(target + offset, target, focal, width, height))
    return cams


def masks_from_label_map(label_map: LabelMap, view_id: int) -> list[MaskEntry]:
    """One mask per (level, label) present in the view; ids are sequential
    in (level, label) order so builds are deterministic."""
    masks = []
    next_id = 0
    for level in (1, 2, 3):
        for label_id in label_map.present_ids(level):
            bits = label_map.level_mask(level, label_id)
            masks.append(MaskEntry(id=next_id, level=level, bits=bits,
                                   view_id=view_id, label=(level, label_id)))
            next_id += 1
    return masks


def build_view_packets(scene: Scene, cameras: list[Camera],
                       theta: float = 0.9) -> list[ViewPacket]:
    """Render ground-truth masks for each camera and build their trees."""
    packets = []
    for view_id, camera in enumerate(cameras):
        weights = compute_weights(scene, camera)
        label_map = render_label_map(weights, scene)
        masks = masks_from_label_map(label_map, view_id)
        tree = build_mask_tree(masks, theta)
        packets.append(ViewPacket(view_id=view_id, camera=camera, masks=masks,
                                  weights=weights, tree=tree, label_map=label_map))
    return packets
