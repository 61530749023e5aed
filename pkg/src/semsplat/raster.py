"""Per-pixel blending weights and feature/label map rendering.

The weights make rendering a fixed linear operator: a feature map is
M(p) = sum_i w_i(p) * f_i with w_i(p) = a_i(p) * prod_{j in front}(1 - a_j(p))
and a_i(p) the screen-space Gaussian alpha.  Geometry is frozen, so a
WeightField is computed once per view and reused for every render/backprop.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ValidationError
from .scene import Camera, Scene

ALPHA_CUTOFF = 1e-4
ALPHA_CLAMP = 0.999
BACKGROUND_COVERAGE = 0.05


@dataclass(frozen=True)
class WeightField:
    """Compressed per-pixel (point, weight) lists, front-to-back.

    CSR-style layout: entries for flat pixel p live in
    [offsets[p], offsets[p + 1]), sorted by ascending depth.
    """

    width: int
    height: int
    n_points: int
    offsets: np.ndarray       # (H*W + 1,) int64
    point_index: np.ndarray   # (K,) int32
    weight: np.ndarray        # (K,) float64

    def entries_at(self, row: int, col: int) -> list[tuple[int, float]]:
        p = row * self.width + col
        lo, hi = self.offsets[p], self.offsets[p + 1]
        return [(int(i), float(w)) for i, w in
                zip(self.point_index[lo:hi], self.weight[lo:hi])]

    def coverage(self) -> np.ndarray:
        """Per-pixel sum of weights, shape (H, W)."""
        total = np.zeros(self.height * self.width)
        np.add.at(total, self.entry_pixel, self.weight)
        return total.reshape(self.height, self.width)

    @cached_property
    def entry_pixel(self) -> np.ndarray:
        """Flat pixel index of every entry (cached; fields are immutable)."""
        counts = np.diff(self.offsets)
        return np.repeat(np.arange(self.height * self.width), counts)


@dataclass(frozen=True)
class FeatureMap:
    """Rendered semantic image; values are (d, H, W) and finite."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValidationError("feature map values must be (d, H, W)")
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature map contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def flat(self) -> np.ndarray:
        """(H*W, d) copy, pixel-major."""
        return self.values.reshape(self.d, -1).T.copy()

    @classmethod
    def from_flat(cls, flat: np.ndarray, height: int, width: int) -> "FeatureMap":
        return cls(np.asarray(flat).T.reshape(-1, height, width))


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel ground-truth label triples; invalid pixels are background."""

    labels: np.ndarray   # (H, W, 3) int64
    valid: np.ndarray    # (H, W) bool

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def level_mask(self, level: int, label_id: int) -> np.ndarray:
        """Boolean mask of pixels carrying `label_id` at `level`."""
        return self.valid & (self.labels[:, :, level - 1] == label_id)

    def present_ids(self, level: int) -> list[int]:
        vals = self.labels[:, :, level - 1][self.valid]
        return sorted(int(v) for v in np.unique(vals)) if vals.size else []


def compute_weights(scene: Scene, camera: Camera) -> WeightField:
    """Depth-sorted alpha-compositing weights for every pixel of one view.

    Per point, the screen footprint is an isotropic Gaussian with
    sigma_pix = focal * scale / depth; alphas below ALPHA_CUTOFF are skipped
    and alphas clamp to ALPHA_CLAMP so transmittance never hits zero.
    """
    h, w = camera.height, camera.width
    pixels, depths, visible = camera.project_array(scene.positions)

    entry_pixel, entry_point, entry_alpha, entry_depth = [], [], [], []
    cols = np.arange(w)
    for i in np.flatnonzero(visible):
        opacity = scene.opacities[i]
        if opacity < ALPHA_CUTOFF:
            continue
        depth = depths[i]
        sigma = camera.focal * scene.scales[i] / depth
        # radius where alpha falls to the cutoff
        radius = sigma * np.sqrt(2.0 * np.log(opacity / ALPHA_CUTOFF))
        px, py = pixels[i]
        c0, c1 = int(np.ceil(px - radius)), int(np.floor(px + radius))
        r0, r1 = int(np.ceil(py - radius)), int(np.floor(py + radius))
        c0, c1 = max(c0, 0), min(c1, w - 1)
        r0, r1 = max(r0, 0), min(r1, h - 1)
        if c0 > c1 or r0 > r1:
            continue
        dx = cols[c0:c1 + 1] - px
        dy = np.arange(r0, r1 + 1) - py
        dist2 = dy[:, None] ** 2 + dx[None, :] ** 2
        alpha = opacity * np.exp(-dist2 / (2.0 * sigma * sigma))
        keep = alpha >= ALPHA_CUTOFF
        if not np.any(keep):
            continue
        rows_idx, cols_idx = np.nonzero(keep)
        flat = (rows_idx + r0) * w + (cols_idx + c0)
        entry_pixel.append(flat)
        entry_point.append(np.full(flat.size, i, dtype=np.int64))
        entry_alpha.append(np.minimum(alpha[keep], ALPHA_CLAMP))
        entry_depth.append(np.full(flat.size, depth))

    if not entry_pixel:
        offsets = np.zeros(h * w + 1, dtype=np.int64)
        return WeightField(w, h, scene.n_points, offsets,
                           np.zeros(0, dtype=np.int32), np.zeros(0))

    pix = np.concatenate(entry_pixel)
    pts = np.concatenate(entry_point)
    alphas = np.concatenate(entry_alpha)
    deps = np.concatenate(entry_depth)

    # sort by pixel, then depth; point index breaks depth ties deterministically
    order = np.lexsort((pts, deps, pix))
    pix, pts, alphas = pix[order], pts[order], alphas[order]

    weights = np.empty_like(alphas)
    starts = np.flatnonzero(np.diff(pix, prepend=-1))
    bounds = np.append(starts, pix.size)
    for s, e in zip(bounds[:-1], bounds[1:]):
        a = alphas[s:e]
        trans = np.cumprod(1.0 - a)
        weights[s:e] = a
        weights[s + 1:e] *= trans[:-1]

    counts = np.bincount(pix, minlength=h * w)
    offsets = np.zeros(h * w + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return WeightField(w, h, scene.n_points, offsets, pts.astype(np.int32), weights)


def _check_field_scene(weights: WeightField, n_points: int, d: int | None = None):
    if weights.n_points != n_points:
        raise ValidationError(
            f"weight field was built for {weights.n_points} points, scene has {n_points}")


def render_feature_array(weights: WeightField, features: np.ndarray) -> np.ndarray:
    """Blend an (N, d) feature array into an (H*W, d) pixel array."""
    features = np.asarray(features, dtype=np.float64)
    _check_field_scene(weights, features.shape[0])
    n_pixels = weights.height * weights.width
    d = features.shape[1]
    gathered = features[weights.point_index]
    out = np.empty((n_pixels, d))
    for j in range(d):  # bincount is much faster than np.add.at here
        out[:, j] = np.bincount(weights.entry_pixel,
                                weights.weight * gathered[:, j],
                                minlength=n_pixels)
    return out


def render_feature_map(weights: WeightField, scene: Scene) -> FeatureMap:
    """M(p) = sum_i w_i(p) f_i; exactly linear in the features."""
    flat = render_feature_array(weights, scene.features)
    return FeatureMap.from_flat(flat, weights.height, weights.width)


def render_label_map(weights: WeightField, scene: Scene) -> LabelMap:
    """Ground-truth labels: per pixel, the label triple of the heaviest point.

    Pixels with no entries or total coverage below BACKGROUND_COVERAGE are
    background.
    """
    _check_field_scene(weights, scene.n_points)
    h, w = weights.height, weights.width
    labels = np.zeros((h, w, 3), dtype=np.int64)
    valid = np.zeros((h, w), dtype=bool)
    off = weights.offsets
    lab_flat = labels.reshape(-1, 3)
    val_flat = valid.reshape(-1)
    covered = np.flatnonzero(weights.coverage().reshape(-1) >= BACKGROUND_COVERAGE)
    for p in covered:
        lo, hi = off[p], off[p + 1]
        seg = weights.weight[lo:hi]
        best = weights.point_index[lo + int(np.argmax(seg))]
        lab_flat[p] = scene.labels[best]
        val_flat[p] = True
    return LabelMap(labels=labels, valid=valid)


def backprop_map_gradient(weights: WeightField, map_grad) -> np.ndarray:
    """Adjoint of render_feature_map: pixel gradients back to point features.

    Accepts a FeatureMap, a (d, H, W) array, or an (H*W, d) array; returns
    (N, d) per-point feature gradients.
    """
    if isinstance(map_grad, FeatureMap):
        flat = map_grad.flat()
    else:
        g = np.asarray(map_grad, dtype=np.float64)
        if g.ndim == 3:
            flat = g.reshape(g.shape[0], -1).T
        elif g.ndim == 2:
            flat = g
        else:
            raise ValidationError("gradient must be (d, H, W) or (H*W, d)")
    if flat.shape[0] != weights.height * weights.width:
        raise ValidationError(
            f"gradient has {flat.shape[0]} pixels, field has {weights.height * weights.width}")
    gathered = flat[weights.entry_pixel]
    grad = np.empty((weights.n_points, flat.shape[1]))
    for j in range(flat.shape[1]):
        grad[:, j] = np.bincount(weights.point_index,
                                 weights.weight * gathered[:, j],
                                 minlength=weights.n_points)
    return grad
