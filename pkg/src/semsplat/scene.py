"""Synthetic multi-view scenes with three-level semantic ground truth.

A scene is a set of frozen isotropic Gaussians; the only learnable quantity
is the per-point feature vector.  Scenes are generated as nested clusters
(gaussians inside subpart radius, subparts inside part radius, parts inside
whole radius) so the rendered ground-truth masks nest strictly per view.

Camera convention (artifact choice, nothing upstream pins one): right-handed
pinhole with basis (right, up, forward), right x up = forward.  Pixel
coordinates are (x, y) with x = W/2 + focal * (v . right) / depth and
y = H/2 - focal * (v . up) / depth, so image rows grow downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_BASIS_TOL = 1e-6

# Nested layout fractions, relative to the parent cluster radius.  Children
# sit on a jittered ring well inside the parent so sibling masks stay
# comparable in area (the coverage rule needs area ratios below theta).
_RING_FRAC = 0.52
_SOLO_RADIUS_FRAC = 0.55
_CHILD_RADIUS_FRAC = 0.80
_POSITION_SPREAD_FRAC = 0.38
_SCALE_FRAC = 0.50
_Z_FLATTEN = 0.25
_ANGLE_JITTER = 0.12


@dataclass(frozen=True)
class GaussianPoint:
    """One isotropic Gaussian: frozen geometry plus a learnable feature.

    labels is the (whole_id, part_id, subpart_id) ground-truth triple.
    """

    position: np.ndarray
    opacity: float
    scale: float
    feature: np.ndarray
    labels: tuple[int, int, int]

    def __post_init__(self):
        position = np.asarray(self.position, dtype=np.float64)
        feature = np.asarray(self.feature, dtype=np.float64)
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "feature", feature)
        if position.shape != (3,):
            raise ValidationError(f"position must be a 3-vector, got {position.shape}")
        if not (0.0 < self.opacity <= 1.0):
            raise ValidationError(f"opacity must be in (0, 1], got {self.opacity}")
        if not self.scale > 0.0:
            raise ValidationError(f"scale must be positive, got {self.scale}")
        if feature.ndim != 1 or not np.all(np.isfinite(feature)):
            raise ValidationError("feature must be a finite 1-d vector")
        if len(self.labels) != 3 or any(int(v) < 0 for v in self.labels):
            raise ValidationError(f"labels must be three non-negative ids, got {self.labels}")
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with an orthonormal (right, up, forward) basis."""

    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    right: np.ndarray
    focal: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("position", "forward", "up", "right"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (3,):
                raise ValidationError(f"camera {name} must be a 3-vector")
            object.__setattr__(self, name, v)
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image dimensions must be positive")
        if self.focal <= 0:
            raise ValidationError("focal length must be positive")
        basis = np.stack([self.right, self.up, self.forward])
        gram = basis @ basis.T
        if not np.allclose(gram, np.eye(3), atol=_BASIS_TOL):
            raise ValidationError("camera basis is not orthonormal within 1e-6")

    @classmethod
    def look_at(cls, position, target, focal, width, height, up_hint=(0.0, 0.0, 1.0)):
        """Build a camera at `position` looking toward `target`."""
        position = np.asarray(position, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        forward = target - position
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValidationError("camera position and target coincide")
        forward = forward / norm
        up_hint = np.asarray(up_hint, dtype=np.float64)
        right = np.cross(up_hint, forward)
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ValidationError("up hint is parallel to the view direction")
        right = right / norm
        up = np.cross(forward, right)
        return cls(position=position, forward=forward, up=up, right=right,
                   focal=float(focal), width=int(width), height=int(height))

    def project_array(self, positions: np.ndarray):
        """Vectorized projection of an (N, 3) array.

        Returns (pixels (N, 2), depths (N,), visible (N,) bool).  Pixel rows
        for non-visible points are meaningless and must be ignored.
        """
        rel = np.asarray(positions, dtype=np.float64) - self.position
        depth = rel @ self.forward
        visible = depth > 1e-9
        safe = np.where(visible, depth, 1.0)
        px = self.width / 2.0 + self.focal * (rel @ self.right) / safe
        py = self.height / 2.0 - self.focal * (rel @ self.up) / safe
        return np.stack([px, py], axis=1), depth, visible


def project_point(camera: Camera, position) -> tuple[np.ndarray, float] | None:
    """Project a world point; None when the point is not in front of the camera."""
    pixels, depths, visible = camera.project_array(np.asarray(position, dtype=np.float64)[None, :])
    if not visible[0]:
        return None
    return pixels[0], float(depths[0])


@dataclass(frozen=True)
class Scene:
    """Point set with uniform feature dimension.

    Geometry arrays are frozen; `features` is the trainable quantity and is
    replaced wholesale via `with_features`.
    """

    positions: np.ndarray      # (N, 3)
    opacities: np.ndarray      # (N,)
    scales: np.ndarray         # (N,)
    features: np.ndarray       # (N, d)
    labels: np.ndarray         # (N, 3) int64

    def __post_init__(self):
        for name, arr in (("positions", self.positions), ("opacities", self.opacities),
                          ("scales", self.scales), ("features", self.features)):
            object.__setattr__(self, name, np.asarray(arr, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        n = self.positions.shape[0]
        if n == 0:
            raise ValidationError("scene must contain at least one point")
        if self.positions.shape != (n, 3) or self.labels.shape != (n, 3):
            raise ValidationError("positions/labels have inconsistent shapes")
        if self.opacities.shape != (n,) or self.scales.shape != (n,):
            raise ValidationError("opacities/scales have inconsistent shapes")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValidationError("features must be (N, d)")
        if not np.all((self.opacities > 0.0) & (self.opacities <= 1.0)):
            raise ValidationError("opacities must lie in (0, 1]")
        if not np.all(self.scales > 0.0):
            raise ValidationError("scales must be positive")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features must be finite")
        if np.any(self.labels < 0):
            raise ValidationError("label ids must be non-negative")
        _check_label_nesting(self.labels)

    @classmethod
    def from_points(cls, points: list[GaussianPoint]) -> "Scene":
        if not points:
            raise ValidationError("scene must contain at least one point")
        d = points[0].feature.shape[0]
        for p in points:
            if p.feature.shape[0] != d:
                raise ValidationError("all points must share one feature dimension")
        return cls(
            positions=np.stack([p.position for p in points]),
            opacities=np.array([p.opacity for p in points]),
            scales=np.array([p.scale for p in points]),
            features=np.stack([p.feature for p in points]),
            labels=np.array([p.labels for p in points], dtype=np.int64),
        )

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.n_points

    def point(self, i: int) -> GaussianPoint:
        return GaussianPoint(
            position=self.positions[i].copy(),
            opacity=float(self.opacities[i]),
            scale=float(self.scales[i]),
            feature=self.features[i].copy(),
            labels=tuple(int(v) for v in self.labels[i]),
        )

    @property
    def points(self) -> list[GaussianPoint]:
        return [self.point(i) for i in range(self.n_points)]

    def with_features(self, features: np.ndarray) -> "Scene":
        """Same geometry, new feature array."""
        return Scene(self.positions, self.opacities, self.scales,
                     np.asarray(features, dtype=np.float64), self.labels)

    def label_ids(self, level: int) -> list[int]:
        """Sorted distinct label ids at a level (1=whole, 2=part, 3=subpart)."""
        if level not in (1, 2, 3):
            raise ValidationError(f"level must be 1, 2 or 3, got {level}")
        return sorted(int(v) for v in np.unique(self.labels[:, level - 1]))

    def parent_label(self, level: int, label_id: int) -> int:
        """Label id one level coarser that contains the given label."""
        if level not in (2, 3):
            raise ValidationError("only levels 2 and 3 have parents")
        rows = self.labels[self.labels[:, level - 1] == label_id]
        if rows.shape[0] == 0:
            raise ValidationError(f"no points carry level-{level} label {label_id}")
        return int(rows[0, level - 2])


def _check_label_nesting(labels: np.ndarray):
    # every part id under exactly one whole, every subpart under exactly one part
    for child_col, parent_col, what in ((1, 0, "part"), (2, 1, "subpart")):
        for child_id in np.unique(labels[:, child_col]):
            parents = np.unique(labels[labels[:, child_col] == child_id, parent_col])
            if parents.size != 1:
                raise ValidationError(
                    f"{what} id {int(child_id)} appears under {parents.size} parents")


@dataclass(frozen=True)
class SceneSpec:
    """Counts, extent and seed that fully determine a generated scene."""

    n_whole: int
    parts_per_whole: int
    subparts_per_part: int
    gaussians_per_subpart: int
    extent: float = 4.0
    seed: int = 0
    d: int = 3

    def __post_init__(self):
        for name in ("n_whole", "parts_per_whole", "subparts_per_part", "gaussians_per_subpart"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.extent <= 0:
            raise ValidationError("extent must be positive")
        if self.d < 1:
            raise ValidationError("feature dimension must be >= 1")


def _ring_positions(center, count, ring_radius, rng, z_jitter):
    """Deterministic jittered ring of `count` child centers around `center`."""
    if count == 1:
        return [np.array(center, dtype=np.float64)]
    base = rng.uniform(0.0, 2.0 * math.pi)
    jitter = rng.uniform(-_ANGLE_JITTER, _ANGLE_JITTER, size=count)
    out = []
    for k in range(count):
        ang = base + 2.0 * math.pi * k / count + jitter[k] * 2.0 * math.pi / count
        offset = np.array([math.cos(ang), math.sin(ang), 0.0]) * ring_radius
        offset[2] = rng.uniform(-z_jitter, z_jitter)
        out.append(np.asarray(center, dtype=np.float64) + offset)
    return out


def generate_scene(spec: SceneSpec) -> Scene:
    """Generate a nested synthetic scene; pure function of the spec.

    Whole clusters sit on a ring around the origin in the z~0 plane, parts on
    a smaller ring inside each whole, subparts inside each part.  Gaussian
    positions scatter around the subpart center and features draw from a
    standard normal, all from one seeded generator.
    """
    rng = np.random.default_rng(spec.seed)
    extent = spec.extent

    whole_ring = 0.0 if spec.n_whole == 1 else 0.34 * extent
    if spec.n_whole == 1:
        whole_radius = 0.20 * extent
    else:
        whole_radius = _CHILD_RADIUS_FRAC * whole_ring * math.sin(math.pi / spec.n_whole)
    whole_centers = _ring_positions(np.zeros(3), spec.n_whole, whole_ring, rng,
                                    z_jitter=0.02 * extent)

    positions, opacities, scales, labels = [], [], [], []
    for w, w_center in enumerate(whole_centers):
        if spec.parts_per_whole == 1:
            part_ring, part_radius = 0.0, _SOLO_RADIUS_FRAC * whole_radius
        else:
            part_ring = _RING_FRAC * whole_radius
            part_radius = _CHILD_RADIUS_FRAC * part_ring * math.sin(math.pi / spec.parts_per_whole)
        part_centers = _ring_positions(w_center, spec.parts_per_whole, part_ring, rng,
                                       z_jitter=0.01 * extent)
        for j, p_center in enumerate(part_centers):
            part_id = w * spec.parts_per_whole + j
            if spec.subparts_per_part == 1:
                sub_ring, sub_radius = 0.0, _SOLO_RADIUS_FRAC * part_radius
            else:
                sub_ring = _RING_FRAC * part_radius
                sub_radius = _CHILD_RADIUS_FRAC * sub_ring * math.sin(math.pi / spec.subparts_per_part)
            sub_centers = _ring_positions(p_center, spec.subparts_per_part, sub_ring, rng,
                                          z_jitter=0.005 * extent)
            for k, s_center in enumerate(sub_centers):
                subpart_id = part_id * spec.subparts_per_part + k
                spread = _POSITION_SPREAD_FRAC * sub_radius
                offsets = rng.normal(0.0, max(spread, 1e-6), size=(spec.gaussians_per_subpart, 3))
                offsets[:, 2] *= _Z_FLATTEN
                sigma = max(_SCALE_FRAC * sub_radius, 1e-4 * extent)
                for g in range(spec.gaussians_per_subpart):
                    positions.append(s_center + offsets[g])
                    opacities.append(rng.uniform(0.88, 0.97))
                    scales.append(sigma * rng.uniform(0.85, 1.15))
                    labels.append((w, part_id, subpart_id))

    features = rng.standard_normal((len(positions), spec.d))
    return Scene(
        positions=np.array(positions),
        opacities=np.array(opacities),
        scales=np.array(scales),
        features=features,
        labels=np.array(labels, dtype=np.int64),
    )


def add_backdrop(scene: Scene, extent: float, *, grid: int = 24,
                 span_factor: float = 1.8, seed: int = 0) -> Scene:
    """Append a ground-plane object under the scene as one extra whole.

    Real captures fill every pixel with something; an empty background leaves
    low-coverage fringe pixels whose blended features point at the nearest
    object, which scale-blind cosine relevancy cannot tell from the object
    itself.  The backdrop supplies that missing contrast.  Its single
    part/subpart carries the next free label ids so nesting still holds.
    """
    if grid < 2:
        raise ValidationError("backdrop grid must be at least 2x2")
    rng = np.random.default_rng(seed)
    half = span_factor * extent
    spacing = 2.0 * half / (grid - 1)
    axis = np.linspace(-half, half, grid)
    xs, ys = np.meshgrid(axis, axis)
    n = grid * grid
    positions = np.stack([
        xs.ravel() + rng.uniform(-0.15, 0.15, n) * spacing,
        ys.ravel() + rng.uniform(-0.15, 0.15, n) * spacing,
        np.full(n, -0.15 * extent),
    ], axis=1)

    whole = int(scene.labels[:, 0].max()) + 1
    part = int(scene.labels[:, 1].max()) + 1
    subpart = int(scene.labels[:, 2].max()) + 1
    labels = np.tile([whole, part, subpart], (n, 1))

    # high per-splat opacity with moderate overlap: total coverage saturates
    # (captured scenes fill the frame) while each pixel still has a dominant
    # splat, keeping the argmax ground-truth boundary near the blend boundary
    return Scene(
        positions=np.concatenate([scene.positions, positions]),
        opacities=np.concatenate([scene.opacities, np.full(n, 0.97)]),
        scales=np.concatenate([scene.scales, np.full(n, 0.60 * spacing)]),
        features=np.concatenate([scene.features, rng.standard_normal((n, scene.d))]),
        labels=np.concatenate([scene.labels, labels]),
    )
