"""Segmentation and localization scoring, including hierarchy consistency.

All metrics are pure pixel-set computations with stated conventions for the
degenerate cases (two empty masks compare as 1.0, a no-pair hierarchy scores
0.0 with a diagnostic count).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion

from .errors import ValidationError
from .hierarchy import MaskEntry, MaskTree


def _as_bool(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValidationError("masks must be 2-d")
    return m.astype(bool)


def iou(pred, gt) -> float:
    """Intersection over union; both-empty pairs score 1 by convention."""
    pred, gt = _as_bool(pred), _as_bool(gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    return (ys * ys + xs * xs) <= r * r


def default_band_radius(height: int, width: int) -> int:
    """2% of the image diagonal, at least one pixel."""
    return max(1, int(round(0.02 * float(np.hypot(height, width)))))


def boundary_band(mask, radius: int) -> np.ndarray:
    """Mask minus its erosion by a disk; pixels outside the image count as
    background, so borders always belong to the band."""
    mask = _as_bool(mask)
    eroded = binary_erosion(mask, structure=_disk(radius), border_value=0)
    return mask & ~eroded


def boundary_iou(pred, gt, radius: int | None = None) -> float:
    """IoU of the two boundary bands; both-empty bands score 1."""
    pred, gt = _as_bool(pred), _as_bool(gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if radius is None:
        radius = default_band_radius(*pred.shape)
    return iou(boundary_band(pred, radius), boundary_band(gt, radius))


def localization_accuracy(points: list[tuple[int, int]], gts: list[np.ndarray]) -> float:
    """Fraction of predicted pixels that land inside their ground-truth mask.

    Zero queries score 0.0 (surface the count alongside when reporting).
    """
    if len(points) != len(gts):
        raise ValidationError("need one predicted point per ground-truth mask")
    if not points:
        return 0.0
    hits = 0
    for (row, col), gt in zip(points, gts):
        gt = _as_bool(gt)
        if 0 <= row < gt.shape[0] and 0 <= col < gt.shape[1] and gt[row, col]:
            hits += 1
    return hits / len(points)


@dataclass
class HierarchyConsistency:
    score: float
    n_pairs: int
    pair_terms: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def no_pairs(self) -> bool:
        return self.n_pairs == 0


def hierarchy_consistency(masks: list[MaskEntry], tree: MaskTree,
                          orientation: str = "child_in_parent") -> HierarchyConsistency:
    """Average nesting quality of tree-linked (parent level l, child l+1) pairs.

    Per level: average over parents-with-children of the per-parent average
    of pair terms; levels then average with weight 1/(L-1), L being the
    number of distinct mask levels present.  With child_in_parent a term is
    the fraction of the child inside its parent (1.0 on strict nesting);
    parent_in_child divides the intersection by the parent area instead.
    """
    if orientation not in ("child_in_parent", "parent_in_child"):
        raise ValidationError(f"unknown orientation {orientation!r}")
    by_id = {m.id: m for m in masks}
    for node_id in tree.nodes:
        if node_id not in by_id:
            raise ValidationError(f"tree node {node_id} has no mask")

    levels = sorted({m.level for m in masks})
    if len(levels) < 2:
        return HierarchyConsistency(score=0.0, n_pairs=0)

    pair_terms: dict[tuple[int, int], float] = {}
    total = 0.0
    n_pairs = 0
    for level in levels[:-1]:
        parent_means = []
        for parent_id in sorted(i for i, n in tree.nodes.items() if n.level == level):
            children = [c for c in tree.children_of(parent_id)
                        if tree.node(c).level == level + 1]
            if not children:
                continue
            terms = []
            for child_id in children:
                parent_bits = by_id[parent_id].bits
                child_bits = by_id[child_id].bits
                inter = float(np.logical_and(parent_bits, child_bits).sum())
                if orientation == "child_in_parent":
                    term = inter / by_id[child_id].area
                else:
                    term = inter / by_id[parent_id].area
                pair_terms[(parent_id, child_id)] = term
                terms.append(term)
                n_pairs += 1
            parent_means.append(float(np.mean(terms)))
        if parent_means:
            total += float(np.mean(parent_means))

    if n_pairs == 0:
        return HierarchyConsistency(score=0.0, n_pairs=0)
    return HierarchyConsistency(score=total / (len(levels) - 1), n_pairs=n_pairs,
                                pair_terms=pair_terms)


def hc_score(masks: list[MaskEntry], tree: MaskTree,
             orientation: str = "child_in_parent") -> float:
    return hierarchy_consistency(masks, tree, orientation).score


@dataclass
class QueryScore:
    view_id: int
    level: int
    label_id: int
    iou: float
    biou: float
    loc_hit: bool


@dataclass
class MetricsReport:
    """Aggregate scores over a query set, all in [0, 1]."""

    per_query: list[QueryScore]
    level_miou: dict[int, float]
    level_mbiou: dict[int, float]
    mean_miou: float
    mean_mbiou: float
    localization: float
    hc: float
    hc_views_no_pairs: int
    n_queries: int

    @classmethod
    def from_scores(cls, scores: list[QueryScore], hc_values: list[float],
                    hc_no_pairs: int) -> "MetricsReport":
        level_miou, level_mbiou = {}, {}
        for level in sorted({s.level for s in scores}):
            at = [s for s in scores if s.level == level]
            level_miou[level] = float(np.mean([s.iou for s in at]))
            level_mbiou[level] = float(np.mean([s.biou for s in at]))
        return cls(
            per_query=scores,
            level_miou=level_miou,
            level_mbiou=level_mbiou,
            mean_miou=float(np.mean([s.iou for s in scores])) if scores else 0.0,
            mean_mbiou=float(np.mean([s.biou for s in scores])) if scores else 0.0,
            localization=(sum(s.loc_hit for s in scores) / len(scores)) if scores else 0.0,
            hc=float(np.mean(hc_values)) if hc_values else 0.0,
            hc_views_no_pairs=hc_no_pairs,
            n_queries=len(scores),
        )
