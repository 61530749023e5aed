"""Training objectives over rendered feature maps and mask-mean features.

Three terms share one rendered map per view:

  clustering: pulls in-mask pixel features toward the mask's mean,
      value = (1/L) sum_l sum_i ||B_i (M - mean_i)||^2.
  instance contrast: arranges pairwise mean distances at level-gap targets,
      value = (1/(Nt(Nt-1))) sum_{i != j} (log(1/||mi - mj||) - log base^|dl|)^2,
      so a pair's implied target distance is base^(-|dl|).
  sibling contrast: InfoNCE over parent-relative cosines, positives are
      same-parent siblings, negatives same-level nodes under other parents.

Means are treated as constants inside the clustering gradient (k-means style
alternation); because in-mask residuals sum to zero this equals the full
derivative, so finite differences on the honest loss agree.  The contrastive
terms differentiate through the means, and the total loss pushes mean
gradients back to pixels (grad/pixel_count) and on to point features through
the blending adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ValidationError
from .hierarchy import MaskEntry, MaskTree, siblings_under
from .raster import FeatureMap, backprop_map_gradient, render_feature_array
from .views import ViewPacket

COINCIDENT_DISTANCE = 1e-8
PRUNE_COSINE = 0.999
_STABLE_EPS = 1e-12


@dataclass(frozen=True)
class HyperParams:
    """Objective hyperparameters and their stock defaults."""

    coverage_threshold: float = 0.9
    distance_base: float = 10.0
    temperature: float = 0.1
    instance_weight: float = 1e-6
    sibling_weight: float = 1e-5
    literal_denominator: bool = True
    hc_orientation: str = "child_in_parent"
    prune_similar_pairs: bool = False

    def __post_init__(self):
        if not (0.5 < self.coverage_threshold <= 1.0):
            raise ValidationError("coverage_threshold must lie in (0.5, 1]")
        if self.distance_base <= 0:
            raise ValidationError("distance_base must be positive")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.hc_orientation not in ("child_in_parent", "parent_in_child"):
            raise ValidationError(f"unknown hc_orientation {self.hc_orientation!r}")


@dataclass
class LossDiagnostics:
    """Counters for skipped/pruned contributions; purely informational."""

    coincident_pairs: int = 0
    degenerate_similarity_pairs: int = 0
    anchors_without_positives: int = 0
    anchors_without_negatives: int = 0
    pruned_pairs: int = 0
    views_without_instance_pairs: int = 0

    def merge(self, other: "LossDiagnostics") -> "LossDiagnostics":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class MeanEntry:
    mean: np.ndarray
    level: int
    count: int


@dataclass
class MeanFeatureTable:
    """Per-mask mean feature vectors for one view."""

    view_id: int
    entries: dict[int, MeanEntry]

    def levels(self) -> list[int]:
        return sorted({e.level for e in self.entries.values()})

    def ids_at_level(self, level: int) -> list[int]:
        return sorted(i for i, e in self.entries.items() if e.level == level)

    def mean(self, mask_id: int) -> np.ndarray:
        return self.entries[mask_id].mean


def _as_flat(feature_map) -> np.ndarray:
    if isinstance(feature_map, FeatureMap):
        return feature_map.flat()
    arr = np.asarray(feature_map, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError("expected a FeatureMap or an (H*W, d) array")
    return arr


def _mask_pixel_lookup(masks: list[MaskEntry],
                       pixels: dict[int, np.ndarray] | None) -> dict[int, np.ndarray]:
    if pixels is not None:
        return pixels
    return {m.id: np.flatnonzero(m.bits.reshape(-1)) for m in masks}


def mean_mask_feature(feature_map, mask: MaskEntry) -> np.ndarray:
    """Arithmetic mean of the map over the mask's true bits."""
    flat = _as_flat(feature_map)
    idx = np.flatnonzero(mask.bits.reshape(-1))
    if idx.size == 0:
        raise ValidationError(f"mask {mask.id} is empty")
    if idx[-1] >= flat.shape[0]:
        raise ValidationError("mask does not fit the feature map")
    return flat[idx].mean(axis=0)


def mean_feature_table(feature_map, masks: list[MaskEntry], view_id: int = 0,
                       pixels: dict[int, np.ndarray] | None = None) -> MeanFeatureTable:
    flat = _as_flat(feature_map)
    lookup = _mask_pixel_lookup(masks, pixels)
    entries = {}
    for m in masks:
        idx = lookup[m.id]
        if idx.size == 0:
            raise ValidationError(f"mask {m.id} is empty")
        entries[m.id] = MeanEntry(mean=flat[idx].mean(axis=0), level=m.level,
                                  count=int(idx.size))
    return MeanFeatureTable(view_id=view_id, entries=entries)


def clustering_loss(feature_map, masks: list[MaskEntry], table: MeanFeatureTable,
                    pixels: dict[int, np.ndarray] | None = None
                    ) -> tuple[float, np.ndarray]:
    """Squared in-mask deviation from the mask mean, averaged over levels.

    Returns (value, gradient) with the gradient shaped like the flat map:
    at pixel p it is (2/L) * sum over masks containing p of (M(p) - mean).
    """
    flat = _as_flat(feature_map)
    lookup = _mask_pixel_lookup(masks, pixels)
    levels = sorted({m.level for m in masks})
    if not levels:
        return 0.0, np.zeros_like(flat)
    n_levels = len(levels)
    value = 0.0
    grad = np.zeros_like(flat)
    for m in masks:
        idx = lookup[m.id]
        resid = flat[idx] - table.mean(m.id)
        value += float(np.sum(resid * resid))
        grad[idx] += (2.0 / n_levels) * resid
    return value / n_levels, grad


@dataclass
class MeanGradResult:
    value: float
    grads: dict[int, np.ndarray]
    diagnostics: LossDiagnostics


def instance_contrast_loss(table: MeanFeatureTable, distance_base: float,
                           prune_similar_pairs: bool = False) -> MeanGradResult:
    """Pairwise log-distance targets between all mask means of one view.

    Ordered pairs are summed (each unordered pair contributes twice) to match
    the 1/(Nt(Nt-1)) normalization; pairs with coincident means are skipped
    and counted instead of clamped.
    """
    diag = LossDiagnostics()
    ids = sorted(table.entries)
    n = len(ids)
    if n < 2:
        diag.views_without_instance_pairs = 1
        return MeanGradResult(0.0, {i: np.zeros_like(table.mean(i)) for i in ids}, diag)

    means = np.stack([table.mean(i) for i in ids])
    levels = np.array([table.entries[i].level for i in ids])
    log_base = math.log(distance_base)

    grads = np.zeros_like(means)
    value = 0.0
    ii, jj = np.triu_indices(n, k=1)
    diff = means[ii] - means[jj]
    dist = np.linalg.norm(diff, axis=1)
    gap = np.abs(levels[ii] - levels[jj])

    keep = dist > COINCIDENT_DISTANCE
    diag.coincident_pairs += int(2 * np.count_nonzero(~keep))
    if prune_similar_pairs:
        norms = np.linalg.norm(means, axis=1)
        denom = norms[ii] * norms[jj]
        cos = np.where(denom > _STABLE_EPS,
                       np.einsum("ij,ij->i", means[ii], means[jj]) / np.maximum(denom, _STABLE_EPS),
                       0.0)
        pruned = keep & (cos > PRUNE_COSINE)
        diag.pruned_pairs += int(2 * np.count_nonzero(pruned))
        keep &= ~pruned

    if np.any(keep):
        t = -np.log(dist[keep]) - gap[keep] * log_base
        value = float(2.0 * np.sum(t * t))
        # both orders of a pair contribute the same term
        coef = (-4.0 * t / (dist[keep] ** 2))[:, None] * diff[keep]
        np.add.at(grads, ii[keep], coef)
        np.add.at(grads, jj[keep], -coef)

    norm = 1.0 / (n * (n - 1))
    return MeanGradResult(value * norm,
                          {i: grads[k] * norm for k, i in enumerate(ids)}, diag)


def parent_relative_similarity(mi: np.ndarray, mj: np.ndarray,
                               parent: np.ndarray) -> float:
    """Cosine of the two mean vectors after subtracting the shared parent mean."""
    u = np.asarray(mi, dtype=np.float64) - parent
    v = np.asarray(mj, dtype=np.float64) - parent
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= COINCIDENT_DISTANCE or nv <= COINCIDENT_DISTANCE:
        raise ValidationError("mean coincides with the parent mean; pair must be skipped")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _cosine_with_grads(u: np.ndarray, v: np.ndarray):
    """cos(u, v) and its gradients w.r.t. u and v (no clipping)."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    c = float(np.dot(u, v) / (nu * nv))
    gu = v / (nu * nv) - c * u / (nu * nu)
    gv = u / (nu * nv) - c * v / (nv * nv)
    return c, gu, gv


def sibling_contrast_loss(table: MeanFeatureTable, tree: MaskTree,
                          temperature: float, literal_denominator: bool = True,
                          prune_similar_pairs: bool = False) -> MeanGradResult:
    """InfoNCE over parent-relative cosines at levels with a parent mean.

    Anchors are nodes whose parent is in the table; positives share the
    parent, negatives sit at the same level under a different parent.  With
    the literal denominator the positive term is excluded from the partition
    sum (bounded since similarities lie in [-1, 1]); the standard form adds
    it back.  Value is -(1/(L'*Np)) * sum of log-ratios, where Np counts the
    contributing (anchor, positive) terms and L' the contributing levels.
    """
    diag = LossDiagnostics()
    grads = {i: np.zeros_like(table.mean(i)) for i in table.entries}
    raw_grads = {i: np.zeros_like(table.mean(i)) for i in table.entries}

    inv_t = 1.0 / temperature
    total = 0.0
    n_terms = 0
    contributing_levels: set[int] = set()

    for anchor_id, entry in sorted(table.entries.items()):
        if anchor_id not in tree.nodes:
            continue
        parent_id = tree.parent_of(anchor_id)
        if parent_id is None or parent_id not in table.entries:
            continue
        parent_mean = table.mean(parent_id)
        u_anchor = entry.mean - parent_mean
        if np.linalg.norm(u_anchor) <= COINCIDENT_DISTANCE:
            diag.degenerate_similarity_pairs += 1
            continue

        positives = [j for j in siblings_under(tree, anchor_id) if j in table.entries]
        negatives = [k for k in table.ids_at_level(entry.level)
                     if k != anchor_id and k not in positives
                     and tree.nodes.get(k) is not None
                     and tree.parent_of(k) != parent_id]

        def shifted_ok(other_id: int) -> bool:
            n = np.linalg.norm(table.mean(other_id) - parent_mean)
            if n <= COINCIDENT_DISTANCE:
                diag.degenerate_similarity_pairs += 1
                return False
            return True

        positives = [j for j in positives if shifted_ok(j)]
        negatives = [k for k in negatives if shifted_ok(k)]
        if prune_similar_pairs:
            kept = []
            for k in negatives:
                na, nk = np.linalg.norm(entry.mean), np.linalg.norm(table.mean(k))
                if na > _STABLE_EPS and nk > _STABLE_EPS and \
                        float(entry.mean @ table.mean(k)) / (na * nk) > PRUNE_COSINE:
                    diag.pruned_pairs += 1
                else:
                    kept.append(k)
            negatives = kept
        if not positives:
            diag.anchors_without_positives += 1
            continue
        if not negatives:
            diag.anchors_without_negatives += 1
            continue

        # similarities and cosine gradients for everything the anchor touches
        sims, grad_u, grad_other = {}, {}, {}
        for other in positives + negatives:
            c, gu, gv = _cosine_with_grads(u_anchor, table.mean(other) - parent_mean)
            sims[other], grad_u[other], grad_other[other] = c, gu, gv

        neg_exp = {k: math.exp(sims[k] * inv_t) for k in negatives}
        z_neg = sum(neg_exp.values())

        for j in positives:
            pos_exp = math.exp(sims[j] * inv_t)
            z = z_neg + (0.0 if literal_denominator else pos_exp)
            term = sims[j] * inv_t - math.log(z)
            total += term
            n_terms += 1
            contributing_levels.add(entry.level)

            # d term / d s_j and d term / d s_k
            if literal_denominator:
                dj = inv_t
            else:
                dj = inv_t * (1.0 - pos_exp / z)
            _accumulate(raw_grads, anchor_id, j, parent_id, dj,
                        grad_u[j], grad_other[j])
            for k in negatives:
                dk = -inv_t * neg_exp[k] / z
                _accumulate(raw_grads, anchor_id, k, parent_id, dk,
                            grad_u[k], grad_other[k])

    if n_terms == 0:
        return MeanGradResult(0.0, grads, diag)

    scale = -1.0 / (len(contributing_levels) * n_terms)
    for i in grads:
        grads[i] = raw_grads[i] * scale
    return MeanGradResult(total * scale, grads, diag)


def _accumulate(raw_grads, anchor_id, other_id, parent_id, coef, g_anchor, g_other):
    raw_grads[anchor_id] += coef * g_anchor
    raw_grads[other_id] += coef * g_other
    raw_grads[parent_id] -= coef * (g_anchor + g_other)


@dataclass
class TotalLossResult:
    value: float
    clustering: float
    instance: float
    sibling: float
    grad: np.ndarray  # (N, d) w.r.t. point features
    diagnostics: LossDiagnostics


def total_loss(features: np.ndarray, packets: list[ViewPacket],
               hp: HyperParams) -> TotalLossResult:
    """Weighted objective and its gradient w.r.t. every point feature,
    summed over the given views.  Packets must be prepared (weights + tree).
    """
    features = np.asarray(features, dtype=np.float64)
    n, d = features.shape
    grad = np.zeros((n, d))
    v_total = v_cluster = v_instance = v_sibling = 0.0
    diag = LossDiagnostics()

    for packet in packets:
        if packet.weights is None or packet.tree is None:
            raise ValidationError(
                f"view {packet.view_id} is not prepared (weights/tree missing)")
        pixels = {m.id: packet.mask_pixels(m.id) for m in packet.masks}
        flat = render_feature_array(packet.weights, features)
        table = mean_feature_table(flat, packet.masks, packet.view_id, pixels)

        c_val, map_grad = clustering_loss(flat, packet.masks, table, pixels)
        ins = instance_contrast_loss(table, hp.distance_base, hp.prune_similar_pairs)
        sib = sibling_contrast_loss(table, packet.tree, hp.temperature,
                                    hp.literal_denominator, hp.prune_similar_pairs)
        diag.merge(ins.diagnostics).merge(sib.diagnostics)

        # mean gradients spread to pixels: d mean / d M(p) = 1/count
        for mask_id, entry in table.entries.items():
            g = hp.instance_weight * ins.grads[mask_id] \
                + hp.sibling_weight * sib.grads[mask_id]
            if np.any(g):
                map_grad[pixels[mask_id]] += g / entry.count

        grad += backprop_map_gradient(packet.weights, map_grad)
        v_cluster += c_val
        v_instance += ins.value
        v_sibling += sib.value

    v_total = v_cluster + hp.instance_weight * v_instance + hp.sibling_weight * v_sibling
    return TotalLossResult(value=v_total, clustering=v_cluster, instance=v_instance,
                           sibling=v_sibling, grad=grad, diagnostics=diag)
