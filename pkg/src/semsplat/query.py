"""Open-vocabulary queries against a trained feature field.

Pipeline per (view, label): decode each pixel's latent feature to the
ambient space, cosine it against the label's embedding, rescale from [-1, 1]
to [0, 1], then smooth / normalize / threshold / argmax as requested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import LabelDictionary, SemanticCodec
from .errors import ValidationError
from .raster import FeatureMap

DEFAULT_THRESHOLD = 0.4
FULL_RES_FILTER = 20       # tuned for ~1080p captures
FULL_RES_HEIGHT = 1080
MIN_FILTER = 3


@dataclass(frozen=True)
class ScoreMap:
    """Per-pixel relevancy in [0, 1] for one query in one view."""

    values: np.ndarray
    level: int
    label_id: int
    view_id: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError("score map must be 2-d")
        if not np.all(np.isfinite(v)):
            raise ValidationError("score map contains non-finite values")
        if v.size and (v.min() < -1e-12 or v.max() > 1.0 + 1e-12):
            raise ValidationError("scores must lie in [0, 1]")
        object.__setattr__(self, "values", np.clip(v, 0.0, 1.0))

    def replace_values(self, values: np.ndarray) -> "ScoreMap":
        return ScoreMap(values, self.level, self.label_id, self.view_id)


@dataclass(frozen=True)
class QueryResult:
    mask: np.ndarray           # (H, W) bool
    argmax: tuple[int, int]    # (row, col) of the smoothed peak
    peak_score: float


def relevancy_map(feature_map: FeatureMap, codec: SemanticCodec,
                  dictionary: LabelDictionary, level: int, label_id: int,
                  view_id: int = 0) -> ScoreMap:
    """Decoded-cosine relevancy, rescaled to [0, 1]; zero-feature pixels
    score 0 by convention."""
    ambient = dictionary.vector(level, label_id)
    flat = feature_map.flat()                       # (H*W, d)
    decoded = codec.decode(flat)                    # (H*W, D)
    norms = np.linalg.norm(decoded, axis=1)
    zero_feature = np.all(flat == 0.0, axis=1) | (norms < 1e-300)
    safe = np.where(zero_feature, 1.0, norms)
    cos = (decoded @ ambient) / safe
    scores = np.where(zero_feature, 0.0, (np.clip(cos, -1.0, 1.0) + 1.0) / 2.0)
    return ScoreMap(scores.reshape(feature_map.height, feature_map.width),
                    level=level, label_id=label_id, view_id=view_id)


def default_filter_size(height: int) -> int:
    """Filter size scaled from the full-resolution setting of 20."""
    return max(MIN_FILTER, int(round(FULL_RES_FILTER * height / FULL_RES_HEIGHT)))


def smooth(score_map: ScoreMap, k: int) -> ScoreMap:
    """Box mean with edge-clamped (replicated) windows.

    k = 1 is the identity; k larger than both image dimensions degrades to
    the global mean everywhere.  Output values stay within the input range.
    """
    if k < 1:
        raise ValidationError("filter size must be >= 1")
    v = score_map.values
    h, w = v.shape
    if k == 1:
        return score_map
    if k > h and k > w:
        return score_map.replace_values(np.full_like(v, v.mean()))
    lo, hi = (k - 1) // 2, k // 2
    padded = np.pad(v, ((lo, hi), (lo, hi)), mode="edge")
    csum = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    csum = np.pad(csum, ((1, 0), (1, 0)))
    out = (csum[k:, k:] - csum[:-k, k:] - csum[k:, :-k] + csum[:-k, :-k]) / (k * k)
    # cumulative sums can overshoot the exact window mean by float rounding
    out = np.clip(out, v.min(), v.max())
    return score_map.replace_values(out)


def normalize(score_map: ScoreMap) -> ScoreMap:
    """Per-map min-max rescale; constant maps normalize to all zeros."""
    v = score_map.values
    span = float(v.max() - v.min())
    if span < 1e-12:
        return score_map.replace_values(np.zeros_like(v))
    return score_map.replace_values((v - v.min()) / span)


def segment(score_map: ScoreMap, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Binary mask after min-max normalization; constant maps give no pixels."""
    return normalize(score_map).values >= threshold


def localize(score_map: ScoreMap) -> tuple[int, int]:
    """Argmax pixel (row, col); ties break in row-major order."""
    flat_idx = int(np.argmax(score_map.values))
    return divmod(flat_idx, score_map.values.shape[1])


def run_query(feature_map: FeatureMap, codec: SemanticCodec,
              dictionary: LabelDictionary, level: int, label_id: int,
              view_id: int = 0, threshold: float = DEFAULT_THRESHOLD,
              filter_size: int | None = None,
              smooth_before_segment: bool = False) -> tuple[QueryResult, ScoreMap]:
    """Full query pipeline for one (view, label).

    Localization always uses the smoothed map.  Segmentation thresholds the
    raw normalized map unless smooth_before_segment is set (smoothing first
    is the sensible order at full capture resolution; at desk scale a box
    filter erases few-pixel objects).
    """
    raw = relevancy_map(feature_map, codec, dictionary, level, label_id, view_id)
    k = default_filter_size(feature_map.height) if filter_size is None else filter_size
    smoothed = smooth(raw, k)
    seg_source = smoothed if smooth_before_segment else raw
    mask = segment(seg_source, threshold)
    peak = localize(smoothed)
    return QueryResult(mask=mask, argmax=peak,
                       peak_score=float(smoothed.values[peak])), raw
