"""Desk-scale semantic Gaussian splatting lab.

Trains per-Gaussian semantic features on synthetic multi-view scenes under
hierarchical clustering and contrastive objectives, answers label queries
against the trained field, and scores segmentation/localization quality.
"""

from .scene import Camera, GaussianPoint, Scene, SceneSpec, generate_scene, project_point
from .raster import (FeatureMap, LabelMap, WeightField, backprop_map_gradient,
                     compute_weights, render_feature_map, render_label_map)
from .hierarchy import MaskEntry, MaskTree, build_mask_tree, is_covered_by, siblings_under
from .views import ViewPacket, build_view_packets, masks_from_label_map, orbit_cameras
from .embed import (LabelDictionary, SemanticCodec, build_dictionary, encode_query,
                    fit_codec)
from .losses import (HyperParams, MeanFeatureTable, clustering_loss,
                     instance_contrast_loss, mean_feature_table, mean_mask_feature,
                     parent_relative_similarity, sibling_contrast_loss, total_loss)
from .train import TrainConfig, TrainReport, gradient_check, train
from .query import QueryResult, ScoreMap, localize, relevancy_map, run_query, segment, smooth
from .metrics import (MetricsReport, boundary_iou, hc_score, hierarchy_consistency,
                      iou, localization_accuracy)
from .experiment import (ExperimentConfig, import_external_masks, load_config,
                         run_experiment)

__version__ = "0.1.0"

__all__ = [
    "Camera", "GaussianPoint", "Scene", "SceneSpec", "generate_scene", "project_point",
    "FeatureMap", "LabelMap", "WeightField", "backprop_map_gradient", "compute_weights",
    "render_feature_map", "render_label_map",
    "MaskEntry", "MaskTree", "build_mask_tree", "is_covered_by", "siblings_under",
    "ViewPacket", "build_view_packets", "masks_from_label_map", "orbit_cameras",
    "LabelDictionary", "SemanticCodec", "build_dictionary", "encode_query", "fit_codec",
    "HyperParams", "MeanFeatureTable", "clustering_loss", "instance_contrast_loss",
    "mean_feature_table", "mean_mask_feature", "parent_relative_similarity",
    "sibling_contrast_loss", "total_loss",
    "TrainConfig", "TrainReport", "gradient_check", "train",
    "QueryResult", "ScoreMap", "localize", "relevancy_map", "run_query", "segment",
    "smooth",
    "MetricsReport", "boundary_iou", "hc_score", "hierarchy_consistency", "iou",
    "localization_accuracy",
    "ExperimentConfig", "import_external_masks", "load_config", "run_experiment",
    "__version__",
]
