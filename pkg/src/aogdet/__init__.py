"""Hierarchical and-or grammar car detector.

Detection and viewpoint estimation with a reconfigurable hierarchy of
multi-car context patterns, per-view occlusion branches, and deformable
parts, scored exactly by dynamic programming over feature pyramids and
trained as a weak-label structural SVM.
"""

from .grammar import (
    AndOrGraph,
    ParseTree,
    occlusion_config_of,
    parse_tree_boxes,
    parse_tree_features,
    score_parse_tree,
    viewpoint_of,
)
from .hog import FeaturePyramid, build_pyramid, compute_cells
from .inference import bottom_up, detect, multi_car_nms, top_down
from .model_io import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "AndOrGraph",
    "FeaturePyramid",
    "ParseTree",
    "bottom_up",
    "build_pyramid",
    "compute_cells",
    "detect",
    "load_model",
    "multi_car_nms",
    "occlusion_config_of",
    "parse_tree_boxes",
    "parse_tree_features",
    "save_model",
    "score_parse_tree",
    "top_down",
    "viewpoint_of",
]
