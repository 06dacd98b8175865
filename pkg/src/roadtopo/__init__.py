"""Lane-topology targets, decoding, baselines and evaluation on BEV grids."""

from __future__ import annotations

__version__ = "0.1.0"

from .baseline import baseline_predict
from .decoding import decode_graph, decode_keypoints
from .encoding import EncoderConfig, encode_affinity, encode_fields, encode_keypoint_grid, encode_targets
from .errors import FormatError, RoadTopoError, ValidationError
from .estimators import ShortestPathBaseline, TopologyDecoder, TopologyEncoder
from .graph import GridSpec, LaneEdge, LaneGraph, LaneNode, NodeKind, Pose2, prune_graph, scope_filter
from .metrics import evaluate, match_keypoints, ssim
from .synth import NoiseSpec, SceneSpec, Template, ds_combine, generate_scene

__all__ = [
    "__version__", "baseline_predict", "decode_graph", "decode_keypoints", "EncoderConfig", "encode_affinity",
    "encode_fields", "encode_keypoint_grid", "encode_targets", "FormatError", "RoadTopoError", "ValidationError",
    "ShortestPathBaseline", "TopologyDecoder", "TopologyEncoder", "GridSpec", "LaneEdge", "LaneGraph", "LaneNode",
    "NodeKind", "Pose2", "prune_graph", "scope_filter", "evaluate", "match_keypoints", "ssim", "NoiseSpec",
    "SceneSpec", "Template", "ds_combine", "generate_scene",
]
