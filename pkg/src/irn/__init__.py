"""Trajectory-based hand-object interaction recognition.

Pairwise attention encoders reason about each hand against its counterpart
trajectories, a self-attention-free decoder enriches the globally pooled
action representation, and a synthetic motion-defined dataset exercises the
whole pipeline end to end.
"""
from .config import (ExperimentConfig, ConfigError, desk_config,
                     paper_scale_config, config_hash, apply_overrides,
                     load_config)
from .detections import (BoundingBox, FrameDetections, Role, RoleTrack, ROLES,
                         PAIR_ORDER, build_role_tracks, filter_detections,
                         rasterize_binary_map)
from .backbone import TwoPathwayBackbone, VideoClip, roi_average_pool
from .spe import SpatialPositionEncoder, TrajectoryFuser
from .interaction import (AblationMask, InteractionReasoningNetwork,
                          build_model)
from .synthdata import (CATALOG, NoiseSpec, build_dataset, generate_clip,
                        inject_noise, rule_based_classify)
from .augment import AugmentSpec, scr_augment, std_augment
from .train_eval import (MetricsRecord, OptimizerSpec, ablation_registry,
                         evaluate, load_checkpoint, lr_at_epoch,
                         run_ablation_suite, save_checkpoint, train)
from .estimator import IRNClassifier

__version__ = "0.1.0"

__all__ = [
    "AblationMask", "AugmentSpec", "BoundingBox", "CATALOG", "ConfigError",
    "ExperimentConfig", "FrameDetections", "IRNClassifier",
    "InteractionReasoningNetwork", "MetricsRecord", "NoiseSpec",
    "OptimizerSpec", "PAIR_ORDER", "ROLES", "Role", "RoleTrack",
    "SpatialPositionEncoder", "TrajectoryFuser", "TwoPathwayBackbone",
    "VideoClip", "ablation_registry", "apply_overrides", "build_dataset",
    "build_model", "build_role_tracks", "config_hash", "desk_config",
    "evaluate", "filter_detections", "generate_clip", "inject_noise",
    "load_checkpoint", "load_config", "lr_at_epoch", "paper_scale_config",
    "rasterize_binary_map", "roi_average_pool", "rule_based_classify",
    "run_ablation_suite", "save_checkpoint", "scr_augment", "std_augment",
    "train",
]
