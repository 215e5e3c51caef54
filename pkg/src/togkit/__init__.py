"""togkit: task-oriented grasp evaluation toolkit.

Scores 6-DoF grasp candidates for compatibility with a language-specified
manipulation task, using knowledge-conditioned point-cloud and text
encoders fused by a two-branch cross-attention evaluator.
"""

__version__ = "0.1.0"

from .backends import Backends, make_backends
from .configs import ModelConfig, config_from_profile, default_config, desk_config, minimal_config
from .dataset import (
    DatasetError,
    DatasetIndex,
    GraspAnnotation,
    ImageRef,
    ObjectInstanceRecord,
    SplitSpec,
    load_dataset,
    save_dataset,
)
from .estimator import TaskGraspScorer
from .evaluator import FeatureBundle, GraspEvaluator, ScoreResult
from .geometry import (
    ControlPointSet,
    GRIPPER_CONTROL_POINTS,
    GeometryError,
    GraspPose,
    PointCloud,
    augment_pointcloud,
    downsample,
    fps_select,
    pose_to_control_points,
)
from .knowledge import DescriptionBank, InstructionTemplateSet, KnowledgeCache
from .metrics import EvalReport, ScoredGrasp, average_precision, evaluate, rank_and_decide
from .pipeline import FeaturePipeline, TrainSample
from .synthgen import SynthSpec, default_spec, generate_dataset, overlap_spec
from .training import TrainConfig, bce_loss, fit, make_folds

__all__ = [
    "Backends",
    "ControlPointSet",
    "DatasetError",
    "DatasetIndex",
    "DescriptionBank",
    "EvalReport",
    "FeatureBundle",
    "FeaturePipeline",
    "GRIPPER_CONTROL_POINTS",
    "GeometryError",
    "GraspAnnotation",
    "GraspEvaluator",
    "GraspPose",
    "ImageRef",
    "InstructionTemplateSet",
    "KnowledgeCache",
    "ModelConfig",
    "ObjectInstanceRecord",
    "PointCloud",
    "ScoreResult",
    "ScoredGrasp",
    "SplitSpec",
    "SynthSpec",
    "TaskGraspScorer",
    "TrainConfig",
    "TrainSample",
    "augment_pointcloud",
    "average_precision",
    "bce_loss",
    "config_from_profile",
    "default_config",
    "default_spec",
    "desk_config",
    "downsample",
    "evaluate",
    "fit",
    "fps_select",
    "generate_dataset",
    "load_dataset",
    "make_backends",
    "make_folds",
    "minimal_config",
    "overlap_spec",
    "pose_to_control_points",
    "rank_and_decide",
    "save_dataset",
]
