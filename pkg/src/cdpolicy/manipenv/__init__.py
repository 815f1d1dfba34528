from .dataset import Dataset, Demonstration, Normalizer, generate_dataset, load_dataset, save_dataset
from .evaluate import EvalResult, ExpertPolicy, ObsBatch, RandomPolicy, evaluate_policy
from .pointcloud import fps_downsample, fps_indices, observe_points, raw_cloud
from .world import (
    ACTION_DIMS,
    MAX_STEP,
    TASKS,
    WorldState,
    action_dim,
    expert_action,
    expert_rollout,
    is_success,
    reset,
    step,
)

__all__ = [
    "ACTION_DIMS",
    "MAX_STEP",
    "TASKS",
    "Dataset",
    "Demonstration",
    "EvalResult",
    "ExpertPolicy",
    "Normalizer",
    "ObsBatch",
    "RandomPolicy",
    "WorldState",
    "action_dim",
    "evaluate_policy",
    "expert_action",
    "expert_rollout",
    "fps_downsample",
    "fps_indices",
    "generate_dataset",
    "is_success",
    "load_dataset",
    "observe_points",
    "raw_cloud",
    "reset",
    "save_dataset",
    "step",
]
