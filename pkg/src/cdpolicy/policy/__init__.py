from .agents import ConsistencyPolicy, DiffusionPolicy, make_policy
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointHashError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    NotAStudentError,
    load_checkpoint,
    save_checkpoint,
)
from .network import Architecture, DenoiseNetwork, time_embedding
from .train import TeacherConfig, teacher_train

__all__ = [
    "Architecture",
    "Checkpoint",
    "CheckpointError",
    "CheckpointHashError",
    "CheckpointShapeError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "ConsistencyPolicy",
    "DenoiseNetwork",
    "DiffusionPolicy",
    "NotAStudentError",
    "TeacherConfig",
    "load_checkpoint",
    "make_policy",
    "save_checkpoint",
    "teacher_train",
    "time_embedding",
]
