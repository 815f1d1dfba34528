from .core import (
    ConsistencySchedule,
    DistillConfig,
    LossOutput,
    NetworkTriplet,
    consistency_fn,
    consistency_output,
    ema_update,
    mcd_loss,
    ode_solver_estimate,
    sample_n,
    self_consistency,
)
from .distill import LOG_COLUMNS, DistillResult, Probe, distill, held_out_probe, params_digest

__all__ = [
    "LOG_COLUMNS",
    "ConsistencySchedule",
    "DistillConfig",
    "DistillResult",
    "LossOutput",
    "NetworkTriplet",
    "Probe",
    "consistency_fn",
    "consistency_output",
    "distill",
    "ema_update",
    "held_out_probe",
    "mcd_loss",
    "ode_solver_estimate",
    "params_digest",
    "sample_n",
    "self_consistency",
]
