"""
Differentiable tensor engine.

PURPOSE: Values, reverse-mode gradients, layers, Adam and checkpoints for every
    trainable or guidable computation in the pipeline
DEPENDENCIES: numpy
"""

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.checkpoint import (
    Checkpoint,
    CheckpointError,
    file_digest,
    load_checkpoint,
    save_checkpoint,
)
from triplane_posterior.diffcore.gradcheck import grad_check
from triplane_posterior.diffcore.nn import ParamStore
from triplane_posterior.diffcore.optim import AdamState, adam_step
from triplane_posterior.diffcore.tensor import (
    ComputationRecord,
    Gradients,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    no_record,
    precision,
    record,
    set_default_dtype,
)

__all__ = [
    # Values and records
    "Tensor",
    "ComputationRecord",
    "Gradients",
    "ShapeError",
    "as_tensor",
    "backward",
    "record",
    "no_record",
    # Precision
    "default_dtype",
    "precision",
    "set_default_dtype",
    # Layers and optimizer
    "ops",
    "ParamStore",
    "AdamState",
    "adam_step",
    "grad_check",
    # Persistence
    "Checkpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "file_digest",
]
