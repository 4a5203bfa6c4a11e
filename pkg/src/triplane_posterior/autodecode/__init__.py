"""
Auto-decoder training and test-time latent fitting.

PURPOSE: Stage-1 joint optimization of the reconstruction model and the latent table,
    fitting of new latents with the model frozen, and held-out evaluation
DEPENDENCIES: numpy, pandas
"""

from triplane_posterior.autodecode.fitting import (
    FitResult,
    HeldoutReport,
    ViewScore,
    eval_heldout,
    fit_latent,
    full_view_rays,
    render_view,
)
from triplane_posterior.autodecode.training import (
    LatentTable,
    Stage1Result,
    TrainConfig,
    TrainingDivergedError,
    build_monitor,
    monitor_metrics,
    sample_training_rays,
    train_stage1,
)

__all__ = [
    # Stage 1
    "TrainConfig",
    "LatentTable",
    "Stage1Result",
    "TrainingDivergedError",
    "train_stage1",
    "sample_training_rays",
    "build_monitor",
    "monitor_metrics",
    # Fitting and evaluation
    "FitResult",
    "fit_latent",
    "ViewScore",
    "HeldoutReport",
    "eval_heldout",
    "full_view_rays",
    "render_view",
]
