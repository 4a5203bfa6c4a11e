"""
Guided posterior sampling of scene latents.

PURPOSE: Turn observations into guidance, run guided reverse chains and score the
    resulting samples per task
DEPENDENCIES: numpy, pandas, pydantic
"""

from triplane_posterior.posterior.guidance import (
    DEFAULT_SCALE,
    NOISY_SCALE,
    NOISY_THRESHOLD,
    GuidanceSpec,
    GuidanceStep,
    clean_estimate,
    guidance_gradient,
)
from triplane_posterior.posterior.sampler import (
    PosteriorDivergedError,
    PosteriorResult,
    SamplerTrace,
    batch_posterior,
    load_posterior,
    posterior_sample,
    save_posterior,
)
from triplane_posterior.posterior.tasks import (
    TASKS,
    TaskEvaluation,
    TaskOptions,
    UnknownTaskError,
    build_task_observation,
    evaluate_task,
    resolve_task,
    sample_spread,
)

__all__ = [
    # Guidance
    "DEFAULT_SCALE",
    "NOISY_SCALE",
    "NOISY_THRESHOLD",
    "GuidanceSpec",
    "GuidanceStep",
    "clean_estimate",
    "guidance_gradient",
    # Sampling
    "SamplerTrace",
    "PosteriorResult",
    "PosteriorDivergedError",
    "posterior_sample",
    "batch_posterior",
    "save_posterior",
    "load_posterior",
    # Tasks
    "TASKS",
    "TaskOptions",
    "TaskEvaluation",
    "UnknownTaskError",
    "resolve_task",
    "build_task_observation",
    "evaluate_task",
    "sample_spread",
]
