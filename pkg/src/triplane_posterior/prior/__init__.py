"""
Diffusion prior over scene latents.

PURPOSE: Noise schedule, epsilon U-Net, prior training and ancestral sampling
DEPENDENCIES: numpy, pandas, pydantic
"""

from triplane_posterior.prior.model import PriorModel, Standardizer
from triplane_posterior.prior.sampling import (
    SamplingDivergedError,
    ancestral_sample,
    sample_chain,
    sample_prior,
)
from triplane_posterior.prior.schedule import (
    NoiseSchedule,
    build_schedule,
    posterior_mean,
    predict_x0,
    q_sample,
)
from triplane_posterior.prior.training import PriorTrainConfig, PriorTrainResult, diffusion_loss, train_prior
from triplane_posterior.prior.unet import EpsilonModel, UNet, UNetConfig, timestep_embedding, unet_forward

__all__ = [
    # Schedule
    "NoiseSchedule",
    "build_schedule",
    "q_sample",
    "predict_x0",
    "posterior_mean",
    # Network
    "EpsilonModel",
    "UNet",
    "UNetConfig",
    "timestep_embedding",
    "unet_forward",
    # Prior bundle
    "PriorModel",
    "Standardizer",
    # Training
    "PriorTrainConfig",
    "PriorTrainResult",
    "diffusion_loss",
    "train_prior",
    # Sampling
    "SamplingDivergedError",
    "ancestral_sample",
    "sample_chain",
    "sample_prior",
]
