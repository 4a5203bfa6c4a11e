"""
Reconstruction model: latent -> tri-planes -> neural field -> rendered pixels.

PURPOSE: D1/D2 parameters, the rendering pipeline and its losses
DEPENDENCIES: numpy, pydantic
"""

from triplane_posterior.reconmodel.model import (
    ReconModel,
    ReconProfile,
    TriPlanes,
    decode_triplanes,
    split_planes,
)
from triplane_posterior.reconmodel.render import (
    RenderWeights,
    depth_bins,
    depth_loss,
    expected_depth,
    field_eval,
    observation_loss,
    plane_coordinates,
    rec_loss,
    render_image,
    render_with_planes,
    rm_density,
    rm_forward,
    sample_features,
    volume_render,
    volume_weights,
)

__all__ = [
    # Model
    "ReconModel",
    "ReconProfile",
    "TriPlanes",
    "decode_triplanes",
    "split_planes",
    # Field and rendering
    "plane_coordinates",
    "sample_features",
    "field_eval",
    "RenderWeights",
    "volume_weights",
    "volume_render",
    "rm_forward",
    "render_with_planes",
    "rm_density",
    "expected_depth",
    "render_image",
    # Losses
    "rec_loss",
    "depth_bins",
    "depth_loss",
    "observation_loss",
]
