"""
Procedural scenes, cameras, rays, datasets and observations.

PURPOSE: Ground truth and guidance targets for every stage of the pipeline
DEPENDENCIES: numpy, pillow, pydantic, pyyaml
"""

from triplane_posterior.scenes.dataset import (
    DatasetError,
    DatasetManifest,
    SceneDataset,
    SceneEntry,
    generate_dataset,
    read_depth,
    read_png,
    scene_id,
    write_png,
)
from triplane_posterior.scenes.geometry import indicator_field, make_scene, render_reference
from triplane_posterior.scenes.models import (
    CAMERA_RADIUS,
    PALETTE,
    T_FAR,
    T_NEAR,
    CameraPose,
    PrimitiveKind,
    ScenePrimitive,
    SceneSpec,
)
from triplane_posterior.scenes.observations import (
    Observation,
    ObservationError,
    ObservationKind,
    ObservationParams,
    ObservedView,
    half_indices,
    make_observation,
)
from triplane_posterior.scenes.rays import RayBatch, rays_for_pixels, sample_depths

__all__ = [
    # Models
    "CAMERA_RADIUS",
    "PALETTE",
    "T_NEAR",
    "T_FAR",
    "CameraPose",
    "PrimitiveKind",
    "ScenePrimitive",
    "SceneSpec",
    # Geometry
    "make_scene",
    "render_reference",
    "indicator_field",
    # Rays
    "RayBatch",
    "rays_for_pixels",
    "sample_depths",
    # Datasets
    "DatasetError",
    "DatasetManifest",
    "SceneDataset",
    "SceneEntry",
    "generate_dataset",
    "scene_id",
    "read_png",
    "write_png",
    "read_depth",
    # Observations
    "Observation",
    "ObservationError",
    "ObservationKind",
    "ObservationParams",
    "ObservedView",
    "half_indices",
    "make_observation",
]
