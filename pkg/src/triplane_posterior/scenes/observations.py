"""
Observation builders for guided reconstruction tasks.

PURPOSE: Build typed guidance targets (pixel subsets, depth subsets, noisy views)
DEPENDENCIES: numpy, pydantic

ARCHITECTURE NOTES:
- Every builder is a pure function of (dataset, scene, kind, params, seed)
- Single-view kinds default to the scene's first training view; full_views defaults to
  all training views, noisy_views to the first five
- sparse_depth draws only from foreground pixels (depth < t_far)
- Noise is added unclipped
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from triplane_posterior.scenes.dataset import SceneDataset
from triplane_posterior.scenes.models import CameraPose
from triplane_posterior.scenes.rays import RayBatch, rays_for_pixels

HalfSide = Literal["top", "bottom", "left", "right"]


class ObservationError(ValueError):
    """Raised when an observation cannot be built from the given parameters."""


class ObservationKind(str, Enum):
    """Supported observation types."""

    FULL_VIEWS = "full_views"
    HALF_IMAGE = "half_image"
    SPARSE_PIXELS = "sparse_pixels"
    SPARSE_DEPTH = "sparse_depth"
    NOISY_VIEWS = "noisy_views"

    @property
    def target(self) -> Literal["rgb", "depth"]:
        return "depth" if self == ObservationKind.SPARSE_DEPTH else "rgb"


class ObservationParams(BaseModel):
    """Kind-specific parameters; unused fields are ignored."""

    view: int | None = Field(default=None, description="View for single-view kinds")
    half: HalfSide = Field(default="top", description="Observed half for half_image")
    fraction: float = Field(default=0.05, description="Pixel fraction for sparse kinds")
    sigma: float = Field(default=0.0, description="Noise std for noisy_views")
    n_views: int | None = Field(default=None, description="View count for multi-view kinds")
    view_ids: list[int] | None = Field(default=None, description="Explicit views for multi-view kinds")


@dataclass
class ObservedView:
    """The observed pixels of one camera and their target values."""

    camera: CameraPose
    view_index: int
    pixel_indices: np.ndarray
    targets: np.ndarray


@dataclass
class Observation:
    """A guidance target: observed pixels over one or more views."""

    kind: ObservationKind
    scene_id: str
    views: list[ObservedView]
    noise_std: float = 0.0
    params: dict[str, object] = field(default_factory=dict)

    @property
    def target(self) -> Literal["rgb", "depth"]:
        return self.kind.target

    @property
    def pixel_count(self) -> int:
        return sum(v.pixel_indices.size for v in self.views)

    def rays(
        self,
        samples: int,
        t_near: float,
        t_far: float,
        rng: np.random.Generator | None = None,
    ) -> RayBatch:
        """Rays for every observed pixel with targets attached (mid-bin when rng is None)."""
        if self.pixel_count == 0:
            raise ObservationError("Observation has no pixels")
        batches = []
        for view in self.views:
            batches.append(
                rays_for_pixels(
                    view.camera,
                    view.pixel_indices,
                    samples,
                    t_near,
                    t_far,
                    rng=rng,
                    target_rgb=view.targets if self.target == "rgb" else None,
                    target_depth=view.targets if self.target == "depth" else None,
                )
            )
        return RayBatch.concat(batches)


def half_indices(width: int, height: int, half: HalfSide) -> np.ndarray:
    """Pixel indices of one contiguous half of a width x height raster."""
    rows, cols = np.divmod(np.arange(width * height), width)
    if half == "top":
        mask = rows < height // 2
    elif half == "bottom":
        mask = rows >= height // 2
    elif half == "left":
        mask = cols < width // 2
    elif half == "right":
        mask = cols >= width // 2
    else:
        raise ObservationError(f"Unknown half: {half}")
    return np.flatnonzero(mask)


def sparse_count(fraction: float, population: int) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ObservationError(f"fraction must be in (0, 1], got {fraction}")
    count = math.ceil(fraction * population)
    if count == 0:
        raise ObservationError(f"fraction {fraction} of {population} pixels selects none")
    return count


def _resolve_view(dataset: SceneDataset, sid: str, params: ObservationParams) -> int:
    view = params.view if params.view is not None else dataset.train_views(sid)[0]
    if not 0 <= view < len(dataset.scene(sid).views):
        raise ObservationError(f"Scene {sid} has no view {view}")
    return view


def _resolve_views(
    dataset: SceneDataset, sid: str, params: ObservationParams, default_count: int | None
) -> list[int]:
    available = len(dataset.scene(sid).views)
    if params.view_ids is not None:
        views = list(params.view_ids)
    else:
        views = dataset.train_views(sid)
        count = params.n_views if params.n_views is not None else default_count
        if count is not None:
            if count < 1 or count > len(views):
                raise ObservationError(f"n_views must be in [1, {len(views)}], got {count}")
            views = views[:count]
    if not views or len(set(views)) != len(views):
        raise ObservationError(f"View list must be non-empty without duplicates: {views}")
    for v in views:
        if not 0 <= v < available:
            raise ObservationError(f"Scene {sid} has no view {v}")
    return views


def _rgb_targets(dataset: SceneDataset, sid: str, view: int, indices: np.ndarray) -> np.ndarray:
    return dataset.image(sid, view).reshape(-1, 3)[indices].copy()


def make_observation(
    dataset: SceneDataset,
    sid: str,
    kind: ObservationKind | str,
    params: ObservationParams | None = None,
    seed: int = 0,
) -> Observation:
    """Build an observation of scene `sid`."""
    kind = ObservationKind(kind)
    params = params or ObservationParams()
    rng = np.random.default_rng(seed)
    echo = params.model_dump(exclude_none=True)

    if kind in (ObservationKind.FULL_VIEWS, ObservationKind.NOISY_VIEWS):
        if params.sigma < 0:
            raise ObservationError(f"sigma must be >= 0, got {params.sigma}")
        default_count = 5 if kind == ObservationKind.NOISY_VIEWS else None
        views = []
        for v in _resolve_views(dataset, sid, params, default_count):
            camera = dataset.camera(sid, v)
            indices = np.arange(camera.pixel_count)
            targets = _rgb_targets(dataset, sid, v, indices)
            if kind == ObservationKind.NOISY_VIEWS and params.sigma > 0:
                targets = targets + rng.normal(0.0, params.sigma, size=targets.shape)
            views.append(ObservedView(camera, v, indices, targets))
        noise = params.sigma if kind == ObservationKind.NOISY_VIEWS else 0.0
        return Observation(kind, sid, views, noise_std=noise, params=echo)

    view = _resolve_view(dataset, sid, params)
    camera = dataset.camera(sid, view)

    if kind == ObservationKind.HALF_IMAGE:
        indices = half_indices(camera.width, camera.height, params.half)
        targets = _rgb_targets(dataset, sid, view, indices)
    elif kind == ObservationKind.SPARSE_PIXELS:
        count = sparse_count(params.fraction, camera.pixel_count)
        indices = np.sort(rng.choice(camera.pixel_count, size=count, replace=False))
        targets = _rgb_targets(dataset, sid, view, indices)
    else:
        depth = dataset.depth(sid, view).reshape(-1)
        foreground = np.flatnonzero(depth < dataset.t_far)
        if foreground.size == 0:
            raise ObservationError(f"View {view} of {sid} has no foreground pixels")
        count = sparse_count(params.fraction, foreground.size)
        indices = np.sort(rng.choice(foreground, size=count, replace=False))
        targets = depth[indices].copy()

    return Observation(kind, sid, [ObservedView(camera, view, indices, targets)], params=echo)
