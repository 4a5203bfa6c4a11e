"""
Per-pixel uncertainty from sets of latents, and latent averaging.

PURPOSE: Render latent samples from a fixed camera, reduce them to a variance image,
    and average latents coordinate-wise
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- Variance uses the unbiased (n - 1) estimator per channel, then the mean over RGB
- Raw variances are kept; display normalization happens only when images are written
- Averaging works in latent space; callers render the mean latent themselves
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from triplane_posterior.reconmodel.model import ReconModel
from triplane_posterior.reconmodel.render import DEFAULT_CHUNK, render_image
from triplane_posterior.scenes.models import CameraPose
from triplane_posterior.scenes.rays import rays_for_pixels


@dataclass
class UncertaintyMap:
    """Per-pixel variance (H, W) across renders of several samples."""

    variance: np.ndarray
    camera: CameraPose
    sample_count: int

    @property
    def mean(self) -> float:
        return float(self.variance.mean())

    def region_mean(self, pixel_indices: np.ndarray) -> float:
        """Mean variance over row-major pixel indices."""
        return float(self.variance.reshape(-1)[np.asarray(pixel_indices)].mean())

    def display(self) -> tuple[np.ndarray, float, float]:
        """Variance scaled to [0, 1] for display, plus the raw min and max."""
        lo, hi = float(self.variance.min()), float(self.variance.max())
        if hi > lo:
            return (self.variance - lo) / (hi - lo), lo, hi
        return np.zeros_like(self.variance), lo, hi


def render_latent(
    z: np.ndarray,
    model: ReconModel,
    camera: CameraPose,
    samples: int,
    t_near: float,
    t_far: float,
    chunk: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """(H, W, 3) mid-bin render of latent z."""
    rays = rays_for_pixels(camera, np.arange(camera.pixel_count), samples, t_near, t_far)
    return render_image(z, model, rays, chunk).reshape(camera.height, camera.width, 3)


def variance_map(images: np.ndarray) -> np.ndarray:
    """(H, W) unbiased per-pixel variance of (n, H, W, 3) renders, averaged over channels."""
    stack = np.asarray(images, dtype=np.float64)
    if stack.ndim != 4 or stack.shape[0] < 2:
        raise ValueError(f"variance_map needs at least 2 images (n, H, W, 3), got {stack.shape}")
    return stack.var(axis=0, ddof=1).mean(axis=-1)


def uncertainty_map(
    latents: Sequence[np.ndarray] | np.ndarray,
    model: ReconModel,
    camera: CameraPose,
    samples: int = 64,
    t_near: float = 1.0,
    t_far: float = 4.0,
    chunk: int = DEFAULT_CHUNK,
) -> UncertaintyMap:
    """Render each latent from `camera` and take the per-pixel variance."""
    if len(latents) < 2:
        raise ValueError(f"uncertainty_map needs at least 2 samples, got {len(latents)}")
    frozen = model.frozen()
    renders = np.stack([render_latent(z, frozen, camera, samples, t_near, t_far, chunk) for z in latents])
    return UncertaintyMap(variance_map(renders), camera, len(latents))


def average_latents(latents: Sequence[np.ndarray] | np.ndarray, k: int) -> np.ndarray:
    """Coordinate-wise mean of the first k latents."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(latents):
        raise ValueError(f"k={k} exceeds the {len(latents)} available samples")
    stack = np.asarray(latents[:k], dtype=np.float64)
    return stack.mean(axis=0)
