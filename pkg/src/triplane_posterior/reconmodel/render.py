"""
Tri-plane field evaluation, volume rendering and reconstruction losses.

PURPOSE: Latent -> planes -> per-point features -> field values -> pixels, plus the
    RGB and depth losses used for training, fitting and guidance
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- A point p in [-0.5, 0.5]^3 projects to (x, y), (x, z), (y, z); uv = coordinate + 0.5
- RGB = sigmoid(D2(f_rgb)), sigma = softplus(sum(f_sigma))
- Rendering: T_i = exp(-sum_{j<i} sigma_j delta_j), weight_i = T_i (1 - exp(-sigma_i delta_i));
  black background, no background term
- rm_forward decodes the planes once and renders rays in chunks; chunking does not change
  per-ray values
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Literal

import numpy as np

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.tensor import ShapeError, Tensor, as_tensor, no_record
from triplane_posterior.reconmodel.model import ReconModel, TriPlanes, d2_forward, decode_triplanes
from triplane_posterior.scenes.rays import RayBatch

DEFAULT_CHUNK = 4096

# Axis pairs for the xy, xz and yz planes
PLANE_AXES: tuple[tuple[int, int], ...] = ((0, 1), (0, 2), (1, 2))


def plane_coordinates(points: np.ndarray) -> list[np.ndarray]:
    """uv coordinates of points (P, 3) on the xy, xz and yz planes."""
    pts = np.asarray(points)
    return [pts[:, list(axes)] + 0.5 for axes in PLANE_AXES]


def sample_features(planes: TriPlanes, points: np.ndarray) -> tuple[Tensor, Tensor]:
    """Concatenated bilinear features (f_rgb (P, 3 C_rgb), f_sigma (P, 3 C_sigma))."""
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"sample_features: points must be (P, 3), got {pts.shape}")
    uvs = plane_coordinates(pts)
    f_rgb = ops.concat([ops.bilinear_sample(p, uv) for p, uv in zip(planes.rgb, uvs)], axis=-1)
    f_sigma = ops.concat([ops.bilinear_sample(p, uv) for p, uv in zip(planes.density, uvs)], axis=-1)
    return f_rgb, f_sigma


def density_from_features(f_sigma: Tensor) -> Tensor:
    return ops.softplus(ops.sum(f_sigma, axis=-1))


def field_eval(f_rgb: Tensor, f_sigma: Tensor, model: ReconModel) -> tuple[Tensor, Tensor]:
    """(RGB in [0, 1] (P, 3), sigma >= 0 (P,)) from point features."""
    profile = model.profile
    if f_rgb.shape[-1] != 3 * profile.c_rgb or f_sigma.shape[-1] != 3 * profile.c_sigma:
        raise ShapeError(
            f"field_eval: feature widths {f_rgb.shape[-1]}, {f_sigma.shape[-1]} do not match "
            f"profile {profile.name} ({3 * profile.c_rgb}, {3 * profile.c_sigma})"
        )
    rgb = ops.sigmoid(d2_forward(f_rgb, model))
    return rgb, density_from_features(f_sigma)


@dataclass
class RenderWeights:
    """Per-sample compositing quantities, each (P, M)."""

    weights: Tensor
    transmittance: Tensor
    alpha: Tensor


def volume_weights(sigmas: Any, deltas: np.ndarray) -> RenderWeights:
    sigmas = as_tensor(sigmas)
    if sigmas.shape != tuple(np.shape(deltas)):
        raise ShapeError(f"volume_weights: sigmas {sigmas.shape} vs deltas {np.shape(deltas)}")
    tau = ops.mul(sigmas, np.asarray(deltas, dtype=sigmas.dtype))
    transmittance = ops.exp(ops.neg(ops.exclusive_cumsum(tau, axis=-1)))
    alpha = ops.sub(1.0, ops.exp(ops.neg(tau)))
    return RenderWeights(ops.mul(transmittance, alpha), transmittance, alpha)


def volume_render(colors: Any, sigmas: Any, deltas: np.ndarray) -> Tensor:
    """Composite colors (P, M, 3) with densities (P, M) and steps (P, M) into (P, 3)."""
    colors = as_tensor(colors)
    w = volume_weights(sigmas, deltas).weights
    if colors.shape[:2] != w.shape:
        raise ShapeError(f"volume_render: colors {colors.shape} vs sigmas {w.shape}")
    return ops.sum(ops.mul(ops.reshape(w, (*w.shape, 1)), colors), axis=1)


def _render_chunk(planes: TriPlanes, model: ReconModel, rays: RayBatch) -> Tensor:
    p, m = rays.n_rays, rays.n_samples
    f_rgb, f_sigma = sample_features(planes, rays.points().reshape(-1, 3))
    rgb, sigma = field_eval(f_rgb, f_sigma, model)
    return volume_render(ops.reshape(rgb, (p, m, 3)), ops.reshape(sigma, (p, m)), rays.deltas)


def rm_forward(
    z: Any, model: ReconModel, rays: RayBatch, chunk: int = DEFAULT_CHUNK
) -> Tensor:
    """Predicted RGB (P, 3) for every ray."""
    planes = decode_triplanes(z, model)
    return render_with_planes(planes, model, rays, chunk)


def render_with_planes(
    planes: TriPlanes, model: ReconModel, rays: RayBatch, chunk: int = DEFAULT_CHUNK
) -> Tensor:
    parts = [_render_chunk(planes, model, c) for c in rays.chunks(max(chunk, 1))]
    return parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)


def rm_density(z: Any, model: ReconModel, rays: RayBatch) -> Tensor:
    """Densities (P, M) along the rays; D2 is not evaluated."""
    planes = decode_triplanes(z, model)
    _, f_sigma = sample_features(planes, rays.points().reshape(-1, 3))
    return ops.reshape(density_from_features(f_sigma), (rays.n_rays, rays.n_samples))


def expected_depth(z: Any, model: ReconModel, rays: RayBatch) -> np.ndarray:
    """Per-ray expected termination depth; leftover transmittance lands on t_far."""
    with no_record():
        w = volume_weights(rm_density(z, model, rays), rays.deltas).weights.data
    return (w * rays.depths).sum(axis=1) + (1.0 - w.sum(axis=1)) * rays.t_far


def render_image(z: Any, model: ReconModel, rays: RayBatch, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Plain-array RGB render without recording."""
    with no_record():
        return rm_forward(z, model, rays, chunk).data


# =============================================================================
# Losses
# =============================================================================


def rec_loss(pred: Any, target: Any) -> Tensor:
    """Sum of squared differences over rays and channels."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"rec_loss: prediction {pred.shape} vs target {target.shape}")
    return ops.sum(ops.square(ops.sub(pred, target)))


def depth_bins(target_depth: np.ndarray, samples: int, t_near: float, t_far: float) -> np.ndarray:
    """Index of the sample bin containing each target depth."""
    t = np.asarray(target_depth, dtype=np.float64)
    if np.any(t < t_near) or np.any(t > t_far) or not np.all(np.isfinite(t)):
        raise ValueError(f"Target depths must lie in [{t_near}, {t_far}]")
    bins = np.floor((t - t_near) / (t_far - t_near) * samples).astype(np.int64)
    return np.clip(bins, 0, samples - 1)


def depth_loss(
    sigmas: Any,
    deltas: np.ndarray,
    target_depth: np.ndarray,
    t_near: float,
    t_far: float,
) -> Tensor:
    """Sum over rays of sum_i (alpha_i - o_i)^2 with o one-hot at the target depth bin."""
    sigmas = as_tensor(sigmas)
    p, m = sigmas.shape
    occupancy = np.zeros((p, m), dtype=sigmas.dtype)
    occupancy[np.arange(p), depth_bins(target_depth, m, t_near, t_far)] = 1.0
    alpha = volume_weights(sigmas, deltas).alpha
    return ops.sum(ops.square(ops.sub(alpha, occupancy)))


def observation_loss(
    z: Any, model: ReconModel, rays: RayBatch, kind: Literal["rgb", "depth"], chunk: int = DEFAULT_CHUNK
) -> Tensor:
    """RGB reconstruction loss or depth loss of z against the rays' targets."""
    if kind == "depth":
        if rays.target_depth is None:
            raise ValueError("Depth loss needs target depths on the rays")
        return depth_loss(rm_density(z, model, rays), rays.deltas, rays.target_depth, rays.t_near, rays.t_far)
    if rays.target_rgb is None:
        raise ValueError("RGB loss needs target colors on the rays")
    return rec_loss(rm_forward(z, model, rays, chunk), rays.target_rgb)

