"""
Reconstruction-likelihood guidance for the reverse diffusion chain.

PURPOSE: Clean-estimate formula and the gradient of the observation loss with respect to
    the current chain state
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- z~0 = (z_{t-1} - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t), with eps the U-Net
  output at (z_t, t) held constant
- The reconstruction model sees de-standardized latents z~0 * std + mean; the gradient is
  carried back through that affine map to the standardized chain state
- Gradients run through the frozen reconstruction model only, never through the U-Net
- Guidance rays use mid-bin depths, built once per spec
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.tensor import Tensor, as_tensor, backward, default_dtype, record
from triplane_posterior.prior.model import Standardizer
from triplane_posterior.prior.schedule import NoiseSchedule
from triplane_posterior.reconmodel.model import ReconModel
from triplane_posterior.reconmodel.render import DEFAULT_CHUNK, observation_loss
from triplane_posterior.scenes.observations import Observation, ObservationError
from triplane_posterior.scenes.rays import RayBatch

DEFAULT_SCALE = 5e-3
NOISY_SCALE = 3e-3
NOISY_THRESHOLD = 0.8


@dataclass
class GuidanceSpec:
    """Observation, guidance scale and ray settings for one guided chain."""

    observation: Observation
    t_near: float
    t_far: float
    samples: int = 64
    scale: float | None = None
    loss_kind: Literal["rgb", "depth"] | None = None
    default_scale: float = DEFAULT_SCALE
    noisy_scale: float = NOISY_SCALE
    noisy_threshold: float = NOISY_THRESHOLD
    chunk: int = DEFAULT_CHUNK
    _rays: RayBatch | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.scale is not None and self.scale < 0:
            raise ValueError(f"Guidance scale must be >= 0, got {self.scale}")
        if self.loss_kind is None:
            self.loss_kind = self.observation.target
        elif self.loss_kind != self.observation.target:
            raise ValueError(
                f"Loss kind {self.loss_kind!r} does not match a {self.observation.kind.value} observation"
            )

    @property
    def kind(self) -> Literal["rgb", "depth"]:
        return self.observation.target

    @property
    def effective_scale(self) -> float:
        """Explicit scale, else the noisy preset for sigma >= threshold, else the default."""
        if self.scale is not None:
            return self.scale
        if self.observation.noise_std >= self.noisy_threshold:
            return self.noisy_scale
        return self.default_scale

    def rays(self) -> RayBatch:
        if self.observation.pixel_count == 0:
            raise ObservationError("Guidance needs at least one observed pixel")
        if self._rays is None:
            self._rays = self.observation.rays(self.samples, self.t_near, self.t_far)
        return self._rays

    def echo(self) -> dict[str, Any]:
        return {
            "kind": self.observation.kind.value,
            "scene_id": self.observation.scene_id,
            "params": self.observation.params,
            "noise_std": self.observation.noise_std,
            "scale": self.effective_scale,
            "samples": self.samples,
            "loss": self.kind,
        }


def clean_estimate(z_prev: Any, eps: np.ndarray, t: int, schedule: NoiseSchedule) -> Tensor:
    """One-shot clean estimate from z_{t-1}; differentiable in z_prev only."""
    ab = schedule.alpha_bar(t)
    z_prev = as_tensor(z_prev)
    shifted = ops.sub(z_prev, np.sqrt(1.0 - ab) * np.asarray(eps, dtype=z_prev.dtype))
    return ops.mul(shifted, 1.0 / np.sqrt(ab))


@dataclass
class GuidanceStep:
    gradient: np.ndarray
    loss: float


def guidance_gradient(
    z_prev: np.ndarray,
    eps: np.ndarray,
    t: int,
    recon: ReconModel,
    spec: GuidanceSpec,
    schedule: NoiseSchedule,
    standardizer: Standardizer | None = None,
) -> GuidanceStep:
    """Gradient of the observation loss at the clean estimate, with respect to z_{t-1}."""
    rays = spec.rays()
    standardizer = standardizer or Standardizer.identity(int(np.size(z_prev)))
    dtype = default_dtype()
    z = Tensor(np.asarray(z_prev).reshape(-1), requires_grad=True, dtype=dtype)
    with record() as rec:
        z0 = clean_estimate(z, np.asarray(eps).reshape(-1), t, schedule)
        latent = ops.add(ops.mul(z0, standardizer.std.astype(dtype)), standardizer.mean.astype(dtype))
        loss = observation_loss(latent, recon, rays, spec.kind, spec.chunk)
    grad = backward(rec, loss).wrt(z)
    return GuidanceStep(gradient=np.asarray(grad, dtype=np.float64).reshape(np.shape(z_prev)), loss=float(loss.data))
