"""
Diffusion prior bundle: U-Net weights, schedule and latent standardization.

PURPOSE: Persist and restore everything sampling needs from one checkpoint
DEPENDENCIES: numpy, pydantic

ARCHITECTURE NOTES:
- Latents are standardized per coordinate before diffusion: (z - mean) / std, std floored
- Tensors are stored under unet.*; the U-Net config, schedule constants and the
  standardization statistics live in the checkpoint metadata under "prior"
- The reconstruction model only ever sees de-standardized latents
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from triplane_posterior.diffcore.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from triplane_posterior.diffcore.tensor import Tensor, no_record
from triplane_posterior.prior.schedule import NoiseSchedule
from triplane_posterior.prior.unet import PREFIX, UNet, UNetConfig

STD_FLOOR = 1e-3


@dataclass(frozen=True)
class Standardizer:
    """Per-coordinate affine map between latent space and the unit-scale diffusion space."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, latents: np.ndarray, floor: float = STD_FLOOR) -> Standardizer:
        data = np.asarray(latents, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0:
            raise ValueError(f"Standardizer needs a non-empty (N, d) table, got {data.shape}")
        return cls(mean=data.mean(axis=0), std=np.maximum(data.std(axis=0), floor))

    @classmethod
    def identity(cls, d: int) -> Standardizer:
        return cls(mean=np.zeros(d), std=np.ones(d))

    @property
    def d(self) -> int:
        return int(self.mean.size)

    def standardize(self, z: np.ndarray) -> np.ndarray:
        """Map latents of any shape holding whole d-vectors into diffusion space."""
        z = np.asarray(z, dtype=np.float64)
        return ((z.reshape(-1, self.d) - self.mean) / self.std).reshape(z.shape)

    def destandardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x.reshape(-1, self.d) * self.std + self.mean).reshape(x.shape)

    def metadata(self) -> dict[str, list[float]]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_metadata(cls, meta: dict[str, Any]) -> Standardizer:
        return cls(mean=np.asarray(meta["mean"], dtype=np.float64), std=np.asarray(meta["std"], dtype=np.float64))


class PriorModel:
    """U-Net plus the schedule and standardizer it was trained with."""

    def __init__(self, unet: UNet, schedule: NoiseSchedule, standardizer: Standardizer) -> None:
        c = unet.config
        d = c.resolution * c.resolution * c.in_channels
        if standardizer.d != d:
            raise ValueError(f"Standardizer has {standardizer.d} coordinates, U-Net expects {d}")
        self.unet = unet
        self.schedule = schedule
        self.standardizer = standardizer

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        c = self.unet.config
        return (c.resolution, c.resolution, c.in_channels)

    @property
    def d(self) -> int:
        return self.standardizer.d

    def epsilon(self, x: np.ndarray, t: int) -> np.ndarray:
        """Noise prediction for a standardized state (flat or r x r x c), without recording."""
        with no_record():
            out: Tensor = self.unet(x.reshape(self.latent_shape), t)
        return np.asarray(out.data, dtype=np.float64).reshape(np.shape(x))

    def metadata(self) -> dict[str, Any]:
        return {
            "unet": self.unet.config.model_dump(),
            "schedule": self.schedule.metadata(),
            "standardizer": self.standardizer.metadata(),
        }

    def save(self, path: Path, metadata: dict[str, Any] | None = None) -> Path:
        return save_checkpoint(path, self.unet.params.arrays(), {"prior": self.metadata(), **(metadata or {})})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> PriorModel:
        meta = ckpt.metadata.get("prior")
        if meta is None:
            raise ValueError("Checkpoint has no diffusion-prior metadata")
        config = UNetConfig.model_validate(meta["unet"])
        unet = UNet.initialize(config)
        unet.params.load_arrays(ckpt.group(PREFIX))
        return cls(unet, NoiseSchedule.from_metadata(meta["schedule"]), Standardizer.from_metadata(meta["standardizer"]))

    @classmethod
    def load(cls, path: Path) -> PriorModel:
        return cls.from_checkpoint(load_checkpoint(path))

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.unet.params):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.unet.params[name].data).tobytes())
        return digest.hexdigest()
