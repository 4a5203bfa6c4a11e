"""
Reconstruction model parameters and the tri-plane decoder.

PURPOSE: Profile-driven construction, persistence and forward pass of D1 and D2
DEPENDENCIES: numpy, pydantic

ARCHITECTURE NOTES:
- D1: residual blocks with the profile's channel list, nearest 2x upsampling after the
  listed (1-based) blocks, then a 1x1 output projection to 3 * (C_rgb + C_sigma) channels
- One self-attention layer follows the last block before the first upsample, so it
  attends over the r x r latent grid and never over the R x R planes
- Output channel layout: [T1 | T2 | T3 | T'1 | T'2 | T'3], RGB planes first
- D2: MLP of `d2_layers` linear layers with ReLU between them
- Parameter names: d1.*, d2.*; checkpoint metadata records the profile and activations
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, model_validator

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from triplane_posterior.diffcore.nn import (
    ParamStore,
    attention,
    conv,
    init_attention,
    init_conv,
    init_linear,
    init_resblock,
    linear,
    resblock,
)
from triplane_posterior.diffcore.tensor import ShapeError, Tensor, as_tensor

ACTIVATIONS = {"rgb": "sigmoid", "sigma": "softplus"}
MODEL_FORMAT_VERSION = 2


class ReconProfile(BaseModel):
    """Shapes of the latent, the tri-planes, D1 and D2."""

    name: str = Field(default="desk")
    r: int = Field(default=8, gt=0, description="Latent spatial size")
    c: int = Field(default=4, gt=0, description="Latent channels")
    R: int = Field(default=32, gt=1, description="Tri-plane resolution")
    c_rgb: int = Field(default=12, gt=0)
    c_sigma: int = Field(default=4, gt=0)
    d1_channels: list[int] = Field(default_factory=lambda: [4, 16, 24, 32, 40, 48], min_length=1)
    d1_upsample_after: list[int] = Field(default_factory=lambda: [2, 4])
    d1_groups: int = Field(default=8, gt=0)
    d1_heads: int = Field(default=1, gt=0)
    d2_layers: int = Field(default=7, ge=2)
    d2_hidden: int = Field(default=64, gt=0)

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def check_shapes(self) -> ReconProfile:
        if self.r * 2 ** len(self.d1_upsample_after) != self.R:
            raise ValueError(
                f"r={self.r} upsampled {len(self.d1_upsample_after)} times does not reach R={self.R}"
            )
        if any(not 1 <= b <= len(self.d1_channels) for b in self.d1_upsample_after):
            raise ValueError(f"Upsample blocks {self.d1_upsample_after} outside 1..{len(self.d1_channels)}")
        channels = self.d1_channels[self.attention_block]
        if channels % self.d1_heads:
            raise ValueError(f"{channels} attention channels not divisible by {self.d1_heads} heads")
        return self

    @property
    def attention_block(self) -> int:
        """0-based D1 block followed by self-attention, the last one at latent resolution."""
        return min(self.d1_upsample_after, default=len(self.d1_channels)) - 1

    @property
    def d(self) -> int:
        return self.r * self.r * self.c

    @property
    def plane_channels(self) -> int:
        return 3 * (self.c_rgb + self.c_sigma)

    @classmethod
    def desk(cls) -> ReconProfile:
        return cls()

    @classmethod
    def paper(cls) -> ReconProfile:
        return cls(
            name="paper",
            r=16,
            c=4,
            R=128,
            c_rgb=48,
            c_sigma=16,
            d1_channels=[4, 32, 64, 96, 128, 192],
            d1_upsample_after=[2, 4, 6],
            d2_hidden=128,
        )

    @classmethod
    def tiny(cls) -> ReconProfile:
        """Small shapes for gradient checks and fast tests."""
        return cls(
            name="tiny",
            r=4,
            c=2,
            R=8,
            c_rgb=2,
            c_sigma=1,
            d1_channels=[2, 4, 4],
            d1_upsample_after=[2],
            d2_layers=3,
            d2_hidden=8,
        )


@dataclass
class TriPlanes:
    """Three RGB-feature planes and three density-feature planes, ordered xy, xz, yz."""

    rgb: list[Tensor]
    density: list[Tensor]

    @property
    def resolution(self) -> int:
        return self.rgb[0].shape[0]


class ReconModel:
    """Profile plus named parameters d1.* and d2.*."""

    def __init__(self, profile: ReconProfile, params: ParamStore) -> None:
        self.profile = profile
        self.params = params

    @classmethod
    def initialize(cls, profile: ReconProfile, seed: int = 0) -> ReconModel:
        rng = np.random.default_rng(seed)
        store = ParamStore()
        cin = profile.c
        for k, ch in enumerate(profile.d1_channels):
            init_resblock(store, f"d1.block{k}", cin, ch, rng)
            if k == profile.attention_block:
                init_attention(store, "d1.attn", ch, rng)
            cin = ch
        init_conv(store, "d1.out", cin, profile.plane_channels, rng, kernel=1)

        width = 3 * profile.c_rgb
        for k in range(profile.d2_layers):
            out = 3 if k == profile.d2_layers - 1 else profile.d2_hidden
            init_linear(store, f"d2.fc{k}", width, out, rng, scale=1.0 if out == 3 else np.sqrt(2.0))
            width = out
        return cls(profile, store)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> ReconModel:
        meta = ckpt.metadata.get("recon")
        if meta is None:
            raise ValueError("Checkpoint has no reconstruction-model metadata")
        profile = ReconProfile.model_validate(meta["profile"])
        model = cls.initialize(profile)
        model.params.load_arrays({**ckpt.group("d1"), **ckpt.group("d2")})
        return model

    @classmethod
    def load(cls, path: Path) -> ReconModel:
        return cls.from_checkpoint(load_checkpoint(path))

    def metadata(self) -> dict[str, Any]:
        return {
            "profile": self.profile.model_dump(),
            "activations": ACTIVATIONS,
            "format_version": MODEL_FORMAT_VERSION,
        }

    def save(
        self,
        path: Path,
        extra: dict[str, np.ndarray] | None = None,
        metadata: dict[str, Any] | None = None,
    ) -> Path:
        tensors: dict[str, np.ndarray] = {**self.params.arrays(), **(extra or {})}
        return save_checkpoint(path, tensors, {"recon": self.metadata(), **(metadata or {})})

    def frozen(self) -> ReconModel:
        """Parameter-sharing copy whose tensors never require gradients."""
        return ReconModel(self.profile, self.params.frozen())

    def shadow(self) -> ReconModel:
        """Parameter-sharing copy with fresh tensors for a worker's own record."""
        return ReconModel(self.profile, self.params.shadow())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return digest.hexdigest()


def decode_triplanes(z: Any, model: ReconModel) -> TriPlanes:
    """Run D1 on a latent (flat length d, or r x r x c) and split the output into planes."""
    profile = model.profile
    store = model.params
    z = as_tensor(z)
    if z.size != profile.d or z.shape not in ((profile.d,), (profile.r, profile.r, profile.c)):
        raise ShapeError(
            f"decode_triplanes: latent shape {z.shape} does not match profile "
            f"{profile.name} (d={profile.d}, r={profile.r}, c={profile.c})"
        )
    x = ops.reshape(z, (1, profile.r, profile.r, profile.c))
    for k in range(len(profile.d1_channels)):
        x = resblock(store, f"d1.block{k}", x, groups=profile.d1_groups)
        if k == profile.attention_block:
            x = attention(store, "d1.attn", x, heads=profile.d1_heads, groups=profile.d1_groups)
        if k + 1 in profile.d1_upsample_after:
            x = ops.upsample_nearest(x, 2)
    x = conv(store, "d1.out", x)
    out = ops.reshape(x, (profile.R, profile.R, profile.plane_channels))
    return split_planes(out, profile)


def split_planes(out: Tensor, profile: ReconProfile) -> TriPlanes:
    cr, cs = profile.c_rgb, profile.c_sigma
    rgb = [ops.take(out, (slice(None), slice(None), slice(k * cr, (k + 1) * cr))) for k in range(3)]
    base = 3 * cr
    density = [
        ops.take(out, (slice(None), slice(None), slice(base + k * cs, base + (k + 1) * cs)))
        for k in range(3)
    ]
    return TriPlanes(rgb=rgb, density=density)


def d2_forward(features: Tensor, model: ReconModel) -> Tensor:
    """D2 MLP without the output activation."""
    h = features
    layers = model.profile.d2_layers
    for k in range(layers):
        h = linear(model.params, f"d2.fc{k}", h)
        if k < layers - 1:
            h = ops.relu(h)
    return h
