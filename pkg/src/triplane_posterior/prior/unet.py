"""
Epsilon-prediction U-Net over r x r x c latents.

PURPOSE: Profile-driven U-Net with sinusoidal timestep embedding, residual blocks,
    self-attention at chosen resolutions and skip connections
DEPENDENCIES: numpy, pydantic

ARCHITECTURE NOTES:
- Layout is channel-last (N, H, W, C); parameter names start with "unet."
- Down path: per level, `num_res_blocks` residual blocks (attention where the feature
  resolution is listed), then a stride-2 conv except at the last level; every block
  output is pushed as a skip
- Middle: residual block, attention, residual block
- Up path mirrors the down path with num_res_blocks + 1 blocks per level, each taking the
  concatenation with one popped skip, then nearest 2x upsample + conv
- The timestep embedding (sinusoid -> linear -> SiLU -> linear) is added in every
  residual block
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np
from pydantic import BaseModel, Field, model_validator

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.nn import (
    ParamStore,
    attention,
    conv,
    init_attention,
    init_conv,
    init_linear,
    init_norm,
    init_resblock,
    linear,
    norm,
    resblock,
)
from triplane_posterior.diffcore.tensor import ShapeError, Tensor, as_tensor

PREFIX = "unet"


class EpsilonModel(Protocol):
    """Anything that predicts the added noise from (x_t, t)."""

    def __call__(self, x: np.ndarray | Tensor, t: int) -> Tensor: ...


class UNetConfig(BaseModel):
    """U-Net topology for an r x r x c input."""

    name: str = Field(default="desk")
    resolution: int = Field(default=8, gt=0)
    in_channels: int = Field(default=4, gt=0)
    model_channels: int = Field(default=32, gt=0)
    channel_mult: list[int] = Field(default_factory=lambda: [1, 2, 3])
    num_res_blocks: int = Field(default=2, gt=0)
    attention_resolutions: list[int] = Field(default_factory=lambda: [4])
    num_heads: int = Field(default=4, gt=0)
    groups: int = Field(default=8, gt=0)

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def check_topology(self) -> UNetConfig:
        levels = len(self.channel_mult)
        if self.resolution % 2 ** (levels - 1):
            raise ValueError(
                f"Resolution {self.resolution} cannot be halved {levels - 1} times"
            )
        for mult in self.channel_mult:
            if (self.model_channels * mult) % self.num_heads:
                raise ValueError(
                    f"{self.model_channels * mult} channels not divisible by {self.num_heads} heads"
                )
        return self

    @property
    def temb_dim(self) -> int:
        return 4 * self.model_channels

    def level_resolution(self, level: int) -> int:
        return self.resolution // 2**level

    @classmethod
    def desk(cls) -> UNetConfig:
        return cls()

    @classmethod
    def paper(cls) -> UNetConfig:
        return cls(
            name="paper",
            resolution=16,
            model_channels=64,
            channel_mult=[1, 2, 3, 4],
            attention_resolutions=[8, 4],
        )

    @classmethod
    def tiny(cls) -> UNetConfig:
        return cls(
            name="tiny",
            resolution=4,
            in_channels=2,
            model_channels=8,
            channel_mult=[1, 2],
            num_res_blocks=1,
            attention_resolutions=[2],
            num_heads=2,
        )


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding (N, dim) of integer timesteps: [cos | sin]."""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=-1)
    return emb


def init_unet(config: UNetConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    ch = config.model_channels
    tdim = config.temb_dim

    init_linear(store, f"{PREFIX}.temb0", ch, tdim, rng)
    init_linear(store, f"{PREFIX}.temb1", tdim, tdim, rng)
    init_conv(store, f"{PREFIX}.in", config.in_channels, ch, rng)

    skips = [ch]
    cur = ch
    for level, mult in enumerate(config.channel_mult):
        res = config.level_resolution(level)
        for b in range(config.num_res_blocks):
            name = f"{PREFIX}.down{level}.block{b}"
            init_resblock(store, name, cur, ch * mult, rng, temb_dim=tdim)
            cur = ch * mult
            if res in config.attention_resolutions:
                init_attention(store, f"{name}.attn", cur, rng)
            skips.append(cur)
        if level < len(config.channel_mult) - 1:
            init_conv(store, f"{PREFIX}.down{level}.downsample", cur, cur, rng)
            skips.append(cur)

    init_resblock(store, f"{PREFIX}.mid.block0", cur, cur, rng, temb_dim=tdim)
    init_attention(store, f"{PREFIX}.mid.attn", cur, rng)
    init_resblock(store, f"{PREFIX}.mid.block1", cur, cur, rng, temb_dim=tdim)

    for level in reversed(range(len(config.channel_mult))):
        mult = config.channel_mult[level]
        res = config.level_resolution(level)
        for b in range(config.num_res_blocks + 1):
            name = f"{PREFIX}.up{level}.block{b}"
            init_resblock(store, name, cur + skips.pop(), ch * mult, rng, temb_dim=tdim)
            cur = ch * mult
            if res in config.attention_resolutions:
                init_attention(store, f"{name}.attn", cur, rng)
        if level > 0:
            init_conv(store, f"{PREFIX}.up{level}.upsample", cur, cur, rng)

    init_norm(store, f"{PREFIX}.out_norm", cur)
    init_conv(store, f"{PREFIX}.out", cur, config.in_channels, rng, scale=0.1)
    return store


def unet_forward(x: object, t: int | np.ndarray, params: ParamStore, config: UNetConfig) -> Tensor:
    """Predicted noise with the shape of x: (r, r, c) or a batch (N, r, r, c)."""
    x = as_tensor(x)
    expected = (config.resolution, config.resolution, config.in_channels)
    single = x.shape == expected
    if not single and (x.ndim != 4 or x.shape[1:] != expected):
        raise ShapeError(f"unet_forward: input {x.shape} does not match {expected} for {config.name}")
    h = ops.reshape(x, (1, *expected)) if single else x
    n = h.shape[0]

    steps = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
    emb = timestep_embedding(steps, config.model_channels).astype(h.dtype)
    temb = linear(params, f"{PREFIX}.temb1", ops.silu(linear(params, f"{PREFIX}.temb0", as_tensor(emb))))

    g = config.groups
    h = conv(params, f"{PREFIX}.in", h)
    skips = [h]
    for level in range(len(config.channel_mult)):
        for b in range(config.num_res_blocks):
            name = f"{PREFIX}.down{level}.block{b}"
            h = resblock(params, name, h, groups=g, temb=temb)
            if f"{name}.attn.qkv.w" in params:
                h = attention(params, f"{name}.attn", h, heads=config.num_heads, groups=g)
            skips.append(h)
        if level < len(config.channel_mult) - 1:
            h = conv(params, f"{PREFIX}.down{level}.downsample", h, stride=2)
            skips.append(h)

    h = resblock(params, f"{PREFIX}.mid.block0", h, groups=g, temb=temb)
    h = attention(params, f"{PREFIX}.mid.attn", h, heads=config.num_heads, groups=g)
    h = resblock(params, f"{PREFIX}.mid.block1", h, groups=g, temb=temb)

    for level in reversed(range(len(config.channel_mult))):
        for b in range(config.num_res_blocks + 1):
            name = f"{PREFIX}.up{level}.block{b}"
            h = resblock(params, name, ops.concat([h, skips.pop()], axis=-1), groups=g, temb=temb)
            if f"{name}.attn.qkv.w" in params:
                h = attention(params, f"{name}.attn", h, heads=config.num_heads, groups=g)
        if level > 0:
            h = conv(params, f"{PREFIX}.up{level}.upsample", ops.upsample_nearest(h, 2))

    out_ch = h.shape[-1]
    h = ops.silu(norm(params, f"{PREFIX}.out_norm", h, math.gcd(out_ch, g)))
    h = conv(params, f"{PREFIX}.out", h)
    return ops.reshape(h, expected) if single else h


class UNet:
    """Bound (config, params) pair usable as an EpsilonModel."""

    def __init__(self, config: UNetConfig, params: ParamStore) -> None:
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: UNetConfig, seed: int = 0) -> UNet:
        return cls(config, init_unet(config, seed))

    def __call__(self, x: np.ndarray | Tensor, t: int | np.ndarray) -> Tensor:
        return unet_forward(x, t, self.params, self.config)

    def frozen(self) -> UNet:
        return UNet(self.config, self.params.frozen())

    def shadow(self) -> UNet:
        return UNet(self.config, self.params.shadow())
