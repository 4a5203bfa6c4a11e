"""
Ray batches with stratified or deterministic depth samples.

PURPOSE: Turn camera pixels into rays and per-ray sample depths
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- Stratified mode draws depth i uniformly in bin [t_near + i/M Δ, t_near + (i+1)/M Δ);
  δ_i = t_{i+1} - t_i and the last δ is the remainder up to t_far
- Deterministic mode (rng=None) uses bin midpoints and δ_i = Δ/M for every sample, so
  the last bin is counted whole
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, replace

import numpy as np

from triplane_posterior.scenes.models import CameraPose


@dataclass
class RayBatch:
    """Rays, their sample depths and optional per-ray targets."""

    origins: np.ndarray
    directions: np.ndarray
    depths: np.ndarray
    deltas: np.ndarray
    t_near: float
    t_far: float
    target_rgb: np.ndarray | None = None
    target_depth: np.ndarray | None = None

    @property
    def n_rays(self) -> int:
        return int(self.origins.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.depths.shape[1])

    def points(self) -> np.ndarray:
        """World-space sample points, (P, M, 3)."""
        return self.origins[:, None, :] + self.depths[:, :, None] * self.directions[:, None, :]

    def select(self, index: np.ndarray | slice) -> RayBatch:
        return RayBatch(
            origins=self.origins[index],
            directions=self.directions[index],
            depths=self.depths[index],
            deltas=self.deltas[index],
            t_near=self.t_near,
            t_far=self.t_far,
            target_rgb=None if self.target_rgb is None else self.target_rgb[index],
            target_depth=None if self.target_depth is None else self.target_depth[index],
        )

    def restratified(self, rng: np.random.Generator | None) -> RayBatch:
        """Same rays with freshly drawn depths (mid-bin when rng is None)."""
        depths, deltas = sample_depths(self.n_rays, self.n_samples, self.t_near, self.t_far, rng)
        return replace(self, depths=depths, deltas=deltas)

    def chunks(self, size: int) -> Iterator[RayBatch]:
        for start in range(0, self.n_rays, size):
            yield self.select(slice(start, start + size))

    @staticmethod
    def concat(batches: Sequence[RayBatch]) -> RayBatch:
        if not batches:
            raise ValueError("Cannot concatenate an empty list of ray batches")
        first = batches[0]

        def joined(attr: str) -> np.ndarray | None:
            values = [getattr(b, attr) for b in batches]
            if any(v is None for v in values):
                return None
            return np.concatenate(values, axis=0)

        return RayBatch(
            origins=np.concatenate([b.origins for b in batches]),
            directions=np.concatenate([b.directions for b in batches]),
            depths=np.concatenate([b.depths for b in batches]),
            deltas=np.concatenate([b.deltas for b in batches]),
            t_near=first.t_near,
            t_far=first.t_far,
            target_rgb=joined("target_rgb"),
            target_depth=joined("target_depth"),
        )


def sample_depths(
    n_rays: int, samples: int, t_near: float, t_far: float, rng: np.random.Generator | None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-ray depths and step sizes, each (n_rays, samples)."""
    span = t_far - t_near
    lower = t_near + np.arange(samples) / samples * span
    if rng is None:
        depths = np.broadcast_to(lower + 0.5 * span / samples, (n_rays, samples)).copy()
        return depths, np.full((n_rays, samples), span / samples)

    depths = lower + rng.uniform(0.0, 1.0, size=(n_rays, samples)) * span / samples
    deltas = np.empty_like(depths)
    deltas[:, :-1] = np.diff(depths, axis=1)
    deltas[:, -1] = t_far - depths[:, -1]
    return depths, deltas


def rays_for_pixels(
    camera: CameraPose,
    pixel_indices: np.ndarray,
    samples: int,
    t_near: float,
    t_far: float,
    rng: np.random.Generator | None = None,
    target_rgb: np.ndarray | None = None,
    target_depth: np.ndarray | None = None,
) -> RayBatch:
    """Pinhole rays through pixel centers with stratified (rng) or mid-bin samples."""
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    if not 0.0 <= t_near < t_far:
        raise ValueError(f"Invalid depth bounds [{t_near}, {t_far}]")
    idx = np.asarray(pixel_indices, dtype=np.int64)
    directions = camera.pixel_directions(idx)
    depths, deltas = sample_depths(idx.size, samples, t_near, t_far, rng)
    return RayBatch(
        origins=np.broadcast_to(camera.origin, directions.shape).copy(),
        directions=directions,
        depths=depths,
        deltas=deltas,
        t_near=t_near,
        t_far=t_far,
        target_rgb=target_rgb,
        target_depth=target_depth,
    )
