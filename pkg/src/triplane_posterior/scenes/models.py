"""
Scene and camera domain models.

PURPOSE: Pydantic models for procedural scenes and pinhole cameras
DEPENDENCIES: pydantic, numpy

ARCHITECTURE NOTES:
- World up is +z; cameras sit on a sphere of radius 2.5 and look at the origin
- Camera rotation columns are [right, up, back] (back = -forward), so the extrinsics
  row-major [R | position] map camera coordinates to world coordinates
- Pixel index = row * width + col, row 0 at the top of the image
- Every primitive lies strictly inside the unit cube [-0.5, 0.5]^3
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, field_validator

CAMERA_RADIUS = 2.5
DEFAULT_FOV_DEG = 40.0
T_NEAR = 1.0
T_FAR = 4.0

# Eight flat colors; color_index selects one
PALETTE: tuple[tuple[float, float, float], ...] = (
    (0.90, 0.10, 0.10),
    (0.10, 0.80, 0.20),
    (0.15, 0.30, 0.95),
    (0.95, 0.85, 0.10),
    (0.10, 0.85, 0.85),
    (0.85, 0.15, 0.80),
    (0.95, 0.55, 0.10),
    (0.90, 0.90, 0.90),
)


class PrimitiveKind(str, Enum):
    """Primitive shape."""

    SPHERE = "sphere"
    BOX = "box"


class ScenePrimitive(BaseModel):
    """A sphere (size = radius) or axis-aligned box (size = half-extent)."""

    kind: PrimitiveKind
    center: tuple[float, float, float]
    size: float = Field(..., ge=0.15, le=0.45)
    color_index: int = Field(..., ge=0, lt=len(PALETTE))

    def model_post_init(self, _context: object) -> None:
        """Reject primitives that reach the unit-cube boundary."""
        if max(abs(c) for c in self.center) + self.size >= 0.5:
            raise ValueError(
                f"{self.kind.value} at {self.center} with size {self.size} leaves the unit cube"
            )

    @property
    def color(self) -> tuple[float, float, float]:
        return PALETTE[self.color_index]


class SceneSpec(BaseModel):
    """A procedural scene: one to three flat-colored primitives."""

    seed: int
    primitives: list[ScenePrimitive] = Field(..., min_length=1, max_length=3)

    def mirrored(self, axis: int) -> SceneSpec:
        """Reflect the scene across the plane where coordinate `axis` is zero."""
        flipped = []
        for p in self.primitives:
            center = list(p.center)
            center[axis] = -center[axis]
            flipped.append(p.model_copy(update={"center": tuple(center)}))
        return SceneSpec(seed=self.seed, primitives=flipped)


class CameraPose(BaseModel):
    """Pinhole camera looking at the origin with +z up."""

    position: tuple[float, float, float]
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    fov_deg: float = Field(default=DEFAULT_FOV_DEG, gt=0, lt=180)

    @field_validator("position")
    @classmethod
    def nonzero_position(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if math.hypot(*v) < 1e-9:
            raise ValueError("Camera position must not coincide with the look-at point")
        return v

    @classmethod
    def from_angles(
        cls,
        azimuth: float,
        elevation: float,
        width: int,
        height: int,
        radius: float = CAMERA_RADIUS,
        fov_deg: float = DEFAULT_FOV_DEG,
    ) -> CameraPose:
        """Camera at the given azimuth/elevation (radians) on the viewing sphere."""
        position = (
            radius * math.cos(elevation) * math.cos(azimuth),
            radius * math.cos(elevation) * math.sin(azimuth),
            radius * math.sin(elevation),
        )
        return cls(position=position, width=width, height=height, fov_deg=fov_deg)

    @classmethod
    def from_extrinsics(
        cls, extrinsics: list[float], width: int, height: int, fov_deg: float = DEFAULT_FOV_DEG
    ) -> CameraPose:
        """Rebuild a camera from its 12 row-major [R | t] numbers."""
        if len(extrinsics) != 12:
            raise ValueError(f"Extrinsics need 12 numbers, got {len(extrinsics)}")
        m = np.asarray(extrinsics, dtype=np.float64).reshape(3, 4)
        return cls(position=tuple(float(v) for v in m[:, 3]), width=width, height=height, fov_deg=fov_deg)  # type: ignore[arg-type]

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.position, dtype=np.float64)

    def rotation(self) -> np.ndarray:
        """3x3 camera-to-world rotation, columns [right, up, back]."""
        forward = -self.origin / np.linalg.norm(self.origin)
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
        if np.linalg.norm(right) < 1e-8:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return np.stack([right, up, -forward], axis=1)

    def extrinsics(self) -> list[float]:
        """12 numbers, row-major [R | position]."""
        m = np.concatenate([self.rotation(), self.origin[:, None]], axis=1)
        return [float(v) for v in m.reshape(-1)]

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    def pixel_directions(self, pixel_indices: np.ndarray) -> np.ndarray:
        """Unit world-space directions through the centers of the given pixels, (P, 3)."""
        idx = np.asarray(pixel_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.pixel_count):
            raise ValueError(f"Pixel index out of range for a {self.width}x{self.height} raster")
        rows, cols = np.divmod(idx, self.width)
        tan_half = math.tan(math.radians(self.fov_deg) / 2.0)
        x = ((cols + 0.5) / self.width * 2.0 - 1.0) * tan_half * self.width / self.height
        y = (1.0 - (rows + 0.5) / self.height * 2.0) * tan_half
        rot = self.rotation()
        right, up, back = rot[:, 0], rot[:, 1], rot[:, 2]
        d = x[:, None] * right + y[:, None] * up - back
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def mirrored(self, axis: int) -> CameraPose:
        """Reflect the camera position across the plane where coordinate `axis` is zero.

        Combined with SceneSpec.mirrored on a horizontal axis, the rendered image is
        the original flipped left to right.
        """
        if axis == 2:
            raise ValueError("Mirroring across the up axis is not a camera symmetry")
        position = list(self.position)
        position[axis] = -position[axis]
        return self.model_copy(update={"position": tuple(position)})
