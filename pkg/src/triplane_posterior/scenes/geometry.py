"""
Procedural scene generation and analytic rendering.

PURPOSE: Seeded scene sampling, exact ray-primitive rendering, indicator fields
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- make_scene is a pure function of its seed
- render_reference intersects every pixel ray with every primitive analytically;
  background is black with depth = t_far
- indicator_field turns a SceneSpec into a density/color field for checks against
  the volumetric renderer
"""

from __future__ import annotations

import numpy as np

from triplane_posterior.scenes.models import (
    PALETTE,
    T_FAR,
    CameraPose,
    PrimitiveKind,
    ScenePrimitive,
    SceneSpec,
)

SIZE_RANGE = (0.15, 0.45)
CENTER_BOUND = 0.35
CUBE_MARGIN = 0.01


def make_scene(seed: int) -> SceneSpec:
    """Sample one to three primitives deterministically from seed."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, 4))
    primitives = []
    for _ in range(count):
        kind = PrimitiveKind.SPHERE if rng.random() < 0.5 else PrimitiveKind.BOX
        size = float(rng.uniform(*SIZE_RANGE))
        bound = min(CENTER_BOUND, 0.5 - CUBE_MARGIN - size)
        center = tuple(float(c) for c in rng.uniform(-bound, bound, size=3))
        color_index = int(rng.integers(0, len(PALETTE)))
        primitives.append(
            ScenePrimitive(kind=kind, center=center, size=size, color_index=color_index)  # type: ignore[arg-type]
        )
    return SceneSpec(seed=seed, primitives=primitives)


def _intersect(primitive: ScenePrimitive, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance to the first hit along each ray, inf on a miss. dirs is (P, 3), unit."""
    center = np.asarray(primitive.center)
    oc = origin - center
    if primitive.kind == PrimitiveKind.SPHERE:
        b = dirs @ oc
        c = oc @ oc - primitive.size**2
        disc = b * b - c
        hit = disc >= 0.0
        t = np.full(dirs.shape[0], np.inf)
        t[hit] = -b[hit] - np.sqrt(disc[hit])
        t[t <= 0.0] = np.inf
        return t

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (-primitive.size - oc) * inv
        t2 = (primitive.size - oc) * inv
    t_enter = np.nanmax(np.minimum(t1, t2), axis=1)
    t_exit = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (t_exit >= t_enter) & (t_enter > 0.0)
    return np.where(hit, t_enter, np.inf)


def render_reference(
    scene: SceneSpec, camera: CameraPose, t_far: float = T_FAR
) -> tuple[np.ndarray, np.ndarray]:
    """Render (rgb (H, W, 3) in [0, 1], depth (H, W)) by exact ray casting."""
    indices = np.arange(camera.pixel_count)
    dirs = camera.pixel_directions(indices)
    origin = camera.origin

    best = np.full(indices.size, np.inf)
    rgb = np.zeros((indices.size, 3))
    for primitive in scene.primitives:
        t = _intersect(primitive, origin, dirs)
        closer = t < best
        best[closer] = t[closer]
        rgb[closer] = primitive.color

    depth = np.where(np.isfinite(best), best, t_far)
    return (
        rgb.reshape(camera.height, camera.width, 3),
        depth.reshape(camera.height, camera.width),
    )


def indicator_field(
    scene: SceneSpec, points: np.ndarray, density: float
) -> tuple[np.ndarray, np.ndarray]:
    """Density (`density` inside a primitive, else 0) and color at points (..., 3).

    Overlaps take the first primitive in scene order.
    """
    pts = np.asarray(points, dtype=np.float64)
    sigma = np.zeros(pts.shape[:-1])
    rgb = np.zeros(pts.shape)
    for primitive in reversed(scene.primitives):
        offset = pts - np.asarray(primitive.center)
        if primitive.kind == PrimitiveKind.SPHERE:
            inside = np.sum(offset * offset, axis=-1) <= primitive.size**2
        else:
            inside = np.all(np.abs(offset) <= primitive.size, axis=-1)
        sigma[inside] = density
        rgb[inside] = primitive.color
    return sigma, rgb
