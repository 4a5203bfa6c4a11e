"""
Multi-view dataset persistence.

PURPOSE: Generate procedural datasets on disk and load any dataset in the same layout
DEPENDENCIES: numpy, pillow, pydantic, pyyaml

ARCHITECTURE NOTES:
- Layout: manifest.yaml, then scene_XXXX/rgb_YY.png (8-bit RGB) and
  scene_XXXX/depth_YY.bin (16-byte header b"DPTH", width, height, reserved, then
  float32 little-endian rows)
- Each scene draws from its own RNG seeded by (dataset seed, scene index), so scenes
  can be generated in any order or in parallel
- The last `n_heldout` scenes are withheld from stage-1 training
- SceneDataset caches decoded rasters; regeneration with equal arguments is byte-identical
"""

from __future__ import annotations

import logging
import math
import struct
from pathlib import Path

import numpy as np
import yaml
from PIL import Image
from pydantic import BaseModel, Field, ValidationError

from triplane_posterior.parallel import parallel_map
from triplane_posterior.scenes.geometry import make_scene, render_reference
from triplane_posterior.scenes.models import (
    CAMERA_RADIUS,
    DEFAULT_FOV_DEG,
    T_FAR,
    T_NEAR,
    CameraPose,
    SceneSpec,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.yaml"
DEPTH_MAGIC = b"DPTH"
_DEPTH_HEADER = struct.Struct("<4sIII")
ELEVATION_RANGE_DEG = (-30.0, 60.0)


class DatasetError(ValueError):
    """Raised for unreadable, unwritable or inconsistent datasets."""


class ViewEntry(BaseModel):
    """One camera of a scene."""

    index: int
    extrinsics: list[float] = Field(..., min_length=12, max_length=12)


class SceneEntry(BaseModel):
    """Manifest record for one scene."""

    id: str
    seed: int
    spec: SceneSpec | None = None
    views: list[ViewEntry]
    train_views: list[int]
    test_views: list[int]


class DatasetManifest(BaseModel):
    """Top-level dataset manifest."""

    format_version: int = 1
    seed: int
    width: int
    height: int
    fov_deg: float = DEFAULT_FOV_DEG
    camera_radius: float = CAMERA_RADIUS
    t_near: float = T_NEAR
    t_far: float = T_FAR
    n_heldout: int = 0
    scenes: list[SceneEntry]

    model_config = {"extra": "forbid"}

    @property
    def training_scene_ids(self) -> list[str]:
        keep = len(self.scenes) - self.n_heldout
        return [s.id for s in self.scenes[:keep]]

    @property
    def heldout_scene_ids(self) -> list[str]:
        keep = len(self.scenes) - self.n_heldout
        return [s.id for s in self.scenes[keep:]]


def scene_id(index: int) -> str:
    return f"scene_{index:04d}"


def write_png(path: Path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit RGB PNG."""
    pixels = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PNG")


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_depth(path: Path, depth: np.ndarray) -> None:
    h, w = depth.shape
    header = _DEPTH_HEADER.pack(DEPTH_MAGIC, w, h, 0)
    path.write_bytes(header + np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < _DEPTH_HEADER.size:
        raise DatasetError(f"Depth file too short: {path}")
    magic, w, h, _ = _DEPTH_HEADER.unpack_from(blob)
    if magic != DEPTH_MAGIC:
        raise DatasetError(f"Bad depth magic in {path}")
    body = blob[_DEPTH_HEADER.size :]
    if len(body) != 4 * w * h:
        raise DatasetError(f"Depth file {path} holds {len(body)} bytes, expected {4 * w * h}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def _scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _scene_cameras(
    rng: np.random.Generator, n_views: int, resolution: int, fov_deg: float
) -> list[CameraPose]:
    lo, hi = (math.radians(v) for v in ELEVATION_RANGE_DEG)
    azimuths = rng.uniform(0.0, 2.0 * math.pi, size=n_views)
    elevations = rng.uniform(lo, hi, size=n_views)
    return [
        CameraPose.from_angles(float(a), float(e), resolution, resolution, fov_deg=fov_deg)
        for a, e in zip(azimuths, elevations)
    ]


def generate_scene(
    root: Path,
    index: int,
    seed: int,
    n_views: int,
    n_train: int,
    resolution: int,
    fov_deg: float = DEFAULT_FOV_DEG,
    t_far: float = T_FAR,
) -> SceneEntry:
    """Render and write one scene's views; returns its manifest record."""
    sid = scene_id(index)
    spec = make_scene(_scene_seed(seed, index))
    rng = np.random.default_rng([seed, index])
    cameras = _scene_cameras(rng, n_views, resolution, fov_deg)
    order = rng.permutation(n_views)

    scene_dir = root / sid
    scene_dir.mkdir(parents=True, exist_ok=True)
    views = []
    for v, camera in enumerate(cameras):
        rgb, depth = render_reference(spec, camera, t_far=t_far)
        write_png(scene_dir / f"rgb_{v:02d}.png", rgb)
        write_depth(scene_dir / f"depth_{v:02d}.bin", depth)
        views.append(ViewEntry(index=v, extrinsics=camera.extrinsics()))

    return SceneEntry(
        id=sid,
        seed=spec.seed,
        spec=spec,
        views=views,
        train_views=sorted(int(i) for i in order[:n_train]),
        test_views=sorted(int(i) for i in order[n_train:]),
    )


def generate_dataset(
    root: Path,
    n_scenes: int,
    n_views: int,
    resolution: int,
    seed: int,
    n_train: int | None = None,
    n_heldout: int = 0,
    fov_deg: float = DEFAULT_FOV_DEG,
    t_near: float = T_NEAR,
    t_far: float = T_FAR,
    workers: int = 1,
) -> DatasetManifest:
    """Write a procedural dataset to root and return its manifest."""
    if n_views < 2:
        raise DatasetError(f"n_views must be >= 2, got {n_views}")
    if n_scenes < 1:
        raise DatasetError(f"n_scenes must be >= 1, got {n_scenes}")
    n_train = n_train if n_train is not None else round(0.8 * n_views)
    if not 1 <= n_train < n_views:
        raise DatasetError(f"n_train must be in [1, {n_views - 1}], got {n_train}")
    if not 0 <= n_heldout < n_scenes:
        raise DatasetError(f"n_heldout must be in [0, {n_scenes - 1}], got {n_heldout}")

    logger.info(
        f"Generating {n_scenes} scenes x {n_views} views at {resolution}x{resolution} into {root}"
    )
    try:
        root.mkdir(parents=True, exist_ok=True)
        entries = parallel_map(
            lambda i: generate_scene(root, i, seed, n_views, n_train, resolution, fov_deg, t_far),
            range(n_scenes),
            workers=workers,
        )
        manifest = DatasetManifest(
            seed=seed,
            width=resolution,
            height=resolution,
            fov_deg=fov_deg,
            t_near=t_near,
            t_far=t_far,
            n_heldout=n_heldout,
            scenes=entries,
        )
        (root / MANIFEST_NAME).write_text(
            yaml.safe_dump(manifest.model_dump(mode="json"), sort_keys=False), encoding="utf-8"
        )
    except OSError as e:
        raise DatasetError(f"Cannot write dataset to {root}: {e}")
    logger.info(f"Dataset written: {n_scenes * n_views} image/depth pairs")
    return manifest


class SceneDataset:
    """Read access to a dataset directory with a raster cache."""

    def __init__(self, root: Path, manifest: DatasetManifest) -> None:
        self.root = root
        self.manifest = manifest
        self._scenes = {s.id: s for s in manifest.scenes}
        self._cache: dict[tuple[str, int, str], np.ndarray] = {}

    @classmethod
    def open(cls, root: Path) -> SceneDataset:
        path = root / MANIFEST_NAME
        if not path.exists():
            raise DatasetError(f"Dataset manifest not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
            manifest = DatasetManifest.model_validate(data)
        except yaml.YAMLError as e:
            raise DatasetError(f"Invalid YAML in {path}: {e}")
        except ValidationError as e:
            lines = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
            raise DatasetError(f"Invalid manifest {path}:\n" + "\n".join(lines))
        return cls(root, manifest)

    @property
    def scene_ids(self) -> list[str]:
        return list(self._scenes)

    @property
    def t_near(self) -> float:
        return self.manifest.t_near

    @property
    def t_far(self) -> float:
        return self.manifest.t_far

    def scene(self, sid: str) -> SceneEntry:
        try:
            return self._scenes[sid]
        except KeyError:
            raise DatasetError(f"Unknown scene: {sid}")

    def camera(self, sid: str, view: int) -> CameraPose:
        entry = self.scene(sid)
        if not 0 <= view < len(entry.views):
            raise DatasetError(f"Scene {sid} has no view {view}")
        return CameraPose.from_extrinsics(
            entry.views[view].extrinsics,
            self.manifest.width,
            self.manifest.height,
            self.manifest.fov_deg,
        )

    def train_views(self, sid: str) -> list[int]:
        return list(self.scene(sid).train_views)

    def test_views(self, sid: str) -> list[int]:
        return list(self.scene(sid).test_views)

    def image(self, sid: str, view: int) -> np.ndarray:
        """(H, W, 3) RGB in [0, 1]."""
        return self._load(sid, view, "rgb")

    def depth(self, sid: str, view: int) -> np.ndarray:
        """(H, W) metric depth; background = t_far."""
        return self._load(sid, view, "depth")

    def _load(self, sid: str, view: int, kind: str) -> np.ndarray:
        key = (sid, view, kind)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        self.camera(sid, view)
        path = self.root / sid / (f"rgb_{view:02d}.png" if kind == "rgb" else f"depth_{view:02d}.bin")
        try:
            array = read_png(path) if kind == "rgb" else read_depth(path)
        except OSError as e:
            raise DatasetError(f"Cannot read {path}: {e}")
        array.setflags(write=False)
        self._cache[key] = array
        return array
