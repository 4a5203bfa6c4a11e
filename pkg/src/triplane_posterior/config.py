"""
Run configuration using pydantic-settings.

PURPOSE: One validated configuration object per run, assembled from a profile file, a
    user TOML file, environment variables and CLI flags
DEPENDENCIES: pydantic, pydantic-settings, tomllib (stdlib), tomli-w

ARCHITECTURE NOTES:
Configuration hierarchy (highest to lowest priority):
1. CLI arguments (handled by Typer, passed in as overrides)
2. Environment variables (TRIPLANE_ prefix, "__" between nested keys)
3. User config file (--config)
4. Profile file shipped in triplane_posterior/profiles/<profile>.toml
5. Field defaults
- Every section forbids unknown keys; validation errors become ConfigError with one
  "section.field: message" line per problem
"""

from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path
from typing import Any, Literal

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w
from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, EnvSettingsSource, SettingsConfigDict

from triplane_posterior.autodecode.training import TrainConfig
from triplane_posterior.posterior.guidance import DEFAULT_SCALE, NOISY_SCALE, NOISY_THRESHOLD
from triplane_posterior.prior.model import STD_FLOOR
from triplane_posterior.prior.training import PriorTrainConfig
from triplane_posterior.prior.unet import UNetConfig
from triplane_posterior.reconmodel.model import ReconProfile
from triplane_posterior.reconmodel.render import DEFAULT_CHUNK

ProfileName = Literal["desk", "paper"]
PROFILES: tuple[str, ...] = ("desk", "paper")


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration."""


class DatasetSection(BaseModel):
    """Procedural dataset shape."""

    n_scenes: int = Field(default=64, ge=1)
    n_views: int = Field(default=30, ge=2)
    n_train: int | None = Field(default=None, description="Train views per scene (default 80%, 24 of 30)")
    n_heldout: int = Field(default=10, ge=0, description="Scenes excluded from stage 1")
    resolution: int = Field(default=32, ge=2)
    fov_deg: float = Field(default=40.0, gt=0, lt=180)
    t_near: float = Field(default=1.0, gt=0)
    t_far: float = Field(default=4.0, gt=0)
    path: Path | None = Field(default=None, description="Dataset read by training and sampling commands")

    model_config = {"extra": "forbid"}


class ModelSection(BaseModel):
    """Network shapes of the reconstruction model and the prior U-Net."""

    recon: ReconProfile = Field(default_factory=ReconProfile.desk)
    unet: UNetConfig = Field(default_factory=UNetConfig.desk)

    model_config = {"extra": "forbid"}


class Stage1Section(BaseModel):
    """Auto-decoder training and latent fitting."""

    scenes_per_batch: int = Field(default=2, ge=1)
    rays_per_scene: int = Field(default=1024, ge=1)
    samples_per_ray: int = Field(default=64, ge=2)
    lr_latent: float = Field(default=1e-3, gt=0)
    lr_d1: float = Field(default=1e-4, gt=0)
    lr_d2: float = Field(default=1e-3, gt=0)
    iterations: int = Field(default=20000, ge=0)
    checkpoint_every: int = Field(default=1000, ge=1)
    keep_last: int = Field(default=3, ge=1)
    log_every: int = Field(default=100, ge=1)
    monitor_scenes: int = Field(default=4, ge=1)
    monitor_rays: int = Field(default=256, ge=1)
    fit_steps: int = Field(default=2000, ge=1)
    fit_lr: float = Field(default=1e-3, gt=0)
    fit_rays_per_step: int | None = Field(default=1024)

    model_config = {"extra": "forbid"}

    def train_config(self, seed: int, profile: str, workers: int, chunk: int) -> TrainConfig:
        return TrainConfig(
            scenes_per_batch=self.scenes_per_batch,
            rays_per_scene=self.rays_per_scene,
            samples_per_ray=self.samples_per_ray,
            lr_latent=self.lr_latent,
            lr_d1=self.lr_d1,
            lr_d2=self.lr_d2,
            iterations=self.iterations,
            seed=seed,
            profile=profile,
            checkpoint_every=self.checkpoint_every,
            keep_last=self.keep_last,
            log_every=self.log_every,
            monitor_scenes=self.monitor_scenes,
            monitor_rays=self.monitor_rays,
            workers=workers,
            chunk=chunk,
        )


class PriorSection(BaseModel):
    """Diffusion prior training and unconditional sampling."""

    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    iterations: int = Field(default=20000, ge=0)
    T: int = Field(default=1000, ge=1)
    beta_start: float = Field(default=1e-4, gt=0, lt=1)
    beta_end: float = Field(default=2e-2, gt=0, lt=1)
    log_every: int = Field(default=100, ge=1)
    checkpoint_every: int = Field(default=1000, ge=1)
    std_floor: float = Field(default=STD_FLOOR, gt=0)
    standardize: bool = Field(default=True)
    sample_n: int = Field(default=16, ge=1, description="Latents drawn by `sample`")

    model_config = {"extra": "forbid"}

    def train_config(self, seed: int) -> PriorTrainConfig:
        return PriorTrainConfig(
            batch_size=self.batch_size,
            lr=self.lr,
            iterations=self.iterations,
            seed=seed,
            T=self.T,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            log_every=self.log_every,
            checkpoint_every=self.checkpoint_every,
            std_floor=self.std_floor,
            standardize=self.standardize,
        )


class PosteriorSection(BaseModel):
    """Guided sampling defaults and task flags."""

    n: int = Field(default=10, ge=1, description="Posterior samples per task")
    scale: float | None = Field(default=None, ge=0, description="Guidance scale (preset when unset)")
    default_scale: float = Field(default=DEFAULT_SCALE, ge=0)
    noisy_scale: float = Field(default=NOISY_SCALE, ge=0)
    noisy_threshold: float = Field(default=NOISY_THRESHOLD, ge=0)
    samples_per_ray: int = Field(default=64, ge=2)
    half: Literal["top", "bottom", "left", "right"] = Field(default="top")
    fraction: float = Field(default=0.05, gt=0, le=1)
    sigma: float = Field(default=0.0, ge=0)
    views: int = Field(default=5, ge=1, description="Views for noisy_views")
    baseline: bool = Field(default=False, description="Also fit a no-prior latent to the observation")
    baseline_steps: int = Field(default=2000, ge=1)
    trace: bool = Field(default=False, description="Write per-step sampler traces")

    model_config = {"extra": "forbid"}


class AnalysisSection(BaseModel):
    """Rendering and reporting."""

    samples_per_ray: int = Field(default=64, ge=2)
    chunk: int = Field(default=DEFAULT_CHUNK, ge=1)
    grid_views: int = Field(default=3, ge=1)
    averaging_ks: list[int] = Field(default_factory=lambda: [5, 10, 20])

    model_config = {"extra": "forbid"}

    @field_validator("averaging_ks")
    @classmethod
    def positive_ks(cls, v: list[int]) -> list[int]:
        if any(k < 1 for k in v):
            raise ValueError(f"averaging_ks must be positive, got {v}")
        return sorted(set(v))


class RunConfig(BaseSettings):
    """Effective configuration of one run."""

    model_config = SettingsConfigDict(
        env_prefix="TRIPLANE_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    profile: ProfileName = Field(default="desk")
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    precision: Literal["float32", "float64"] = Field(default="float32")
    output_root: Path = Field(default=Path("runs"))

    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelSection = Field(default_factory=ModelSection)
    stage1: Stage1Section = Field(default_factory=Stage1Section)
    prior: PriorSection = Field(default_factory=PriorSection)
    posterior: PosteriorSection = Field(default_factory=PosteriorSection)
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)

    @field_validator("output_root", mode="before")
    @classmethod
    def expand_path(cls, v: str | Path) -> Path:
        return Path(v).expanduser()

    def echo(self) -> dict[str, Any]:
        """JSON-safe dict of every field, for run manifests."""
        return _paths_to_str(self.model_dump(mode="json"))

    def save_toml(self, path: Path) -> Path:
        """Write the effective configuration as TOML."""
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            tomli_w.dump(_drop_none(self.echo()), f)
        return path


def _paths_to_str(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _paths_to_str(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_paths_to_str(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _drop_none(obj: Any) -> Any:
    # TOML has no null
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    return obj


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Recursively merge override into a copy of base."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_toml(path: Path) -> dict[str, Any]:
    """Parse a TOML file, keeping the parser's line and column in errors."""
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}")


def profile_defaults(profile: str) -> dict[str, Any]:
    """Contents of the shipped profile file."""
    if profile not in PROFILES:
        raise ConfigError(f"profile: unknown profile {profile!r}; valid profiles: {', '.join(PROFILES)}")
    text = resources.files("triplane_posterior").joinpath("profiles", f"{profile}.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        loc = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{loc}: {item['msg']}")
    return "\n".join(lines)


def load_config(
    config_path: Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Assemble the run configuration from all layers."""
    user = read_toml(config_path) if config_path is not None else {}
    env = EnvSettingsSource(RunConfig)()
    flags = {k: v for k, v in (overrides or {}).items() if v is not None}

    chosen = flags.get("profile") or env.get("profile") or user.get("profile") or "desk"
    layers = deep_merge(profile_defaults(str(chosen)), user)
    layers = deep_merge(layers, env)
    layers = deep_merge(layers, flags)
    layers["profile"] = chosen
    try:
        return RunConfig(**layers)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e))
