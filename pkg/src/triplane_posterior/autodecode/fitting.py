"""
Test-time latent fitting and held-out evaluation.

PURPOSE: Optimize a fresh latent against an observation with the reconstruction model
    frozen, and score latents on held-out views
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- The latent starts at zero; only the latent has an Adam state, the model's tensors
  never require gradients
- RGB observations redraw stratified depths every step (as in stage 1); depth
  observations keep mid-bin depths so the target bin stays fixed
- fit_latent doubles as the no-prior baseline for guided reconstruction tasks
- eval_heldout renders whole views with mid-bin samples and reports per-view PSNR/SSIM,
  a percentile distribution and per-scene means
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from triplane_posterior.analysis.metrics import SSIM_WINDOW, MetricDistribution, psnr, ssim
from triplane_posterior.autodecode.training import TrainingDivergedError
from triplane_posterior.diffcore.optim import AdamState, adam_step
from triplane_posterior.diffcore.tensor import Tensor, backward, record
from triplane_posterior.reconmodel.model import ReconModel
from triplane_posterior.reconmodel.render import DEFAULT_CHUNK, observation_loss, render_image
from triplane_posterior.scenes.dataset import SceneDataset
from triplane_posterior.scenes.observations import Observation
from triplane_posterior.scenes.rays import RayBatch, rays_for_pixels

logger = logging.getLogger(__name__)

# (step, total steps, last loss)
FitProgress = Callable[[int, int, float], None]


@dataclass
class FitResult:
    """Fitted latent plus the per-step loss curve."""

    latent: np.ndarray
    losses: list[float] = field(default_factory=list)
    skipped: int = 0

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def fit_latent(
    model: ReconModel,
    observation: Observation,
    steps: int,
    lr: float = 1e-3,
    samples: int = 64,
    t_near: float = 1.0,
    t_far: float = 4.0,
    rays_per_step: int | None = None,
    seed: int = 0,
    chunk: int = DEFAULT_CHUNK,
    max_skips: int = 3,
    progress: FitProgress | None = None,
) -> FitResult:
    """Minimize the observation loss over a single latent with the model frozen."""
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")

    frozen = model.frozen()
    rng = np.random.default_rng(seed)
    kind = observation.target
    base = observation.rays(samples, t_near, t_far)
    z = Tensor(np.zeros(model.profile.d), requires_grad=True, name="latent")
    state = AdamState.for_params({"z": z})
    result = FitResult(latent=z.data)

    logger.info(
        f"Fitting latent for {observation.scene_id} ({observation.kind.value}, "
        f"{base.n_rays} rays, {steps} steps)"
    )
    consecutive = 0
    for step in range(1, steps + 1):
        rays = base
        if rays_per_step is not None and rays_per_step < base.n_rays:
            rays = base.select(np.sort(rng.choice(base.n_rays, size=rays_per_step, replace=False)))
        if kind == "rgb":
            rays = rays.restratified(rng)

        with record() as rec:
            loss = observation_loss(z, frozen, rays, kind, chunk)
        value = float(loss.data)
        if not np.isfinite(value):
            consecutive += 1
            result.skipped += 1
            logger.warning(f"Fit step {step}: non-finite loss, skipped")
            if consecutive >= max_skips:
                raise TrainingDivergedError(f"Latent fit diverged at step {step}")
            continue
        consecutive = 0
        grads = backward(rec, loss)
        adam_step({"z": z}, {"z": grads.wrt(z)}, state, lr)
        result.losses.append(value)
        if step % 100 == 0:
            logger.debug(f"Fit step {step}: loss={value:.5f}")
        if progress is not None:
            progress(step, steps, value)

    result.latent = z.data.copy()
    return result


# =============================================================================
# Held-out evaluation
# =============================================================================


@dataclass
class ViewScore:
    scene_id: str
    view: int
    split: str
    psnr: float
    ssim: float


@dataclass
class HeldoutReport:
    """Per-view scores with summary statistics."""

    views: list[ViewScore]
    distribution: MetricDistribution
    per_scene: dict[str, float]

    @property
    def mean_psnr(self) -> float:
        return self.distribution.mean

    @property
    def median_psnr(self) -> float:
        return self.distribution.p50

    def rows(self) -> list[dict[str, object]]:
        return [vars(v).copy() for v in self.views]


def full_view_rays(dataset: SceneDataset, sid: str, view: int, samples: int) -> RayBatch:
    """Mid-bin rays for every pixel of one view, row-major."""
    camera = dataset.camera(sid, view)
    return rays_for_pixels(camera, np.arange(camera.pixel_count), samples, dataset.t_near, dataset.t_far)


def render_view(
    model: ReconModel, z: np.ndarray, dataset: SceneDataset, sid: str, view: int, samples: int, chunk: int
) -> np.ndarray:
    """(H, W, 3) render of latent z from one of the scene's cameras."""
    camera = dataset.camera(sid, view)
    rgb = render_image(z, model, full_view_rays(dataset, sid, view, samples), chunk)
    return rgb.reshape(camera.height, camera.width, 3)


def eval_heldout(
    model: ReconModel,
    latents: Mapping[str, np.ndarray],
    dataset: SceneDataset,
    split: Literal["test", "train"] = "test",
    samples: int = 64,
    chunk: int = DEFAULT_CHUNK,
    max_views: int | None = None,
) -> HeldoutReport:
    """Render the chosen view split of every scene in `latents` and score it."""
    frozen = model.frozen()
    scores: list[ViewScore] = []
    for sid in latents:
        views = dataset.test_views(sid) if split == "test" else dataset.train_views(sid)
        for view in views[:max_views]:
            pred = render_view(frozen, latents[sid], dataset, sid, view, samples, chunk)
            truth = dataset.image(sid, view)
            small = min(truth.shape[:2]) < SSIM_WINDOW
            scores.append(
                ViewScore(
                    scene_id=sid,
                    view=view,
                    split=split,
                    psnr=psnr(pred, truth),
                    ssim=float("nan") if small else ssim(pred, truth),
                )
            )

    per_scene: dict[str, float] = {}
    for sid in latents:
        values = [s.psnr for s in scores if s.scene_id == sid]
        if values:
            per_scene[sid] = float(np.mean(values))
    distribution = MetricDistribution.from_values("psnr", [s.psnr for s in scores])
    logger.info(
        f"Evaluated {len(scores)} {split} views over {len(per_scene)} scenes: "
        f"mean PSNR {distribution.mean:.2f} dB, median {distribution.p50:.2f} dB"
    )
    return HeldoutReport(views=scores, distribution=distribution, per_scene=per_scene)
