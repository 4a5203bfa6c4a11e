"""
Guided reconstruction tasks and their per-sample metrics.

PURPOSE: Map task names to observation builders and score posterior samples of a task
DEPENDENCIES: numpy, pydantic

ARCHITECTURE NOTES:
- Tasks: full_views, half_image (top/bottom/left/right), sparse_pixels (fraction),
  sparse_depth (fraction), noisy_views (sigma, view count)
- Per (task, scene, seed): mean PSNR and SSIM over the scene's held-out views; the
  half-image hidden/observed variance ratio and the no-prior baseline PSNR are per task
  and repeated on every row; sparse_depth adds the expected-depth error on the observed
  view's foreground
- With unconditional prior latents (same seeds) sparse_depth also scores the prior
  samples: their depth error, and the spread of both sample sets on the observed view
  (mean per-pixel RGB variance, mean per-ray expected-depth variance)
- Latent averaging rows compare render(mean of the first k samples) with the best single
  sample for each k that fits the sample count
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, Field

from triplane_posterior.analysis.metrics import SSIM_WINDOW, psnr, ssim
from triplane_posterior.analysis.uncertainty import average_latents, render_latent, variance_map
from triplane_posterior.reconmodel.model import ReconModel
from triplane_posterior.reconmodel.render import DEFAULT_CHUNK, expected_depth
from triplane_posterior.scenes.dataset import SceneDataset
from triplane_posterior.scenes.observations import (
    HalfSide,
    Observation,
    ObservationKind,
    ObservationParams,
    half_indices,
    make_observation,
)
from triplane_posterior.scenes.rays import rays_for_pixels

logger = logging.getLogger(__name__)

TASKS: dict[str, ObservationKind] = {kind.value: kind for kind in ObservationKind}
AVERAGING_KS = (5, 10, 20)

OPPOSITE_HALF: dict[str, HalfSide] = {"top": "bottom", "bottom": "top", "left": "right", "right": "left"}


class UnknownTaskError(ValueError):
    """Raised for a task name outside the registry."""

    def __init__(self, name: str) -> None:
        super().__init__(f"Unknown task {name!r}; valid tasks: {', '.join(TASKS)}")
        self.name = name


class TaskOptions(BaseModel):
    """Task flags as given on the command line."""

    half: HalfSide = Field(default="top")
    fraction: float = Field(default=0.05)
    sigma: float = Field(default=0.0)
    views: int | None = Field(default=None, description="View count for multi-view tasks")
    view: int | None = Field(default=None, description="Observed view for single-view tasks")

    model_config = {"extra": "forbid"}


def resolve_task(name: str) -> ObservationKind:
    if name not in TASKS:
        raise UnknownTaskError(name)
    return TASKS[name]


def build_task_observation(
    dataset: SceneDataset, sid: str, task: str, options: TaskOptions | None = None, seed: int = 0
) -> Observation:
    """Observation of scene `sid` for a named task."""
    kind = resolve_task(task)
    options = options or TaskOptions()
    params = ObservationParams(
        view=options.view,
        half=options.half,
        fraction=options.fraction,
        sigma=options.sigma,
        n_views=options.views,
    )
    return make_observation(dataset, sid, kind, params, seed)


@dataclass
class TaskEvaluation:
    """Metric rows, averaging rows and grid renders of one (task, scene)."""

    rows: list[dict[str, object]] = field(default_factory=list)
    averaging: list[dict[str, object]] = field(default_factory=list)
    renders: dict[int, np.ndarray] = field(default_factory=dict)
    truths: dict[int, np.ndarray] = field(default_factory=dict)


def _image_scores(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    small = min(truth.shape[:2]) < SSIM_WINDOW
    return psnr(pred, truth), float("nan") if small else ssim(pred, truth)


def sample_spread(images: Sequence[np.ndarray], depths: Sequence[np.ndarray]) -> tuple[float, float]:
    """(mean per-pixel RGB variance, mean per-ray depth variance) across a sample set."""
    if len(images) < 2 or len(depths) < 2:
        return float("nan"), float("nan")
    rgb = float(variance_map(np.stack(images)).mean())
    depth = float(np.stack(depths).var(axis=0, ddof=1).mean())
    return rgb, depth


def evaluate_task(
    task: str,
    dataset: SceneDataset,
    observation: Observation,
    latents: Mapping[int, np.ndarray],
    recon: ReconModel,
    samples: int = 64,
    chunk: int = DEFAULT_CHUNK,
    baseline: np.ndarray | None = None,
    grid_views: int = 3,
    averaging_ks: Sequence[int] = AVERAGING_KS,
    prior_latents: Mapping[int, np.ndarray] | None = None,
) -> TaskEvaluation:
    """Score every sampled latent of one task on one scene.

    `prior_latents` are unconditional samples keyed by the same seeds; they are only
    scored for sparse_depth.
    """
    sid = observation.scene_id
    frozen = recon.frozen()
    seeds = list(latents)
    eval_views = dataset.test_views(sid)
    observed_view = observation.views[0].view_index
    t_near, t_far = dataset.t_near, dataset.t_far

    def render(z: np.ndarray, view: int) -> np.ndarray:
        return render_latent(z, frozen, dataset.camera(sid, view), samples, t_near, t_far, chunk)

    result = TaskEvaluation()
    renders: dict[int, list[np.ndarray]] = {v: [] for v in eval_views}
    for seed in seeds:
        for view in eval_views:
            renders[view].append(render(latents[seed], view))

    def mean_scores(images: Mapping[int, np.ndarray]) -> tuple[float, float]:
        scores = [_image_scores(images[v], dataset.image(sid, v)) for v in eval_views]
        return float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores]))

    variance_ratio = float("nan")
    if observation.kind == ObservationKind.HALF_IMAGE and len(seeds) >= 2:
        stack = np.stack([render(latents[s], observed_view) for s in seeds])
        var = variance_map(stack).reshape(-1)
        camera = dataset.camera(sid, observed_view)
        half = observation.params.get("half", "top")
        hidden = half_indices(camera.width, camera.height, OPPOSITE_HALF[str(half)])
        observed = observation.views[0].pixel_indices
        variance_ratio = float(var[hidden].mean() / max(var[observed].mean(), 1e-12))

    baseline_psnr = float("nan")
    if baseline is not None:
        baseline_psnr = mean_scores({v: render(baseline, v) for v in eval_views})[0]

    depth_truth = dataset.depth(sid, observed_view).reshape(-1)
    foreground = np.flatnonzero(depth_truth < t_far)
    depth_rays = None
    if observation.kind == ObservationKind.SPARSE_DEPTH and foreground.size:
        depth_rays = rays_for_pixels(dataset.camera(sid, observed_view), foreground, samples, t_near, t_far)

    depths: dict[int, np.ndarray] = {}
    prior_depths: dict[int, np.ndarray] = {}
    spread = (float("nan"), float("nan"))
    prior_spread = (float("nan"), float("nan"))
    if depth_rays is not None:
        depths = {seed: expected_depth(latents[seed], frozen, depth_rays) for seed in seeds}
        spread = sample_spread([render(latents[s], observed_view) for s in seeds], list(depths.values()))
        if prior_latents:
            prior_depths = {seed: expected_depth(z, frozen, depth_rays) for seed, z in prior_latents.items()}
            prior_spread = sample_spread(
                [render(z, observed_view) for z in prior_latents.values()], list(prior_depths.values())
            )

    def depth_error(predicted: np.ndarray | None) -> float:
        if predicted is None:
            return float("nan")
        return float(np.mean(np.abs(predicted - depth_truth[foreground])))

    single_psnr: list[float] = []
    for i, seed in enumerate(seeds):
        p, s = mean_scores({v: renders[v][i] for v in eval_views})
        single_psnr.append(p)
        result.rows.append(
            {
                "task": task,
                "scene_id": sid,
                "seed": seed,
                "psnr": p,
                "ssim": s,
                "depth_error": depth_error(depths.get(seed)),
                "variance_ratio": variance_ratio,
                "baseline_psnr": baseline_psnr,
                "prior_depth_error": depth_error(prior_depths.get(seed)),
                "rgb_variance": spread[0],
                "depth_variance": spread[1],
                "prior_rgb_variance": prior_spread[0],
                "prior_depth_variance": prior_spread[1],
            }
        )

    ordered = [latents[s] for s in seeds]
    best = max(single_psnr) if single_psnr else float("nan")
    for k in averaging_ks:
        if k > len(ordered):
            continue
        mean_z = average_latents(ordered, k)
        result.averaging.append(
            {
                "task": task,
                "scene_id": sid,
                "k": k,
                "mean_latent_psnr": mean_scores({v: render(mean_z, v) for v in eval_views})[0],
                "best_single_psnr": best,
            }
        )

    for view in [observed_view, *[v for v in eval_views if v != observed_view]][:grid_views]:
        result.renders[view] = (
            np.stack(renders[view]) if view in renders else np.stack([render(latents[s], view) for s in seeds])
        )
        result.truths[view] = np.asarray(dataset.image(sid, view), dtype=np.float64)
    logger.info(f"Evaluated {task} on {sid}: {len(seeds)} samples, mean PSNR {np.mean(single_psnr):.2f} dB")
    return result
