"""
Stage-1 auto-decoder training.

PURPOSE: Jointly optimize the reconstruction model and one latent per training scene
DEPENDENCIES: numpy, pandas

ARCHITECTURE NOTES:
- Latents start at zero; each iteration samples B scenes and |X| random train-view
  pixels per scene, sums the per-scene RGB losses, then updates D1, D2 and only the
  selected latents, each group with its own Adam state and learning rate
- All random draws happen in the driver thread in a fixed order, so scene forward and
  backward passes can run on workers without changing results
- Per-scene gradients are gathered by parameter name and summed in scene order at the
  iteration boundary
- A non-finite loss skips the iteration; three in a row raise TrainingDivergedError
- Log rows are appended to a CSV; checkpoints keep the last N plus the best monitor PSNR
"""

from __future__ import annotations

import logging
import shutil
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from triplane_posterior.analysis.metrics import psnr
from triplane_posterior.diffcore.checkpoint import Checkpoint, save_checkpoint
from triplane_posterior.diffcore.optim import AdamState, adam_step
from triplane_posterior.diffcore.tensor import Tensor, backward, default_dtype, record
from triplane_posterior.parallel import parallel_map
from triplane_posterior.reconmodel.model import ReconModel, ReconProfile
from triplane_posterior.reconmodel.render import DEFAULT_CHUNK, rec_loss, render_image, rm_forward
from triplane_posterior.scenes.dataset import SceneDataset
from triplane_posterior.scenes.rays import RayBatch, rays_for_pixels

logger = logging.getLogger(__name__)

# (iteration, total iterations, last loss)
ProgressCallback = Callable[[int, int, float], None]


class TrainingDivergedError(RuntimeError):
    """Raised after too many consecutive non-finite iterations."""


@dataclass
class TrainConfig:
    """Stage-1 hyperparameters."""

    scenes_per_batch: int = 2
    rays_per_scene: int = 1024
    samples_per_ray: int = 64
    lr_latent: float = 1e-3
    lr_d1: float = 1e-4
    lr_d2: float = 1e-3
    iterations: int = 20000
    seed: int = 0
    profile: str = "desk"
    checkpoint_every: int = 1000
    keep_last: int = 3
    log_every: int = 100
    monitor_scenes: int = 4
    monitor_rays: int = 256
    max_skips: int = 3
    workers: int = 1
    chunk: int = DEFAULT_CHUNK

    def __post_init__(self) -> None:
        positive = {
            "scenes_per_batch": self.scenes_per_batch,
            "rays_per_scene": self.rays_per_scene,
            "samples_per_ray": self.samples_per_ray,
            "lr_latent": self.lr_latent,
            "lr_d1": self.lr_d1,
            "lr_d2": self.lr_d2,
            "checkpoint_every": self.checkpoint_every,
            "keep_last": self.keep_last,
            "log_every": self.log_every,
            "monitor_scenes": self.monitor_scenes,
            "monitor_rays": self.monitor_rays,
            "max_skips": self.max_skips,
        }
        bad = [name for name, value in positive.items() if value <= 0]
        if bad:
            raise ValueError(f"TrainConfig fields must be positive: {', '.join(bad)}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.profile not in ("desk", "paper"):
            raise ValueError(f"profile must be 'desk' or 'paper', got {self.profile!r}")

    def recon_profile(self) -> ReconProfile:
        return ReconProfile.paper() if self.profile == "paper" else ReconProfile.desk()


class LatentTable:
    """One latent per training scene, each with its own Adam state."""

    def __init__(self, scene_ids: list[str], d: int) -> None:
        self.d = d
        self.latents: dict[str, Tensor] = {
            sid: Tensor(np.zeros(d), requires_grad=True, name=f"latent.{sid}") for sid in scene_ids
        }
        self.states: dict[str, AdamState] = {
            sid: AdamState.for_params({"z": t}) for sid, t in self.latents.items()
        }

    def __len__(self) -> int:
        return len(self.latents)

    def __getitem__(self, sid: str) -> Tensor:
        return self.latents[sid]

    @property
    def scene_ids(self) -> list[str]:
        return list(self.latents)

    def step(self, sid: str, grad: np.ndarray, lr: float) -> bool:
        return adam_step({"z": self.latents[sid]}, {"z": grad}, self.states[sid], lr)

    def arrays(self) -> dict[str, np.ndarray]:
        return {f"latent.{sid}": t.data for sid, t in self.latents.items()}

    def matrix(self) -> np.ndarray:
        """(N, d) latents in scene order."""
        return np.stack([t.data for t in self.latents.values()]).astype(np.float64)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {sid: t.data.copy() for sid, t in self.latents.items()}

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> LatentTable:
        arrays = ckpt.group("latent")
        if not arrays:
            raise ValueError("Checkpoint holds no latent.* tensors")
        ids = [name.split(".", 1)[1] for name in arrays]
        d = next(iter(arrays.values())).size
        table = cls(ids, d)
        for sid in ids:
            table.latents[sid].assign(arrays[f"latent.{sid}"])
        return table


@dataclass
class Stage1Result:
    """Outcome of a stage-1 run."""

    model: ReconModel
    table: LatentTable
    checkpoint: Path | None = None
    best_checkpoint: Path | None = None
    log_path: Path | None = None
    iterations_run: int = 0
    skipped: int = 0
    history: list[dict[str, float]] = field(default_factory=list)


@dataclass
class _SceneWork:
    sid: str
    rays: RayBatch


@dataclass
class _SceneGrad:
    loss: float
    params: dict[str, np.ndarray]
    latent: np.ndarray


def sample_training_rays(
    dataset: SceneDataset,
    sid: str,
    count: int,
    samples: int,
    rng: np.random.Generator,
) -> RayBatch:
    """Random pixels from random train views of one scene, stratified depths."""
    train_views = dataset.train_views(sid)
    views = rng.choice(train_views, size=count)
    pixels = rng.integers(0, dataset.manifest.width * dataset.manifest.height, size=count)
    batches = []
    for view in np.unique(views):
        sel = pixels[views == view]
        camera = dataset.camera(sid, int(view))
        targets = dataset.image(sid, int(view)).reshape(-1, 3)[sel]
        batches.append(
            rays_for_pixels(camera, sel, samples, dataset.t_near, dataset.t_far, rng=rng, target_rgb=targets)
        )
    return RayBatch.concat(batches)


def build_monitor(dataset: SceneDataset, scene_ids: list[str], config: TrainConfig) -> dict[str, RayBatch]:
    """Fixed mid-bin rays on the first train view of the first monitor scenes."""
    monitor: dict[str, RayBatch] = {}
    n_pixels = dataset.manifest.width * dataset.manifest.height
    pixels = np.unique(np.linspace(0, n_pixels - 1, min(config.monitor_rays, n_pixels)).astype(np.int64))
    for sid in scene_ids[: config.monitor_scenes]:
        view = dataset.train_views(sid)[0]
        targets = dataset.image(sid, view).reshape(-1, 3)[pixels]
        monitor[sid] = rays_for_pixels(
            dataset.camera(sid, view),
            pixels,
            config.samples_per_ray,
            dataset.t_near,
            dataset.t_far,
            target_rgb=targets,
        )
    return monitor


def monitor_metrics(model: ReconModel, table: LatentTable, monitor: dict[str, RayBatch], chunk: int) -> tuple[float, float]:
    """(summed squared error, PSNR) of the current model on the monitor rays."""
    preds, targets = [], []
    for sid, rays in monitor.items():
        preds.append(render_image(table[sid].data, model, rays, chunk))
        targets.append(rays.target_rgb)
    pred = np.concatenate(preds)
    target = np.concatenate(targets)
    return float(np.sum((pred - target) ** 2)), psnr(pred, target)


def _scene_gradients(model: ReconModel, table: LatentTable, work: _SceneWork, chunk: int) -> _SceneGrad:
    local = model.shadow()
    z = Tensor.wrap(table[work.sid].data, requires_grad=True)
    with record() as rec:
        loss = rec_loss(rm_forward(z, local, work.rays, chunk), work.rays.target_rgb)
    grads = backward(rec, loss)
    return _SceneGrad(
        loss=float(loss.data),
        params={name: grads.wrt(t) for name, t in local.params.items()},
        latent=grads.wrt(z),
    )


class _CheckpointKeeper:
    """Periodic checkpoints: keep the newest `keep_last`, plus a copy of the best."""

    def __init__(self, directory: Path, keep_last: int) -> None:
        self.directory = directory
        self.keep_last = keep_last
        self.saved: list[Path] = []
        self.best_psnr = -np.inf
        self.best_path = directory / "stage1_best.ckpt"

    def save(
        self,
        iteration: int,
        model: ReconModel,
        table: LatentTable,
        metadata: dict[str, Any],
        monitor_psnr: float,
    ) -> Path:
        path = self.directory / f"stage1_{iteration:06d}.ckpt"
        model.save(path, extra=table.arrays(), metadata=metadata)
        self.saved.append(path)
        logger.info(f"Checkpoint written: {path} (monitor PSNR {monitor_psnr:.2f} dB)")
        while len(self.saved) > self.keep_last:
            stale = self.saved.pop(0)
            stale.unlink(missing_ok=True)
        if monitor_psnr > self.best_psnr:
            self.best_psnr = monitor_psnr
            shutil.copyfile(path, self.best_path)
        return path


def train_stage1(
    dataset: SceneDataset,
    config: TrainConfig,
    out_dir: Path,
    model: ReconModel | None = None,
    progress: ProgressCallback | None = None,
) -> Stage1Result:
    """Train D1, D2 and the latent table on the dataset's training scenes."""
    scene_ids = dataset.manifest.training_scene_ids
    if not scene_ids:
        raise ValueError("Dataset has no training scenes")
    model = model or ReconModel.initialize(config.recon_profile(), seed=config.seed)
    table = LatentTable(scene_ids, model.profile.d)
    rng = np.random.default_rng(config.seed)
    batch = min(config.scenes_per_batch, len(scene_ids))

    d1 = model.params.group("d1")
    d2 = model.params.group("d2")
    d1_state = AdamState.for_params(d1)
    d2_state = AdamState.for_params(d2)

    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "stage1_log.csv"
    log_path.unlink(missing_ok=True)
    keeper = _CheckpointKeeper(out_dir / "checkpoints", config.keep_last)
    monitor = build_monitor(dataset, scene_ids, config)
    result = Stage1Result(model=model, table=table, log_path=log_path)
    base_meta = {
        "stage1": {
            "seed": config.seed,
            "scenes": scene_ids,
            "precision": str(default_dtype()),
            "config": {k: v for k, v in vars(config).items()},
        }
    }

    logger.info(
        f"Stage 1: {len(scene_ids)} scenes, {config.iterations} iterations, "
        f"B={batch}, {config.rays_per_scene} rays x {config.samples_per_ray} samples"
    )
    started = time.monotonic()
    consecutive_skips = 0

    for it in range(1, config.iterations + 1):
        chosen = [scene_ids[i] for i in rng.choice(len(scene_ids), size=batch, replace=False)]
        work = [
            _SceneWork(sid, sample_training_rays(dataset, sid, config.rays_per_scene, config.samples_per_ray, rng))
            for sid in chosen
        ]
        scene_grads = parallel_map(
            lambda w: _scene_gradients(model, table, w, config.chunk), work, workers=config.workers
        )
        loss = float(sum(g.loss for g in scene_grads))

        if not np.isfinite(loss):
            consecutive_skips += 1
            result.skipped += 1
            logger.warning(f"Iteration {it}: non-finite loss, skipped ({consecutive_skips} in a row)")
            if consecutive_skips >= config.max_skips:
                raise TrainingDivergedError(
                    f"Stage 1 diverged: {consecutive_skips} consecutive non-finite iterations at {it}"
                )
            continue
        consecutive_skips = 0

        summed: dict[str, np.ndarray] = {}
        for g in scene_grads:
            for name, grad in g.params.items():
                summed[name] = summed[name] + grad if name in summed else grad
        adam_step(d1, {k: summed[k] for k in d1}, d1_state, config.lr_d1)
        adam_step(d2, {k: summed[k] for k in d2}, d2_state, config.lr_d2)
        for sid, g in zip(chosen, scene_grads):
            table.step(sid, g.latent, config.lr_latent)
        result.iterations_run = it

        if it % config.log_every == 0 or it % config.checkpoint_every == 0 or it == config.iterations:
            monitor_loss, monitor_psnr = monitor_metrics(model, table, monitor, config.chunk)
            row = {
                "iteration": it,
                "loss": loss,
                "monitor_loss": monitor_loss,
                "monitor_psnr": monitor_psnr,
                "wall_time": round(time.monotonic() - started, 3),
            }
            result.history.append(row)
            pd.DataFrame([row]).to_csv(log_path, mode="a", header=not log_path.exists(), index=False)
            logger.debug(f"Iteration {it}: loss={loss:.4f} monitor PSNR={monitor_psnr:.2f} dB")
            if it % config.checkpoint_every == 0:
                meta = {"stage1": {**base_meta["stage1"], "iteration": it, "monitor_psnr": monitor_psnr}}
                keeper.save(it, model, table, meta, monitor_psnr)

        if progress is not None:
            progress(it, config.iterations, loss)

    final = out_dir / "recon.ckpt"
    model.save(
        final,
        extra=table.arrays(),
        metadata={"stage1": {**base_meta["stage1"], "iteration": result.iterations_run}},
    )
    result.checkpoint = final
    result.best_checkpoint = keeper.best_path if keeper.best_path.exists() else None
    logger.info(f"Stage 1 finished after {result.iterations_run} iterations: {final}")
    return result
