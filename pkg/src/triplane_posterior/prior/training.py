"""
Diffusion prior training on the auto-decoded latent table.

PURPOSE: Fit the epsilon-prediction U-Net to standardized latents
DEPENDENCIES: numpy, pandas

ARCHITECTURE NOTES:
- Per iteration: B latents drawn uniformly (with replacement), t uniform on 1..T,
  eps ~ N(0, I); loss = sum ||eps_theta(x_t, t) - eps||^2 / B
- The whole minibatch runs through the U-Net as one (B, r, r, c) batch
- A non-finite loss skips the iteration with a warning; there is no abort threshold
- Log rows (iteration, loss, wall_time) are appended to prior_log.csv
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.optim import AdamState, adam_step
from triplane_posterior.diffcore.tensor import Tensor, backward, default_dtype, record
from triplane_posterior.prior.model import STD_FLOOR, PriorModel, Standardizer
from triplane_posterior.prior.schedule import build_schedule
from triplane_posterior.prior.unet import UNet, UNetConfig

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int, float], None]


@dataclass
class PriorTrainConfig:
    """Diffusion-prior hyperparameters."""

    batch_size: int = 32
    lr: float = 1e-3
    iterations: int = 20000
    seed: int = 0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    log_every: int = 100
    checkpoint_every: int = 1000
    std_floor: float = STD_FLOOR
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.lr <= 0 or self.log_every <= 0 or self.checkpoint_every <= 0:
            raise ValueError("batch_size, lr, log_every and checkpoint_every must be positive")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")


@dataclass
class PriorTrainResult:
    model: PriorModel
    checkpoint: Path | None = None
    log_path: Path | None = None
    iterations_run: int = 0
    skipped: int = 0
    history: list[dict[str, float]] = field(default_factory=list)


def diffusion_loss(
    unet: UNet, x0: np.ndarray, t: np.ndarray, eps: np.ndarray, alpha_bars: np.ndarray
) -> Tensor:
    """Sum-reduced epsilon loss averaged over the batch; x0 and eps are (B, r, r, c)."""
    ab = alpha_bars[t - 1].reshape(-1, 1, 1, 1)
    x_t = (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(default_dtype())
    pred = unet(x_t, t)
    return ops.div(ops.sum(ops.square(ops.sub(pred, eps.astype(default_dtype())))), float(x0.shape[0]))


def train_prior(
    latents: np.ndarray,
    config: PriorTrainConfig,
    unet_config: UNetConfig,
    out_dir: Path | None = None,
    progress: ProgressCallback | None = None,
) -> PriorTrainResult:
    """Train a prior on an (N, d) latent table and optionally write prior.ckpt."""
    table = np.asarray(latents, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] == 0:
        raise ValueError(f"Latent table must be a non-empty (N, d) array, got {table.shape}")
    shape = (unet_config.resolution, unet_config.resolution, unet_config.in_channels)
    if table.shape[1] != int(np.prod(shape)):
        raise ValueError(f"Latents have d={table.shape[1]}, U-Net expects {shape}")

    standardizer = (
        Standardizer.fit(table, config.std_floor) if config.standardize else Standardizer.identity(table.shape[1])
    )
    data = standardizer.standardize(table).reshape(-1, *shape)
    schedule = build_schedule(config.T, config.beta_start, config.beta_end)
    unet = UNet.initialize(unet_config, seed=config.seed)
    model = PriorModel(unet, schedule, standardizer)
    state = AdamState.for_params(dict(unet.params.items()))
    rng = np.random.default_rng(config.seed)
    result = PriorTrainResult(model=model)

    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "prior_log.csv"
        log_path.unlink(missing_ok=True)
        result.log_path = log_path
    meta = {
        "prior_training": {
            "seed": config.seed,
            "latents": int(table.shape[0]),
            "precision": str(default_dtype()),
            "config": dict(vars(config)),
        }
    }

    logger.info(
        f"Prior training: {table.shape[0]} latents, {config.iterations} iterations, "
        f"batch {config.batch_size}, T={config.T}"
    )
    started = time.monotonic()
    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, data.shape[0], size=config.batch_size)
        t = rng.integers(1, config.T + 1, size=config.batch_size)
        eps = rng.standard_normal((config.batch_size, *shape))

        local = unet.shadow()
        with record() as rec:
            loss = diffusion_loss(local, data[idx], t, eps, schedule.alpha_bars)
        value = float(loss.data)
        if not np.isfinite(value):
            result.skipped += 1
            logger.warning(f"Prior iteration {it}: non-finite loss, skipped")
            continue
        grads = backward(rec, loss)
        adam_step(
            dict(unet.params.items()),
            {name: grads.wrt(tensor) for name, tensor in local.params.items()},
            state,
            config.lr,
        )
        result.iterations_run = it

        if it % config.log_every == 0 or it == config.iterations:
            row = {"iteration": it, "loss": value, "wall_time": round(time.monotonic() - started, 3)}
            result.history.append(row)
            if log_path is not None:
                pd.DataFrame([row]).to_csv(log_path, mode="a", header=not log_path.exists(), index=False)
            logger.debug(f"Prior iteration {it}: loss={value:.4f}")
        if out_dir is not None and it % config.checkpoint_every == 0:
            model.save(out_dir / "prior.ckpt", {**meta, "iteration": it})
        if progress is not None:
            progress(it, config.iterations, value)

    if out_dir is not None:
        result.checkpoint = model.save(out_dir / "prior.ckpt", {**meta, "iteration": result.iterations_run})
        logger.info(f"Prior written: {result.checkpoint}")
    return result
