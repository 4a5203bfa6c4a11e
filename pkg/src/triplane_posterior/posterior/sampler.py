"""
Guided posterior sampling over scene latents.

PURPOSE: Run the prior's reverse chain with a reconstruction-guidance correction after
    every draw, for one or many seeds
DEPENDENCIES: numpy, pandas

ARCHITECTURE NOTES:
- Step order per t: eps = unet(z_t, t); draw z_{t-1}; z~0 from z_{t-1}; then
  z_{t-1} <- z_{t-1} - s * dL/dz_{t-1}
- The chain uses the same Generator usage as prior sampling, so s = 0 reproduces
  sample_chain bit for bit under the same seed
- Both networks are read-only: the prior runs without recording and the reconstruction
  model is a frozen view
- A non-finite state aborts the chain with PosteriorDivergedError carrying the trace so far
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from triplane_posterior.diffcore.checkpoint import load_checkpoint, save_checkpoint
from triplane_posterior.parallel import parallel_map
from triplane_posterior.posterior.guidance import GuidanceSpec, guidance_gradient
from triplane_posterior.prior.model import PriorModel
from triplane_posterior.prior.sampling import SamplingDivergedError, ancestral_sample
from triplane_posterior.reconmodel.model import ReconModel

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["t", "prior_step_norm", "guidance_norm", "loss"]


@dataclass
class SamplerTrace:
    """Per-step diagnostics of one chain."""

    t: list[int] = field(default_factory=list)
    prior_step_norm: list[float] = field(default_factory=list)
    guidance_norm: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)

    def append(self, t: int, prior_step_norm: float, guidance_norm: float, loss: float) -> None:
        self.t.append(t)
        self.prior_step_norm.append(prior_step_norm)
        self.guidance_norm.append(guidance_norm)
        self.loss.append(loss)

    def __len__(self) -> int:
        return len(self.t)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: getattr(self, name) for name in TRACE_COLUMNS}, columns=TRACE_COLUMNS)

    def write_csv(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, encoding="utf-8")
        return path


class PosteriorDivergedError(RuntimeError):
    """Raised when a guided chain produces a non-finite state."""

    def __init__(self, message: str, trace: SamplerTrace, seed: int) -> None:
        super().__init__(message)
        self.trace = trace
        self.seed = seed


@dataclass
class PosteriorResult:
    seed: int
    latent: np.ndarray
    scale: float
    trace: SamplerTrace | None = None


def posterior_sample(
    prior: PriorModel,
    recon: ReconModel,
    spec: GuidanceSpec,
    seed: int,
    trace: bool = False,
    deterministic: bool = False,
) -> PosteriorResult:
    """One guided chain; returns the de-standardized latent (d,)."""
    scale = spec.effective_scale
    frozen = recon.frozen()
    steps = SamplerTrace()
    guided = scale > 0 or trace
    current: dict[str, np.ndarray] = {}

    def eps_fn(z: np.ndarray, t: int) -> np.ndarray:
        current["z_t"] = z
        return prior.epsilon(z, t)

    def hook(t: int, z_prev: np.ndarray, eps: np.ndarray) -> np.ndarray:
        if not guided:
            return z_prev
        step = guidance_gradient(z_prev, eps, t, frozen, spec, prior.schedule, prior.standardizer)
        if trace:
            steps.append(
                t,
                float(np.linalg.norm(z_prev - current["z_t"])),
                float(np.linalg.norm(step.gradient)),
                step.loss,
            )
        if not np.all(np.isfinite(step.gradient)):
            raise PosteriorDivergedError(f"Non-finite guidance gradient at t={t} (seed {seed})", steps, seed)
        return z_prev - scale * step.gradient

    try:
        x0 = ancestral_sample(
            eps_fn, (prior.d,), prior.schedule, np.random.default_rng(seed), deterministic, hook
        )
    except SamplingDivergedError as e:
        raise PosteriorDivergedError(f"{e} (seed {seed})", steps, seed) from e

    return PosteriorResult(
        seed=seed,
        latent=prior.standardizer.destandardize(x0),
        scale=scale,
        trace=steps if trace else None,
    )


def batch_posterior(
    prior: PriorModel,
    recon: ReconModel,
    spec: GuidanceSpec,
    seeds: Sequence[int],
    trace: bool = False,
    workers: int = 1,
) -> list[PosteriorResult]:
    """Independent guided chains, one per seed, in seed order."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("batch_posterior needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"Seeds must be distinct: {seeds}")
    spec.rays()
    logger.info(
        f"Posterior sampling: {len(seeds)} chains, task {spec.observation.kind.value}, "
        f"scene {spec.observation.scene_id}, s={spec.effective_scale:g}"
    )
    results = parallel_map(lambda s: posterior_sample(prior, recon, spec, s, trace), seeds, workers)
    logger.info(f"Posterior sampling finished: {len(results)} latents")
    return results


def save_posterior(path: Path, results: Sequence[PosteriorResult], metadata: dict[str, Any] | None = None) -> Path:
    """Write sampled latents under posterior.<seed>."""
    tensors = {f"posterior.{r.seed}": r.latent for r in results}
    return save_checkpoint(path, tensors, {"posterior": metadata or {}})


def load_posterior(path: Path) -> dict[int, np.ndarray]:
    """Seed -> latent, ordered by seed."""
    ckpt = load_checkpoint(path)
    found = {int(name.split(".", 1)[1]): value for name, value in ckpt.group("posterior").items()}
    return dict(sorted(found.items()))
