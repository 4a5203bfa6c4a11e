"""
Ancestral DDPM sampling.

PURPOSE: Unconditional sampling from the prior, and the shared reverse loop that guided
    sampling plugs into
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- A chain owns one Generator: z_T is drawn first, then one standard-normal draw per step
  for t = T..2; t = 1 adds no noise and consumes no draws
- Deterministic mode replaces beta_tilde by 0 and draws nothing after z_T
- An optional step hook sees (t, z_{t-1}, eps) after the draw and returns the adjusted
  z_{t-1}; with no hook the loop is plain prior sampling
- Chains for different seeds are independent and may run on separate workers
"""

from __future__ import annotations

import logging
from collections.abc import Callable

import numpy as np

from triplane_posterior.parallel import parallel_map
from triplane_posterior.prior.model import PriorModel
from triplane_posterior.prior.schedule import NoiseSchedule, posterior_mean

logger = logging.getLogger(__name__)

EpsilonFn = Callable[[np.ndarray, int], np.ndarray]
# (t, z_{t-1} after the draw, eps at (z_t, t)) -> adjusted z_{t-1}
StepHook = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


class SamplingDivergedError(RuntimeError):
    """Raised when a chain state stops being finite."""

    def __init__(self, message: str, t: int) -> None:
        super().__init__(message)
        self.t = t


def ancestral_sample(
    eps_fn: EpsilonFn,
    shape: tuple[int, ...],
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    deterministic: bool = False,
    hook: StepHook | None = None,
) -> np.ndarray:
    """Run one reverse chain from z_T ~ N(0, I) down to z_0."""
    z = rng.standard_normal(shape)
    for t in range(schedule.T, 0, -1):
        eps = eps_fn(z, t)
        z_prev = posterior_mean(z, eps, t, schedule)
        if t > 1 and not deterministic:
            z_prev = z_prev + np.sqrt(schedule.beta_tilde(t)) * rng.standard_normal(shape)
        if hook is not None:
            z_prev = hook(t, z_prev, eps)
        if not np.all(np.isfinite(z_prev)):
            raise SamplingDivergedError(f"Non-finite chain state at t={t}", t)
        z = z_prev
    return z


def sample_chain(prior: PriorModel, seed: int, deterministic: bool = False) -> np.ndarray:
    """One de-standardized latent (d,) from the chain seeded with `seed`."""
    x0 = ancestral_sample(
        prior.epsilon, (prior.d,), prior.schedule, np.random.default_rng(seed), deterministic
    )
    return prior.standardizer.destandardize(x0)


def sample_prior(
    prior: PriorModel,
    n: int,
    seed: int = 0,
    deterministic: bool = False,
    workers: int = 1,
) -> np.ndarray:
    """n latents (n, d); chain i is seeded with seed + i."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    logger.info(f"Sampling {n} latents from the prior (T={prior.schedule.T}, seed={seed})")
    samples = parallel_map(lambda i: sample_chain(prior, seed + i, deterministic), list(range(n)), workers)
    return np.stack(samples)
