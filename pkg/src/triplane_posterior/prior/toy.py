"""
One-dimensional DDPM for validating the schedule, loss and sampler.

PURPOSE: Small MLP denoiser over scalars, trained and sampled with the same schedule and
    reverse loop as the latent prior
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- Input is [x | sinusoidal(t)], hidden layers use SiLU, output is one noise value
- Chains run batched: the sampler state is an (n, 1) array, one row per sample
"""

from __future__ import annotations

import logging

import numpy as np

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.nn import ParamStore, init_linear, linear
from triplane_posterior.diffcore.optim import AdamState, adam_step
from triplane_posterior.diffcore.tensor import Tensor, as_tensor, backward, default_dtype, no_record, record
from triplane_posterior.prior.sampling import ancestral_sample
from triplane_posterior.prior.schedule import NoiseSchedule
from triplane_posterior.prior.unet import timestep_embedding

logger = logging.getLogger(__name__)


class ToyDenoiser:
    """MLP epsilon model for scalar data."""

    def __init__(self, hidden: int = 64, layers: int = 3, embed_dim: int = 16, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self.embed_dim = embed_dim
        self.layers = layers
        self.params = ParamStore()
        width = 1 + embed_dim
        for k in range(layers):
            out = 1 if k == layers - 1 else hidden
            init_linear(self.params, f"toy.fc{k}", width, out, rng)
            width = out

    def __call__(self, x: np.ndarray | Tensor, t: int | np.ndarray) -> Tensor:
        x = as_tensor(x)
        n = x.shape[0]
        steps = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        emb = timestep_embedding(steps, self.embed_dim).astype(x.dtype)
        h = ops.concat([ops.reshape(x, (n, 1)), as_tensor(emb)], axis=-1)
        for k in range(self.layers):
            h = linear(self.params, f"toy.fc{k}", h)
            if k < self.layers - 1:
                h = ops.silu(h)
        return h

    def epsilon(self, x: np.ndarray, t: int) -> np.ndarray:
        with no_record():
            return np.asarray(self(x, t).data, dtype=np.float64).reshape(x.shape)


def train_toy(
    data: np.ndarray,
    schedule: NoiseSchedule,
    iterations: int = 5000,
    batch_size: int = 256,
    lr: float = 1e-3,
    seed: int = 0,
    hidden: int = 64,
) -> ToyDenoiser:
    """Fit a ToyDenoiser to 1-D samples with the epsilon loss."""
    values = np.asarray(data, dtype=np.float64).reshape(-1, 1)
    model = ToyDenoiser(hidden=hidden, seed=seed)
    params = dict(model.params.items())
    state = AdamState.for_params(params)
    rng = np.random.default_rng(seed)
    dtype = default_dtype()

    for it in range(1, iterations + 1):
        x0 = values[rng.integers(0, values.shape[0], size=batch_size)]
        t = rng.integers(1, schedule.T + 1, size=batch_size)
        eps = rng.standard_normal((batch_size, 1))
        ab = schedule.alpha_bars[t - 1][:, None]
        x_t = (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(dtype)
        with record() as rec:
            loss = ops.mean(ops.square(ops.sub(model(x_t, t), eps.astype(dtype))))
        if not np.isfinite(loss.data):
            logger.warning(f"Toy iteration {it}: non-finite loss, skipped")
            continue
        grads = backward(rec, loss)
        adam_step(params, {name: grads.wrt(p) for name, p in params.items()}, state, lr)
        if it % 1000 == 0:
            logger.debug(f"Toy iteration {it}: loss={float(loss.data):.4f}")
    return model


def sample_toy(model: ToyDenoiser, schedule: NoiseSchedule, n: int, seed: int = 0) -> np.ndarray:
    """n scalar samples drawn as one batched chain."""
    out = ancestral_sample(model.epsilon, (n, 1), schedule, np.random.default_rng(seed))
    return out.reshape(-1)


def two_component_mixture(
    n: int,
    weights: tuple[float, float] = (0.3, 0.7),
    means: tuple[float, float] = (-1.0, 1.0),
    std: float = 0.2,
    seed: int = 0,
) -> np.ndarray:
    """Draw n points from a two-Gaussian mixture."""
    rng = np.random.default_rng(seed)
    component = rng.random(n) >= weights[0]
    centers = np.where(component, means[1], means[0])
    return centers + std * rng.standard_normal(n)


def component_weights(samples: np.ndarray, threshold: float = 0.0) -> tuple[float, float]:
    """Fractions of samples below and above the threshold."""
    arr = np.asarray(samples)
    below = float(np.mean(arr < threshold))
    return below, 1.0 - below
