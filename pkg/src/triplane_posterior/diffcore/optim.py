"""
Adam optimizer over named parameter groups.

PURPOSE: Bias-corrected Adam applied in place between computation records
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- One AdamState per parameter group (latents, D1, D2, U-Net) so learning rates act
  independently
- A non-finite gradient rejects the whole group step: no parameter or moment changes,
  step counter not advanced, warning logged
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from triplane_posterior.diffcore.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment buffers and step counter for one parameter group."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **kwargs: float) -> AdamState:
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
            **kwargs,  # type: ignore[arg-type]
        )

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        """Flatten moments for checkpointing under '<prefix>.m.<name>' / '<prefix>.v.<name>'."""
        out: dict[str, np.ndarray] = {}
        for name in self.m:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> bool:
    """Apply one Adam update in place. Returns False if the step was rejected."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            logger.warning(f"Non-finite gradient for {name}; skipping step {state.step + 1}")
            return False

    for name, tensor in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        if state.m[name].shape != tensor.shape:
            raise ValueError(
                f"Adam moments for {name} have shape {state.m[name].shape}, parameter is {tensor.shape}"
            )

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * grad
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * grad * grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        tensor.assign(tensor.data - update)
    return True
