"""
Central finite-difference gradient checker.

PURPOSE: Compare reverse-mode gradients with numeric derivatives
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- The function is evaluated once under a record for the analytic gradient, then
  2 × (checked coordinates) times without a record
- Relative error per coordinate: |a - n| / (|a| + |n| + 1e-12)
"""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from triplane_posterior.diffcore.tensor import Tensor, backward, no_record, record


def grad_check(
    fn: Callable[..., Tensor],
    point: Sequence[Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    atol: float = 0.0,
    seed: int = 0,
) -> float:
    """Return the max relative error between analytic and central-difference gradients.

    Args:
        fn: Scalar-valued function of the point tensors.
        point: Tensors to differentiate with respect to; flagged requires_grad here.
        step: Finite-difference step.
        max_coords: If set, check this many randomly chosen coordinates per tensor.
        atol: Coordinates whose absolute difference is at most atol count as exact.
        seed: Seed for coordinate selection.
    """
    for tensor in point:
        tensor.requires_grad = True
        if not tensor.data.flags.c_contiguous:
            tensor.data = np.ascontiguousarray(tensor.data)

    with record() as rec:
        out = fn(*point)
    grads = backward(rec, out)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for tensor in point:
        analytic = grads.wrt(tensor).reshape(-1)
        flat = tensor.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            original = flat[i]
            flat[i] = original + step
            with no_record():
                plus = float(np.sum(fn(*point).data))
            flat[i] = original - step
            with no_record():
                minus = float(np.sum(fn(*point).data))
            flat[i] = original
            numeric = (plus - minus) / (2.0 * step)
            diff = abs(float(analytic[i]) - numeric)
            if diff <= atol:
                continue
            worst = max(worst, diff / (abs(float(analytic[i])) + abs(numeric) + 1e-12))
    return worst
