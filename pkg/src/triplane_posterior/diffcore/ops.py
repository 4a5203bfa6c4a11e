"""
Differentiable primitives with their reverse-pass rules.

PURPOSE: Forward values and vector-Jacobian products for every primitive the
    reconstruction model, the U-Net and the guidance loss are built from
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- Each primitive computes its output with numpy, then calls tensor.emit() with a closure
  holding the saved values its reverse rule needs
- Images are channel-last: (N, H, W, C); conv weights are (kh, kw, C_in, C_out)
- Broadcasting follows numpy; reverse rules sum gradients back to the input shape
- Shape problems raise ShapeError naming the primitive and the offending shapes
"""

from __future__ import annotations

import builtins
import math
from collections.abc import Sequence
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import as_strided

from triplane_posterior.diffcore.tensor import ShapeError, Tensor, as_tensor, emit

Axis = int | tuple[int, ...] | None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes numpy broadcast to reach its shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}")


# =============================================================================
# Elementwise arithmetic
# =============================================================================


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray | None]:
        return [
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        ]

    return emit("add", (a, b), a.data + b.data, vjp)


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray | None]:
        return [
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        ]

    return emit("sub", (a, b), a.data - b.data, vjp)


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    av, bv = a.data, b.data

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray | None]:
        return [
            _unbroadcast(g * bv, a.shape) if needs[0] else None,
            _unbroadcast(g * av, b.shape) if needs[1] else None,
        ]

    return emit("mul", (a, b), av * bv, vjp)


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    av, bv = a.data, b.data
    out = av / bv

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray | None]:
        return [
            _unbroadcast(g / bv, a.shape) if needs[0] else None,
            _unbroadcast(-g * out / bv, b.shape) if needs[1] else None,
        ]

    return emit("div", (a, b), out, vjp)


def neg(x: Any) -> Tensor:
    x = as_tensor(x)
    return emit("neg", (x,), -x.data, lambda g, needs: [-g])


def exp(x: Any) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return emit("exp", (x,), out, lambda g, needs: [g * out])


def log(x: Any) -> Tensor:
    x = as_tensor(x)
    xv = x.data
    return emit("log", (x,), np.log(xv), lambda g, needs: [g / xv])


def power(x: Any, exponent: float) -> Tensor:
    """Elementwise x ** exponent for a constant exponent."""
    x = as_tensor(x)
    xv = x.data
    out = xv**exponent

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        return [g * exponent * xv ** (exponent - 1)]

    return emit("power", (x,), out, vjp)


def square(x: Any) -> Tensor:
    return power(x, 2.0)


# =============================================================================
# Activations
# =============================================================================


def relu(x: Any) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return emit("relu", (x,), np.where(mask, x.data, 0.0).astype(x.dtype), lambda g, needs: [g * mask])


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # Split by sign to keep exp() from overflowing
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Any) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return emit("sigmoid", (x,), out, lambda g, needs: [g * out * (1.0 - out)])


def silu(x: Any) -> Tensor:
    x = as_tensor(x)
    xv = x.data
    s = _sigmoid(xv)

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        return [g * (s + xv * s * (1.0 - s))]

    return emit("silu", (x,), xv * s, vjp)


def softplus(x: Any) -> Tensor:
    x = as_tensor(x)
    xv = x.data
    out = np.logaddexp(0.0, xv).astype(xv.dtype)
    return emit("softplus", (x,), out, lambda g, needs: [g * _sigmoid(xv)])


def softmax(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        return [out * (g - (g * out).sum(axis=axis, keepdims=True))]

    return emit("softmax", (x,), out, vjp)


# =============================================================================
# Linear algebra and reductions
# =============================================================================


def matmul(a: Any, b: Any) -> Tensor:
    """Batched matrix product over the last two axes (both operands at least 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray | None]:
        return [
            _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape) if needs[0] else None,
            _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape) if needs[1] else None,
        ]

    return emit("matmul", (a, b), av @ bv, vjp)


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Any, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    return emit("sum", (x,), out, lambda g, needs: [_expand_reduced(g, shape, axis, keepdims)])


def mean(x: Any, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.size // max(out.size, 1)

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        return [_expand_reduced(g / count, shape, axis, keepdims)]

    return emit("mean", (x,), out, vjp)


def cumsum(x: Any, axis: int = -1) -> Tensor:
    """Inclusive cumulative sum; the reverse rule is a reversed cumulative sum."""
    x = as_tensor(x)

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        return [np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)]

    return emit("cumsum", (x,), np.cumsum(x.data, axis=axis), vjp)


# =============================================================================
# Shape manipulation
# =============================================================================


def reshape(x: Any, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {original} into {shape}")
    return emit("reshape", (x,), out, lambda g, needs: [g.reshape(original)])


def transpose(x: Any, axes: tuple[int, ...] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is not None and sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} do not permute shape {x.shape}")
    inverse = None if axes is None else tuple(np.argsort(axes))
    return emit(
        "transpose", (x,), np.transpose(x.data, axes), lambda g, needs: [np.transpose(g, inverse)]
    )


def swapaxes(x: Any, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def take(x: Any, index: Any) -> Tensor:
    """Basic or advanced indexing; the reverse rule scatter-adds into zeros."""
    x = as_tensor(x)
    try:
        out = x.data[index]
    except IndexError as e:
        raise ShapeError(f"take: index invalid for shape {x.shape}: {e}")

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return [gx]

    return emit("take", (x,), np.array(out, copy=True), vjp)


def concat(tensors: Sequence[Any], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: no inputs")
    ndim = parts[0].ndim
    ax = axis % ndim
    for p in parts:
        if p.ndim != ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ShapeError(f"concat: mismatched shapes {[q.shape for q in parts]} on axis {axis}")
    sizes = [p.shape[ax] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        return list(np.split(g, splits, axis=ax))

    return emit("concat", parts, np.concatenate([p.data for p in parts], axis=ax), vjp)


# =============================================================================
# Image primitives
# =============================================================================


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Read-only (N, Ho, Wo, kh, kw, C) view of every receptive field."""
    n, _, _, c = xp.shape
    s_n, s_h, s_w, s_c = xp.strides
    return as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(s_n, s_h * stride, s_w * stride, s_h, s_w, s_c),
        writeable=False,
    )


def conv2d(x: Any, weight: Any, bias: Any = None, stride: int = 1) -> Tensor:
    """2-D convolution, channel-last, 'same'-style padding of k // 2."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2] != x.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: unsupported stride {stride}")
    kh, kw, cin, cout = weight.shape
    n, h, w, _ = x.shape
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = _windows(xp, kh, kw, stride, ho, wo).reshape(n * ho * wo, kh * kw * cin)
    w2 = weight.data.reshape(kh * kw * cin, cout)
    out = (cols @ w2).reshape(n, ho, wo, cout)

    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match {cout} output channels")
        out = out + bias.data
        inputs.append(bias)

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray | None]:
        g2 = g.reshape(n * ho * wo, cout)
        grads: list[np.ndarray | None] = [None, None, None]
        if needs[0]:
            gcols = (g2 @ w2.T).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[
                        :, :, :, i, j, :
                    ]
            grads[0] = gxp[:, ph : ph + h, pw : pw + w, :]
        if needs[1]:
            grads[1] = (cols.T @ g2).reshape(weight.shape)
        if len(needs) > 2 and needs[2]:
            grads[2] = g2.sum(axis=0)
        return grads[: len(needs)]

    return emit("conv2d", inputs, out, vjp)


def upsample_nearest(x: Any, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest: expected (N, H, W, C), got {x.shape}")
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        return [g.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4))]

    return emit("upsample_nearest", (x,), out, vjp)


def group_norm(x: Any, groups: int, gamma: Any, beta: Any, eps: float = 1e-5) -> Tensor:
    """Group normalization over channel-last input (N, ..., C) with affine gamma/beta."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if x.ndim < 2 or c % groups != 0 or gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"group_norm: input {x.shape} with {groups} groups, gamma {gamma.shape}, beta {beta.shape}"
        )
    n = x.shape[0]
    xg = x.data.reshape(n, -1, groups, c // groups)
    mu = xg.mean(axis=(1, 3), keepdims=True)
    var = xg.var(axis=(1, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv_std).reshape(x.shape)
    out = xhat * gamma.data + beta.data
    reduce_axes = tuple(range(x.ndim - 1))

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray | None]:
        gx = None
        if needs[0]:
            dxhat = (g * gamma.data).reshape(xg.shape)
            xh = xhat.reshape(xg.shape)
            gx = (
                inv_std
                * (
                    dxhat
                    - dxhat.mean(axis=(1, 3), keepdims=True)
                    - xh * (dxhat * xh).mean(axis=(1, 3), keepdims=True)
                )
            ).reshape(x.shape)
        return [
            gx,
            (g * xhat).sum(axis=reduce_axes) if needs[1] else None,
            g.sum(axis=reduce_axes) if needs[2] else None,
        ]

    return emit("group_norm", (x, gamma, beta), out, vjp)


def bilinear_sample(plane: Any, uv: np.ndarray) -> Tensor:
    """Sample plane (R, R, C) at P continuous coordinates uv (P, 2) in [0, 1]^2.

    u runs along the plane's first axis and v along its second; grid node k sits at
    k / (R - 1). Coordinates outside [0, 1] are clamped to the border. Gradients reach
    the plane values only.
    """
    plane = as_tensor(plane)
    uv = np.asarray(uv)
    if plane.ndim != 3 or plane.shape[0] != plane.shape[1] or plane.shape[0] < 2:
        raise ShapeError(f"bilinear_sample: plane must be (R, R, C) with R >= 2, got {plane.shape}")
    if uv.ndim != 2 or uv.shape[1] != 2:
        raise ShapeError(f"bilinear_sample: uv must be (P, 2), got {uv.shape}")
    r = plane.shape[0]

    fu = np.clip(uv[:, 0], 0.0, 1.0) * (r - 1)
    fv = np.clip(uv[:, 1], 0.0, 1.0) * (r - 1)
    i0 = np.clip(np.floor(fu).astype(np.int64), 0, r - 2)
    j0 = np.clip(np.floor(fv).astype(np.int64), 0, r - 2)
    a = (fu - i0).astype(plane.dtype)[:, None]
    b = (fv - j0).astype(plane.dtype)[:, None]
    i1, j1 = i0 + 1, j0 + 1

    p = plane.data
    w00, w01, w10, w11 = (1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b
    out = w00 * p[i0, j0] + w01 * p[i0, j1] + w10 * p[i1, j0] + w11 * p[i1, j1]

    def vjp(g: np.ndarray, needs: tuple[bool, ...]) -> list[np.ndarray]:
        gp = np.zeros_like(p)
        np.add.at(gp, (i0, j0), w00 * g)
        np.add.at(gp, (i0, j1), w01 * g)
        np.add.at(gp, (i1, j0), w10 * g)
        np.add.at(gp, (i1, j1), w11 * g)
        return [gp]

    return emit("bilinear_sample", (plane,), out, vjp)


# =============================================================================
# Composites
# =============================================================================


def scaled_dot_product_attention(q: Any, k: Any, v: Any) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(
            f"scaled_dot_product_attention: q {q.shape}, k {k.shape}, v {v.shape} incompatible"
        )
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = mul(matmul(q, swapaxes(k, -1, -2)), scale)
    return matmul(softmax(scores, axis=-1), v)


def exclusive_cumsum(x: Any, axis: int = -1) -> Tensor:
    """Cumulative sum that excludes the current element (first entry is zero)."""
    x = as_tensor(x)
    return sub(cumsum(x, axis=axis), x)


def sum_all(tensors: Sequence[Tensor]) -> Tensor:
    """Add a sequence of scalar tensors."""
    if not tensors:
        raise ShapeError("sum_all: no inputs")
    return builtins.sum(tensors[1:], start=tensors[0])
