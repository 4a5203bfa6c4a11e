"""
Named parameter storage and layer helpers built from diffcore primitives.

PURPOSE: Parameter bookkeeping plus the layer vocabulary shared by D1, D2 and the U-Net
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- ParamStore maps dotted names ("d1.block0.conv1.w") to Tensors in insertion order
- Layer helpers come in pairs: init_* registers parameters, the bare name applies them
- shadow() hands a worker its own Tensors over the same arrays so concurrent records
  never pin the shared parameters; gradients are then gathered by name
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping

import numpy as np

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.tensor import Tensor, default_dtype


class ParamStore:
    """Ordered mapping from dotted parameter names to tensors."""

    def __init__(self, params: Mapping[str, Tensor] | None = None) -> None:
        self._params: dict[str, Tensor] = dict(params or {})

    def add(self, name: str, values: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"Parameter already registered: {name}")
        tensor = Tensor(values, requires_grad=trainable, name=name, dtype=default_dtype())
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def group(self, prefix: str) -> dict[str, Tensor]:
        """Parameters whose name starts with prefix + '.'."""
        head = prefix + "."
        return {k: v for k, v in self._params.items() if k.startswith(head)}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite values from a name -> array map; names and shapes must match."""
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"Missing parameters: {', '.join(sorted(missing))}")
        for name, tensor in self._params.items():
            values = np.asarray(arrays[name])
            if values.shape != tensor.shape:
                raise ValueError(
                    f"Parameter {name} has shape {values.shape}, expected {tensor.shape}"
                )
            tensor.assign(values)

    def shadow(self) -> ParamStore:
        """Fresh tensors over the same arrays, still requiring gradients."""
        shadows: dict[str, Tensor] = {}
        for name, t in self._params.items():
            s = Tensor.wrap(t.data, requires_grad=t.requires_grad)
            s.name = name
            shadows[name] = s
        return ParamStore(shadows)

    def frozen(self) -> ParamStore:
        """Constant view: shares arrays, no tensor requires gradients."""
        frozen: dict[str, Tensor] = {}
        for name, t in self._params.items():
            f = Tensor.wrap(t.data, requires_grad=False)
            f.name = name
            frozen[name] = f
        return ParamStore(frozen)

    def copy(self) -> ParamStore:
        """Deep copy with independent arrays."""
        return ParamStore(
            {k: Tensor(v.data, requires_grad=v.requires_grad, name=k, dtype=v.dtype) for k, v in self._params.items()}
        )


def group_count(channels: int, preferred: int = 8) -> int:
    """Largest divisor of channels that does not exceed preferred."""
    return math.gcd(channels, preferred)


# =============================================================================
# Linear / conv / norm
# =============================================================================


def init_linear(
    store: ParamStore, name: str, fan_in: int, fan_out: int, rng: np.random.Generator, scale: float = 1.0
) -> None:
    store.add(f"{name}.w", rng.normal(0.0, scale / math.sqrt(fan_in), (fan_in, fan_out)))
    store.add(f"{name}.b", np.zeros(fan_out))


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return ops.add(ops.matmul(x, store[f"{name}.w"]), store[f"{name}.b"])


def init_conv(
    store: ParamStore,
    name: str,
    cin: int,
    cout: int,
    rng: np.random.Generator,
    kernel: int = 3,
    scale: float = 1.0,
) -> None:
    fan_in = kernel * kernel * cin
    store.add(f"{name}.w", rng.normal(0.0, scale / math.sqrt(fan_in), (kernel, kernel, cin, cout)))
    store.add(f"{name}.b", np.zeros(cout))


def conv(store: ParamStore, name: str, x: Tensor, stride: int = 1) -> Tensor:
    return ops.conv2d(x, store[f"{name}.w"], store[f"{name}.b"], stride=stride)


def init_norm(store: ParamStore, name: str, channels: int) -> None:
    store.add(f"{name}.gamma", np.ones(channels))
    store.add(f"{name}.beta", np.zeros(channels))


def norm(store: ParamStore, name: str, x: Tensor, groups: int) -> Tensor:
    return ops.group_norm(x, groups, store[f"{name}.gamma"], store[f"{name}.beta"])


# =============================================================================
# Residual and attention blocks
# =============================================================================


def init_resblock(
    store: ParamStore,
    name: str,
    cin: int,
    cout: int,
    rng: np.random.Generator,
    temb_dim: int | None = None,
) -> None:
    """GroupNorm -> SiLU -> conv3x3 (+ time embedding) -> GroupNorm -> SiLU -> conv3x3, plus skip."""
    init_norm(store, f"{name}.norm1", cin)
    init_conv(store, f"{name}.conv1", cin, cout, rng)
    if temb_dim is not None:
        init_linear(store, f"{name}.temb", temb_dim, cout, rng)
    init_norm(store, f"{name}.norm2", cout)
    init_conv(store, f"{name}.conv2", cout, cout, rng, scale=0.5)
    if cin != cout:
        init_conv(store, f"{name}.skip", cin, cout, rng, kernel=1)


def resblock(
    store: ParamStore,
    name: str,
    x: Tensor,
    groups: int = 8,
    temb: Tensor | None = None,
) -> Tensor:
    cin = x.shape[-1]
    h = conv(store, f"{name}.conv1", ops.silu(norm(store, f"{name}.norm1", x, group_count(cin, groups))))
    cout = h.shape[-1]
    if temb is not None:
        # (N, temb_dim) -> (N, 1, 1, cout), broadcast over space
        t = linear(store, f"{name}.temb", ops.silu(temb))
        h = ops.add(h, ops.reshape(t, (t.shape[0], 1, 1, cout)))
    h = conv(store, f"{name}.conv2", ops.silu(norm(store, f"{name}.norm2", h, group_count(cout, groups))))
    skip = conv(store, f"{name}.skip", x) if f"{name}.skip.w" in store else x
    return ops.add(skip, h)


def init_attention(store: ParamStore, name: str, channels: int, rng: np.random.Generator) -> None:
    init_norm(store, f"{name}.norm", channels)
    init_linear(store, f"{name}.qkv", channels, 3 * channels, rng)
    init_linear(store, f"{name}.proj", channels, channels, rng, scale=0.5)


def attention(store: ParamStore, name: str, x: Tensor, heads: int = 1, groups: int = 8) -> Tensor:
    """Multi-head self-attention over the spatial positions of (N, H, W, C), residual."""
    n, h, w, c = x.shape
    if c % heads != 0:
        raise ValueError(f"{name}: {c} channels not divisible by {heads} heads")
    dh = c // heads
    y = norm(store, f"{name}.norm", x, group_count(c, groups))
    qkv = linear(store, f"{name}.qkv", ops.reshape(y, (n, h * w, c)))
    # (N, HW, 3, heads, dh) -> (3, N, heads, HW, dh)
    qkv = ops.transpose(ops.reshape(qkv, (n, h * w, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = ops.take(qkv, 0), ops.take(qkv, 1), ops.take(qkv, 2)
    out = ops.scaled_dot_product_attention(q, k, v)
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (n, h * w, c))
    out = linear(store, f"{name}.proj", out)
    return ops.add(x, ops.reshape(out, (n, h, w, c)))
