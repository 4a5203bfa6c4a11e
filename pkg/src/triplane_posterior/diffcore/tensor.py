"""
Tensor values and the computation record behind reverse-mode gradients.

PURPOSE: Hold array values, record executed primitives, run the reverse pass
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- A ComputationRecord is opened with ``with record() as rec:``; the active record is
  context-local, so each worker thread writes its own record (single-writer)
- Primitives append an entry only when a record is active and an input requires grad
- backward() visits entries exactly once, in reverse execution order, and returns a
  gradient map keyed by node id
- Tensors read by a live record cannot be mutated; parameter updates go through
  Tensor.assign() between records
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterator, Mapping, Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any

import numpy as np

# Vector-Jacobian product: (upstream gradient, which inputs need a gradient) -> input grads
VJP = Callable[[np.ndarray, tuple[bool, ...]], Sequence[np.ndarray | None]]

_node_ids = itertools.count(1)
_record_ids = itertools.count(1)
_default_dtype: ContextVar[np.dtype[Any]] = ContextVar(
    "triplane_default_dtype", default=np.dtype(np.float32)
)
_active_record: ContextVar[ComputationRecord | None] = ContextVar(
    "triplane_active_record", default=None
)


class ShapeError(ValueError):
    """Raised when a primitive receives operands with incompatible shapes."""


def default_dtype() -> np.dtype[Any]:
    """Return the floating-point dtype new tensors are created with."""
    return _default_dtype.get()


@contextmanager
def precision(dtype: str | type | np.dtype[Any]) -> Iterator[np.dtype[Any]]:
    """Temporarily switch the default tensor precision ("float32" or "float64")."""
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported precision: {resolved} (use float32 or float64)")
    token = _default_dtype.set(resolved)
    try:
        yield resolved
    finally:
        _default_dtype.reset(token)


def set_default_dtype(dtype: str | type | np.dtype[Any]) -> None:
    """Set the default precision for the current context (used by CLI commands)."""
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported precision: {resolved} (use float32 or float64)")
    _default_dtype.set(resolved)


class Tensor:
    """An array value that can take part in a computation record."""

    __slots__ = ("data", "requires_grad", "node", "name", "_live")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: Any = None,
    ) -> None:
        self.data: np.ndarray = np.array(data, dtype=dtype or default_dtype(), copy=True)
        self.requires_grad = requires_grad
        self.node = next(_node_ids)
        self.name = name
        self._live = 0

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> Tensor:
        """Wrap an existing array without copying or casting (primitive outputs)."""
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.node = next(_node_ids)
        tensor.name = None
        tensor._live = 0
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.data.dtype

    @property
    def is_live(self) -> bool:
        """True while a computation record holds this tensor."""
        return self._live > 0

    def numpy(self) -> np.ndarray:
        """Return the underlying array (no copy)."""
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        """Return a constant view sharing this tensor's data."""
        return Tensor.wrap(self.data, requires_grad=False)

    def assign(self, values: np.ndarray) -> None:
        """Overwrite values in place; rejected while a live record holds this tensor."""
        if self._live:
            raise RuntimeError(
                f"Cannot mutate tensor {self.name or self.node} while it participates "
                "in a live computation record"
            )
        self.data[...] = np.asarray(values, dtype=self.data.dtype).reshape(self.data.shape)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Operator sugar; the primitives live in diffcore.ops
    def __add__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.div(self, other)

    def __rtruediv__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.div(other, self)

    def __neg__(self) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.neg(self)

    def __pow__(self, exponent: float) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.power(self, exponent)

    def __matmul__(self, other: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.take(self, index)

    def reshape(self, *shape: Any) -> Tensor:
        from triplane_posterior.diffcore import ops

        if len(shape) == 1 and isinstance(shape[0], tuple | list):
            shape = tuple(shape[0])
        return ops.reshape(self, tuple(shape))

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def transpose(self, *axes: int) -> Tensor:
        from triplane_posterior.diffcore import ops

        return ops.transpose(self, tuple(axes) if axes else None)


def as_tensor(value: Any) -> Tensor:
    """Return value as a Tensor; non-tensors become constants in the default dtype."""
    if isinstance(value, Tensor):
        return value
    return Tensor.wrap(np.asarray(value, dtype=default_dtype()))


@dataclass
class RecordEntry:
    """One executed primitive: its inputs, its output and its reverse rule."""

    op: str
    inputs: tuple[int, ...]
    needs: tuple[bool, ...]
    output: int
    vjp: VJP


@dataclass
class ComputationRecord:
    """Append-only list of executed primitives, in execution order."""

    id: int = field(default_factory=lambda: next(_record_ids))
    entries: list[RecordEntry] = field(default_factory=list)
    _held: list[Tensor] = field(default_factory=list, repr=False)
    closed: bool = False

    def append(self, op: str, inputs: Sequence[Tensor], output: Tensor, vjp: VJP) -> None:
        """Record one primitive execution and pin its differentiable inputs."""
        if self.closed:
            raise RuntimeError("Cannot append to a closed computation record")
        for tensor in inputs:
            if tensor.requires_grad:
                tensor._live += 1
                self._held.append(tensor)
        self.entries.append(
            RecordEntry(
                op=op,
                inputs=tuple(t.node for t in inputs),
                needs=tuple(t.requires_grad for t in inputs),
                output=output.node,
                vjp=vjp,
            )
        )

    def release(self) -> None:
        """Close the record and unpin its tensors so they can be updated again."""
        for tensor in self._held:
            tensor._live -= 1
        self._held.clear()
        self.closed = True

    def __len__(self) -> int:
        return len(self.entries)


def active_record() -> ComputationRecord | None:
    """Return the record primitives currently append to, if any."""
    return _active_record.get()


@contextmanager
def record() -> Iterator[ComputationRecord]:
    """Open a computation record for the current context."""
    if _active_record.get() is not None:
        raise RuntimeError("A computation record is already active in this context")
    rec = ComputationRecord()
    token = _active_record.set(rec)
    try:
        yield rec
    finally:
        _active_record.reset(token)
        rec.release()


@contextmanager
def no_record() -> Iterator[None]:
    """Evaluate without recording even if a record is active (used by samplers)."""
    token = _active_record.set(None)
    try:
        yield
    finally:
        _active_record.reset(token)


def emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp: VJP) -> Tensor:
    """Create a primitive's output tensor and register its reverse rule if needed."""
    rec = _active_record.get()
    tracked = rec is not None and any(t.requires_grad for t in inputs)
    result = Tensor.wrap(out, requires_grad=tracked)
    if tracked and rec is not None:
        rec.append(op, inputs, result, vjp)
    return result


class Gradients(Mapping[int, np.ndarray]):
    """Gradient map from node id to array, indexable by node id or by Tensor."""

    def __init__(self, grads: dict[int, np.ndarray]) -> None:
        self._grads = grads

    def __getitem__(self, key: int | Tensor) -> np.ndarray:  # type: ignore[override]
        node = key.node if isinstance(key, Tensor) else key
        return self._grads[node]

    def __iter__(self) -> Iterator[int]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

    def __contains__(self, key: object) -> bool:
        node = key.node if isinstance(key, Tensor) else key
        return node in self._grads

    def wrt(self, tensor: Tensor) -> np.ndarray:
        """Gradient for tensor, zeros when the output does not depend on it."""
        grad = self._grads.get(tensor.node)
        if grad is None:
            return np.zeros_like(tensor.data)
        return grad


def backward(rec: ComputationRecord, output: Tensor) -> Gradients:
    """Run the reverse pass of rec from a scalar output."""
    if output.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape {output.shape}")

    grads: dict[int, np.ndarray] = {output.node: np.ones_like(output.data)}
    for entry in reversed(rec.entries):
        upstream = grads.pop(entry.output, None)
        if upstream is None:
            continue
        input_grads = entry.vjp(upstream, entry.needs)
        for node, needed, grad in zip(entry.inputs, entry.needs, input_grads):
            if not needed or grad is None:
                continue
            if node in grads:
                grads[node] = grads[node] + grad
            else:
                grads[node] = grad
    return Gradients(grads)
