"""
TEST DOC: Adam, Parameter Stores, Precision and Checkpoints

WHAT: Optimizer updates, parameter sharing views, precision contexts and the
    named-tensor checkpoint format
WHY: Training and sampling rely on exact optimizer arithmetic and bit-exact persistence
HOW: Hand-evaluated Adam formulas, direct byte comparisons of checkpoint files

CASES:
- One Adam step from zero state moves by -lr * g / (|g| + eps)
- Constant gradients drive the update towards lr * sign(g)
- Zero gradients leave parameters unchanged
- Shadow stores share arrays, frozen stores need no gradients
- Checkpoints round-trip bit-exactly with metadata
- Layer helpers (residual block, attention) pass gradient checks

EDGE CASES:
- Non-finite gradients: step rejected, counter not advanced
- Corrupt or truncated checkpoint files raise CheckpointError
- Missing checkpoint raises FileNotFoundError
- Unsupported precision is rejected
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from triplane_posterior.diffcore import nn, ops
from triplane_posterior.diffcore.checkpoint import (
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    file_digest,
    load_checkpoint,
    save_checkpoint,
)
from triplane_posterior.diffcore.gradcheck import grad_check
from triplane_posterior.diffcore.nn import ParamStore, group_count
from triplane_posterior.diffcore.optim import AdamState, adam_step
from triplane_posterior.diffcore.tensor import Tensor, default_dtype, precision


class TestAdam:
    """Bias-corrected Adam updates."""

    @pytest.mark.usefixtures("f64")
    def test_first_step_formula(self) -> None:
        p = Tensor(np.zeros(3), requires_grad=True)
        g = np.array([0.5, -2.0, 1e-3])
        state = AdamState.for_params({"p": p})
        assert adam_step({"p": p}, {"p": g}, state, lr=0.1)
        expected = -0.1 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=1e-12)
        assert state.step == 1

    @pytest.mark.usefixtures("f64")
    def test_constant_gradient_update_approaches_lr(self) -> None:
        p = Tensor(np.zeros(2), requires_grad=True)
        state = AdamState.for_params({"p": p})
        g = np.array([3.0, -0.2])
        before = p.data.copy()
        for _ in range(500):
            before = p.data.copy()
            adam_step({"p": p}, {"p": g}, state, lr=1e-2)
        np.testing.assert_allclose(before - p.data, 1e-2 * np.sign(g), rtol=1e-3)

    @pytest.mark.usefixtures("f64")
    def test_zero_gradient_keeps_parameters_and_decays_moments(self) -> None:
        p = Tensor(np.ones(2), requires_grad=True)
        state = AdamState.for_params({"p": p})
        state.m["p"] = np.array([1.0, 1.0])
        adam_step({"p": p}, {"p": np.zeros(2)}, state, lr=1e-2)
        # the existing first moment still moves p; zero moments would not
        assert np.all(np.abs(state.m["p"]) < 1.0)

        q = Tensor(np.ones(2), requires_grad=True)
        fresh = AdamState.for_params({"q": q})
        adam_step({"q": q}, {"q": np.zeros(2)}, fresh, lr=1e-2)
        np.testing.assert_array_equal(q.data, np.ones(2))

    def test_non_finite_gradient_rejected(self) -> None:
        p = Tensor(np.ones(2), requires_grad=True)
        state = AdamState.for_params({"p": p})
        assert not adam_step({"p": p}, {"p": np.array([np.nan, 1.0])}, state, lr=1e-2)
        assert state.step == 0
        np.testing.assert_array_equal(p.data, np.ones(2))

    def test_moment_shape_mismatch(self) -> None:
        p = Tensor(np.ones(3), requires_grad=True)
        state = AdamState(m={"p": np.zeros(2)}, v={"p": np.zeros(2)})
        with pytest.raises(ValueError, match="shape"):
            adam_step({"p": p}, {"p": np.ones(3)}, state, lr=1e-2)


class TestParamStore:
    """Parameter views used by worker threads and frozen networks."""

    def test_shadow_shares_arrays(self) -> None:
        store = ParamStore()
        store.add("a.w", np.ones((2, 2)))
        shadow = store.shadow()
        assert shadow["a.w"].data is store["a.w"].data
        assert shadow["a.w"].node != store["a.w"].node
        assert shadow["a.w"].requires_grad

    def test_frozen_needs_no_gradients(self) -> None:
        store = ParamStore()
        store.add("a.w", np.ones(3))
        frozen = store.frozen()
        assert not frozen["a.w"].requires_grad
        assert frozen["a.w"].data is store["a.w"].data

    def test_group_and_duplicate_names(self) -> None:
        store = ParamStore()
        store.add("d1.w", np.ones(1))
        store.add("d2.w", np.ones(1))
        assert list(store.group("d1")) == ["d1.w"]
        with pytest.raises(KeyError):
            store.add("d1.w", np.ones(1))

    def test_load_arrays_checks_shapes(self) -> None:
        store = ParamStore()
        store.add("w", np.ones(2))
        with pytest.raises(ValueError, match="shape"):
            store.load_arrays({"w": np.ones(3)})
        with pytest.raises(KeyError):
            store.load_arrays({})

    def test_group_count(self) -> None:
        assert group_count(4) == 4
        assert group_count(24) == 8
        assert group_count(6) == 2


@pytest.mark.usefixtures("f64")
class TestLayers:
    """Residual and attention blocks as composed graphs."""

    def test_resblock_with_time_embedding(self, rng: np.random.Generator) -> None:
        store = ParamStore()
        nn.init_resblock(store, "block", 4, 6, rng, temb_dim=5)
        x = Tensor(rng.normal(size=(2, 3, 3, 4)))
        temb = Tensor(rng.normal(size=(2, 5)))
        weights = rng.normal(size=(2, 3, 3, 6))
        params = [store[name] for name in ("block.conv1.w", "block.temb.w", "block.skip.w")]

        def loss(x: Tensor, temb: Tensor, *_: Tensor) -> Tensor:
            return ops.sum(ops.mul(nn.resblock(store, "block", x, groups=2, temb=temb), weights))

        assert grad_check(loss, [x, temb, *params], max_coords=20, atol=1e-8) < 1e-4

    def test_attention_block(self, rng: np.random.Generator) -> None:
        store = ParamStore()
        nn.init_attention(store, "attn", 4, rng)
        x = Tensor(rng.normal(size=(1, 2, 3, 4)))
        weights = rng.normal(size=(1, 2, 3, 4))

        def loss(x: Tensor, *_: Tensor) -> Tensor:
            return ops.sum(ops.mul(nn.attention(store, "attn", x, heads=2, groups=2), weights))

        assert grad_check(loss, [x, store["attn.qkv.w"], store["attn.proj.w"]], atol=1e-8) < 1e-4


class TestPrecision:
    """Context-local default dtype."""

    def test_default_is_float32(self) -> None:
        assert default_dtype() == np.float32

    def test_context_switches_and_restores(self) -> None:
        with precision("float64"):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_unsupported_precision(self) -> None:
        with pytest.raises(ValueError, match="Unsupported precision"):
            with precision("float16"):
                pass


class TestCheckpoint:
    """Named-tensor checkpoint files."""

    def test_round_trip_is_bit_exact(self, temp_dir: Path, rng: np.random.Generator) -> None:
        tensors = {
            "d1.w": rng.normal(size=(3, 3, 4, 8)),
            "latent.scene_0001": rng.normal(size=256).astype(np.float32),
            "steps": np.arange(5, dtype=np.int64),
        }
        path = save_checkpoint(temp_dir / "model.ckpt", tensors, {"profile": "desk", "iteration": 7})
        loaded = load_checkpoint(path)
        assert loaded.metadata == {"profile": "desk", "iteration": 7}
        for name, value in tensors.items():
            assert loaded.tensors[name].dtype == value.dtype
            assert loaded.tensors[name].tobytes() == value.tobytes()
        assert list(loaded.group("latent")) == ["latent.scene_0001"]

    def test_rewriting_gives_identical_bytes(self, temp_dir: Path) -> None:
        tensors = {"b": np.ones(2), "a": np.zeros((2, 2))}
        first = save_checkpoint(temp_dir / "a.ckpt", tensors, {"x": 1})
        second = save_checkpoint(temp_dir / "b.ckpt", dict(reversed(list(tensors.items()))), {"x": 1})
        assert file_digest(first) == file_digest(second)

    def test_tensor_values_are_accepted(self) -> None:
        blob = encode_checkpoint({"t": Tensor(np.ones(3), dtype=np.float64)})
        np.testing.assert_array_equal(decode_checkpoint(blob).tensors["t"], np.ones(3))

    def test_bad_magic(self) -> None:
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"NOPE" + b"\x00" * 20)

    def test_truncated_file(self) -> None:
        blob = encode_checkpoint({"w": np.ones(100)})
        with pytest.raises(CheckpointError):
            decode_checkpoint(blob[:-10])

    def test_unsupported_dtype(self) -> None:
        with pytest.raises(CheckpointError, match="Unsupported dtype"):
            encode_checkpoint({"flags": np.ones(2, dtype=bool)})

    def test_missing_file(self, temp_dir: Path) -> None:
        with pytest.raises(FileNotFoundError, match="missing.ckpt"):
            load_checkpoint(temp_dir / "missing.ckpt")
