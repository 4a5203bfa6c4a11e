"""
TEST DOC: Differentiable Primitives

WHAT: Forward values and reverse rules of the diffcore primitive set
WHY: Every trainable and guidable computation is composed from these primitives
HOW: Compare forward values with direct numpy oracles and reverse rules with central
    finite differences in 64-bit

CASES:
- Elementwise, reductions and cumulative sums match their definitions
- Convolution matches a brute-force loop, 1x1 kernels act elementwise
- Bilinear sampling at grid nodes, cell centers and random points
- Attention rows sum to one
- Every primitive passes grad_check below 1e-4

EDGE CASES:
- Out-of-range bilinear queries clamp to the border
- Shape mismatches raise ShapeError naming the primitive
- backward on a non-scalar output is rejected
- Mutating a tensor held by a live record is rejected
"""

from __future__ import annotations

import numpy as np
import pytest

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.gradcheck import grad_check
from triplane_posterior.diffcore.tensor import ShapeError, Tensor, backward, no_record, record

pytestmark = pytest.mark.usefixtures("f64")

GRAD_TOL = 1e-4


def _t(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _direct_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    kh, kw, _, cout = w.shape
    n, h, wd, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    out = np.zeros((n, ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw, :]
            out[:, i, j, :] = np.einsum("nhwc,hwcd->nd", patch, w) + b
    return out


class TestForwardValues:
    """Primitive outputs against their definitions."""

    def test_exp_of_zero(self) -> None:
        assert ops.exp(Tensor(np.zeros(3))).data == pytest.approx([1.0, 1.0, 1.0])

    def test_cumsum(self) -> None:
        out = ops.cumsum(Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [1.0, 3.0, 6.0])

    def test_cumsum_then_difference_recovers_input(self, rng: np.random.Generator) -> None:
        x = rng.normal(size=(4, 50))
        c = ops.cumsum(Tensor(x), axis=1).data
        recovered = np.diff(c, axis=1, prepend=0.0)
        np.testing.assert_allclose(recovered, x, atol=1e-12)

    def test_exclusive_cumsum_starts_at_zero(self) -> None:
        out = ops.exclusive_cumsum(Tensor([[1.0, 2.0, 3.0]]))
        np.testing.assert_allclose(out.data, [[0.0, 1.0, 3.0]])

    def test_operators_match_numpy(self, rng: np.random.Generator) -> None:
        a, b = rng.normal(size=(3, 4)), rng.uniform(0.5, 2.0, size=(3, 4))
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_allclose((ta + tb).data, a + b)
        np.testing.assert_allclose((ta - tb).data, a - b)
        np.testing.assert_allclose((ta * tb).data, a * b)
        np.testing.assert_allclose((ta / tb).data, a / b)
        np.testing.assert_allclose((-ta).data, -a)
        np.testing.assert_allclose((tb**1.5).data, b**1.5)

    def test_conv_matches_direct_loop(self, rng: np.random.Generator) -> None:
        x, w, b = rng.normal(size=(2, 5, 6, 3)), rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
        for stride in (1, 2):
            out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride)
            np.testing.assert_allclose(out.data, _direct_conv(x, w, b, stride), atol=1e-12)

    def test_one_by_one_conv_is_elementwise(self, rng: np.random.Generator) -> None:
        m = rng.normal(size=(1, 4, 4, 1))
        out = ops.conv2d(Tensor(m), Tensor(np.full((1, 1, 1, 1), 2.5)))
        np.testing.assert_allclose(out.data, 2.5 * m)

    def test_upsample_nearest(self) -> None:
        x = np.arange(4.0).reshape(1, 2, 2, 1)
        out = ops.upsample_nearest(Tensor(x), 2).data[0, :, :, 0]
        np.testing.assert_array_equal(out[:2, :2], np.zeros((2, 2)))
        np.testing.assert_array_equal(out[2:, 2:], np.full((2, 2), 3.0))

    def test_group_norm_normalizes_groups(self, rng: np.random.Generator) -> None:
        x = rng.normal(3.0, 2.0, size=(2, 4, 4, 6))
        out = ops.group_norm(Tensor(x), 3, Tensor(np.ones(6)), Tensor(np.zeros(6))).data
        grouped = out.reshape(2, -1, 3, 2)
        np.testing.assert_allclose(grouped.mean(axis=(1, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(grouped.var(axis=(1, 3)), 1.0, atol=1e-3)

    def test_attention_rows_sum_to_one(self, rng: np.random.Generator) -> None:
        scores = _t(rng, 2, 5, 7)
        weights = ops.softmax(scores, axis=-1).data
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)

    def test_attention_with_identical_keys_averages_values(self, rng: np.random.Generator) -> None:
        q = _t(rng, 1, 3, 4)
        k = Tensor(np.ones((1, 5, 4)))
        v = _t(rng, 1, 5, 2)
        out = ops.scaled_dot_product_attention(q, k, v).data
        np.testing.assert_allclose(out, np.broadcast_to(v.data.mean(axis=1, keepdims=True), out.shape))


class TestBilinearSample:
    """Tri-plane feature lookup."""

    def test_grid_node_returns_node_feature(self, rng: np.random.Generator) -> None:
        plane = rng.normal(size=(5, 5, 3))
        uv = np.array([[2 / 4, 3 / 4], [0.0, 0.0], [1.0, 1.0]])
        out = ops.bilinear_sample(Tensor(plane), uv).data
        np.testing.assert_allclose(out[0], plane[2, 3], atol=1e-12)
        np.testing.assert_allclose(out[1], plane[0, 0], atol=1e-12)
        np.testing.assert_allclose(out[2], plane[4, 4], atol=1e-12)

    def test_cell_center_is_mean_of_corners(self, rng: np.random.Generator) -> None:
        plane = rng.normal(size=(4, 4, 2))
        uv = np.array([[1.5 / 3, 0.5 / 3]])
        out = ops.bilinear_sample(Tensor(plane), uv).data[0]
        expected = (plane[1, 0] + plane[1, 1] + plane[2, 0] + plane[2, 1]) / 4
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_random_queries_match_closed_form(self, rng: np.random.Generator) -> None:
        r = 6
        plane = rng.normal(size=(r, r, 4))
        uv = rng.uniform(0, 1, size=(20, 2))
        out = ops.bilinear_sample(Tensor(plane), uv).data
        for p in range(20):
            fu, fv = uv[p] * (r - 1)
            i, j = min(int(fu), r - 2), min(int(fv), r - 2)
            a, b = fu - i, fv - j
            expected = (
                (1 - a) * (1 - b) * plane[i, j]
                + (1 - a) * b * plane[i, j + 1]
                + a * (1 - b) * plane[i + 1, j]
                + a * b * plane[i + 1, j + 1]
            )
            np.testing.assert_allclose(out[p], expected, atol=1e-12)

    def test_out_of_range_clamps_to_border(self, rng: np.random.Generator) -> None:
        plane = rng.normal(size=(3, 3, 2))
        out = ops.bilinear_sample(Tensor(plane), np.array([[-0.5, 1.7]])).data[0]
        np.testing.assert_allclose(out, plane[0, 2], atol=1e-12)

    def test_bad_uv_shape(self) -> None:
        with pytest.raises(ShapeError, match="bilinear_sample"):
            ops.bilinear_sample(Tensor(np.zeros((3, 3, 1))), np.zeros((4, 3)))


class TestGradients:
    """Reverse rules against central finite differences."""

    @pytest.mark.parametrize(
        "fn",
        [
            lambda a, b: ops.sum(ops.mul(ops.add(a, b), ops.sub(a, b))),
            lambda a, b: ops.sum(ops.div(a, ops.add(ops.exp(b), 1.0))),
            lambda a, b: ops.sum(ops.mul(ops.power(ops.exp(a), 1.5), b)),
            lambda a, b: ops.sum(ops.mul(ops.silu(a), ops.sigmoid(b))),
            lambda a, b: ops.sum(ops.mul(ops.softplus(a), ops.log(ops.add(ops.exp(b), 1.0)))),
            lambda a, b: ops.sum(ops.mul(ops.softmax(a, axis=-1), b)),
            lambda a, b: ops.sum(ops.mul(ops.cumsum(a, axis=1), b)),
            lambda a, b: ops.mean(ops.matmul(a, ops.transpose(b, (1, 0)))),
            lambda a, b: ops.sum(ops.mul(ops.reshape(a, (4, 3)), ops.reshape(b, (4, 3)))),
            lambda a, b: ops.sum(ops.concat([a, ops.take(b, slice(0, 2))], axis=0)),
            lambda a, b: ops.sum(ops.mul(ops.neg(a), ops.square(b))),
        ],
    )
    def test_elementwise_and_shape_primitives(self, fn, rng: np.random.Generator) -> None:
        a, b = _t(rng, 3, 4), _t(rng, 3, 4)
        assert grad_check(fn, [a, b]) < GRAD_TOL

    def test_relu_away_from_kink(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.choice([-1.0, 1.0], size=(3, 3)) * rng.uniform(0.1, 1.0, size=(3, 3)))
        assert grad_check(lambda v: ops.sum(ops.square(ops.relu(v))), [x]) < GRAD_TOL

    @pytest.mark.parametrize("stride", [1, 2])
    def test_conv2d(self, stride: int, rng: np.random.Generator) -> None:
        x, w, b = _t(rng, 2, 4, 4, 3), _t(rng, 3, 3, 3, 2), _t(rng, 2)
        target = rng.normal(size=(2, 4 // stride, 4 // stride, 2))

        def loss(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
            return ops.sum(ops.square(ops.sub(ops.conv2d(x, w, b, stride=stride), target)))

        assert grad_check(loss, [x, w, b]) < GRAD_TOL

    def test_upsample_and_group_norm(self, rng: np.random.Generator) -> None:
        x, gamma, beta = _t(rng, 2, 2, 2, 4), _t(rng, 4), _t(rng, 4)
        weights = rng.normal(size=(2, 4, 4, 4))

        def loss(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
            y = ops.group_norm(ops.upsample_nearest(x, 2), 2, gamma, beta)
            return ops.sum(ops.mul(y, weights))

        assert grad_check(loss, [x, gamma, beta]) < GRAD_TOL

    def test_bilinear_sample_plane_gradient(self, rng: np.random.Generator) -> None:
        plane = _t(rng, 5, 5, 3)
        uv = rng.uniform(-0.1, 1.1, size=(30, 2))
        weights = rng.normal(size=(30, 3))
        assert grad_check(lambda p: ops.sum(ops.mul(ops.bilinear_sample(p, uv), weights)), [plane]) < GRAD_TOL

    def test_attention(self, rng: np.random.Generator) -> None:
        q, k, v = _t(rng, 2, 5, 4), _t(rng, 2, 6, 4), _t(rng, 2, 6, 3)
        weights = rng.normal(size=(2, 5, 3))

        def loss(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
            return ops.sum(ops.mul(ops.scaled_dot_product_attention(q, k, v), weights))

        assert grad_check(loss, [q, k, v]) < GRAD_TOL

    def test_linear_function_is_exact(self, rng: np.random.Generator) -> None:
        x = _t(rng, 10)
        weights = rng.normal(size=10)
        assert grad_check(lambda v: ops.sum(ops.mul(v, weights)), [x]) < 1e-10

    def test_sum_gives_ones_and_square_gives_2x(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        with record() as rec:
            out = ops.sum(x)
        np.testing.assert_array_equal(backward(rec, out).wrt(x), np.ones((2, 3)))
        with record() as rec:
            out = ops.sum(ops.mul(x, x))
        np.testing.assert_allclose(backward(rec, out).wrt(x), 2 * x.data)

    def test_backward_is_deterministic(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

        def run() -> np.ndarray:
            with record() as rec:
                out = ops.sum(ops.mul(ops.softmax(ops.matmul(x, x), axis=-1), x))
            return backward(rec, out).wrt(x)

        np.testing.assert_array_equal(run(), run())


class TestErrors:
    """Rejected inputs."""

    def test_shape_mismatch_names_primitive(self) -> None:
        with pytest.raises(ShapeError, match="matmul"):
            ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_conv_channel_mismatch(self) -> None:
        with pytest.raises(ShapeError, match="conv2d"):
            ops.conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((3, 3, 2, 1))))

    def test_backward_requires_scalar(self) -> None:
        x = Tensor(np.ones(3), requires_grad=True)
        with record() as rec:
            out = ops.mul(x, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            backward(rec, out)

    def test_mutation_during_live_record(self) -> None:
        x = Tensor(np.ones(3), requires_grad=True)
        with record():
            ops.sum(ops.mul(x, x))
            with pytest.raises(RuntimeError, match="live computation record"):
                x.assign(np.zeros(3))
        x.assign(np.zeros(3))
        np.testing.assert_array_equal(x.data, np.zeros(3))

    def test_no_record_builds_no_graph(self) -> None:
        x = Tensor(np.ones(3), requires_grad=True)
        with record() as rec:
            with no_record():
                ops.sum(ops.mul(x, x))
        assert len(rec) == 0
