import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gf2 import tensor as T
from gf2.errors import BrokenTape, NonFiniteValue, NonScalarLoss, ShapeMismatch
from gf2.gradcheck import check_gradients
from gf2.rng import Rng
from gf2.tensor import Tensor


def r(label="x"):
    return Rng(0).child(label)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), a)
        assert np.array_equal(out.data, a.data)

    def test_hand_case(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradients_10_instances(self):
        for i in range(10):
            rng = r(f"mm{i}")
            w = rng.normal((5, 3))

            def f(ts):
                return T.tsum(T.mul(T.matmul(ts[0], ts[1]), Tensor(w)))

            check_gradients(f, [rng.normal((5, 7)), rng.normal((7, 3))], tol=1e-3)


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, 1 / 3, atol=1e-7)

    def test_forced_by_definition(self):
        out = T.softmax(Tensor([math.log(3.0), 0.0]))
        assert np.allclose(out.data, [0.75, 0.25], atol=1e-6)

    def test_large_magnitudes_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0]))
        assert out.data[0] == pytest.approx(1.0)
        assert out.data[1] < 1e-30

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rows_sum_to_one(self, seed):
        x = Rng(seed).child("sm").normal((4, 6), std=5.0)
        out = T.softmax(Tensor(x), axis=-1)
        assert np.abs(out.data.sum(axis=-1) - 1).max() < 1e-6
        assert (out.data > 0).all()

    def test_gradient(self):
        for i in range(10):
            rng = r(f"sm{i}")
            w = rng.normal((3, 5))

            def f(ts):
                return T.tsum(T.mul(T.softmax(ts[0], axis=-1), Tensor(w)))

            check_gradients(f, [rng.normal((3, 5))], tol=1e-3)


class TestLayernorm:
    def test_two_point(self):
        out = T.layernorm(Tensor([1.0, 3.0]), eps=1e-12)
        assert np.allclose(out.data, [-1.0, 1.0], atol=1e-4)

    def test_constant_slice(self):
        out = T.layernorm(Tensor([5.0, 5.0, 5.0]), eps=1e-5)
        assert np.allclose(out.data, 0.0)

    def test_mean_near_zero(self):
        x = r("ln").normal((4, 8), std=3.0)
        out = T.layernorm(Tensor(x), axis=-1)
        assert np.abs(out.data.mean(axis=-1)).max() < 1e-5

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            T.layernorm(Tensor([1.0, 2.0]), eps=0.0)

    def test_gradient_4x8(self):
        for i in range(10):
            rng = r(f"ln{i}")
            w = rng.normal((4, 8))

            def f(ts):
                return T.tsum(T.mul(T.layernorm(ts[0], axis=-1), Tensor(w)))

            check_gradients(f, [rng.normal((4, 8))], tol=1e-3)


class TestConv2d:
    def test_all_ones_window_sum(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, w, stride=1, pad=0)
        assert out.data.reshape(-1).tolist() == [9.0]

    def test_identity_kernel(self):
        k = np.zeros((2, 2, 3, 3), dtype=np.float32)
        k[0, 0, 1, 1] = 1.0
        k[1, 1, 1, 1] = 1.0
        x = r("conv").normal((1, 2, 5, 5))
        out = T.conv2d(Tensor(x), Tensor(k), stride=1, pad=1)
        assert np.allclose(out.data, x, atol=1e-7)

    def test_output_extent(self):
        x = Tensor(np.zeros((1, 1, 9, 9)))
        w = Tensor(np.zeros((1, 1, 3, 3)))
        assert T.conv2d(x, w, stride=2, pad=1).shape == (1, 1, 5, 5)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_gradients(self, stride, pad):
        # small instances: f32 forward precision must stay below the FD tolerance
        for i in range(3):
            rng = r(f"conv{stride}{pad}{i}")
            oh = (6 + 2 * pad - 3) // stride + 1
            w = rng.normal((1, 3, oh, oh))

            def f(ts):
                return T.tmean(T.mul(T.conv2d(ts[0], ts[1], stride=stride, pad=pad),
                                     Tensor(w)))

            check_gradients(f, [rng.normal((1, 2, 6, 6)), rng.normal((3, 2, 3, 3)) * 0.4],
                            tol=1e-3)


class TestUpsample:
    def test_factor_one_identity(self):
        x = r("up").normal((2, 3, 4, 4))
        assert np.array_equal(T.upsample_nearest(Tensor(x), 1).data, x)

    def test_blocks(self):
        out = T.upsample_nearest(Tensor([[1.0, 2.0], [3.0, 4.0]]), 2)
        expected = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
        assert out.data.tolist() == expected

    def test_conservation(self):
        x = r("up2").normal((2, 8, 8))
        out = T.upsample_nearest(Tensor(x), 3)
        assert out.data.sum() == pytest.approx(9 * x.sum(), rel=1e-5)

    def test_gradient_is_block_sum(self):
        x = Tensor(r("up3").normal((1, 2, 2)), requires_grad=True)
        T.tsum(T.upsample_nearest(x, 2)).backward()
        assert np.allclose(x.grad, 4.0)


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(r("b1").normal((3, 4)), requires_grad=True)
        T.tsum(x).backward()
        assert np.allclose(x.grad, 1.0)

    def test_square_grad(self):
        x = Tensor(r("b2").normal((5,)), requires_grad=True)
        T.tsum(T.mul(x, x)).backward()
        assert np.allclose(x.grad, 2 * x.data, atol=1e-6)

    def test_fanout_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = T.add(T.mul(x, 3.0), T.mul(x, 4.0))
        T.tsum(y).backward()
        assert x.grad.tolist() == [7.0]

    def test_non_scalar_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(NonScalarLoss):
            T.mul(x, 2.0).backward()

    def test_detached_loss_raises_broken_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = T.tsum(x).detach()
        with pytest.raises(BrokenTape):
            loss.backward()

    def test_nan_raises(self):
        with pytest.raises(NonFiniteValue):
            T.tlog(Tensor([-1.0]))

    def test_double_backward(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = T.tsum(T.mul(T.mul(x, x), x))  # sum x^3
        (gx,) = T.grad(y, [x], create_graph=True)
        T.tsum(T.mul(gx, gx)).backward()  # sum 9x^4 -> 36x^3
        assert np.allclose(x.grad, 36 * x.data ** 3, rtol=1e-5)

    def test_determinism_bit_identical(self):
        def run():
            rng = Rng(123).child("det")
            x = Tensor(rng.normal((4, 6)), requires_grad=True)
            w = Tensor(rng.normal((6, 5)), requires_grad=True)
            out = T.softmax(T.matmul(T.layernorm(x, axis=-1), w), axis=-1)
            T.tsum(T.mul(out, out)).backward()
            return x.grad.tobytes(), w.grad.tobytes(), out.data.tobytes()

        assert run() == run()


class TestMisc:
    def test_maximum_routes_gradient(self):
        a = Tensor(np.array([1.0, 5.0]), requires_grad=True)
        b = Tensor(np.array([3.0, 2.0]), requires_grad=True)
        T.tsum(T.maximum(a, b)).backward()
        assert a.grad.tolist() == [0.0, 1.0]
        assert b.grad.tolist() == [1.0, 0.0]

    def test_concat_split_roundtrip(self):
        a = Tensor(r("c1").normal((2, 3)), requires_grad=True)
        b = Tensor(r("c2").normal((2, 5)), requires_grad=True)
        out = T.concat([a, b], axis=1)
        T.tsum(T.mul(out, out)).backward()
        assert np.allclose(a.grad, 2 * a.data, atol=1e-6)
        assert np.allclose(b.grad, 2 * b.data, atol=1e-6)

    def test_take_rows_accumulates(self):
        table = Tensor(np.ones((4, 2)), requires_grad=True)
        out = T.take_rows(table, np.array([1, 1, 3]))
        T.tsum(out).backward()
        assert table.grad[:, 0].tolist() == [0.0, 2.0, 0.0, 1.0]

    def test_avg_pool(self):
        x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
        out = T.avg_pool2d(x, 2)
        assert out.data.reshape(-1).tolist() == [2.5, 4.5, 10.5, 12.5]

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_composite_op_gradcheck(self, seed):
        rng = Rng(seed).child("comp")
        w = rng.normal((6, 4))

        def f(ts):
            h = T.leaky_relu(T.matmul(ts[0], Tensor(w)), 0.2)
            return T.tsum(T.mul(T.sigmoid(h), T.tanh(h)))

        check_gradients(f, [rng.normal((3, 6))], tol=2e-3)


class TestRng:
    def test_same_seed_bit_identical(self):
        a = Rng(7).child("s").normal((100,))
        b = Rng(7).child("s").normal((100,))
        assert np.array_equal(a, b)

    def test_child_independent_of_call_order(self):
        r1 = Rng(7)
        _ = r1.child("noise").normal((50,))
        a = r1.child("data").normal((10,))
        r2 = Rng(7)
        b = r2.child("data").normal((10,))
        assert np.array_equal(a, b)

    def test_state_roundtrip(self):
        rng = Rng(3).child("x")
        rng.normal((17,))
        snap = rng.get_state()
        a = rng.normal((9,))
        b = Rng.from_state(snap).normal((9,))
        assert np.array_equal(a, b)
