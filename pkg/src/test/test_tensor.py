# std-lib imports
import math
import unittest

# 3 party imports
import numpy as np
from parameterized import parameterized

# project imports
from simic.core import functional as F
from simic.core.gradcheck import gradcheck, relative_error
from simic.core.tensor import Function, ShapeError, Tape, Tensor, no_grad


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


class BasisTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(42)

    def assertGradientsMatch(self, loss_fn, inputs, tolerance=1e-4):
        errors = gradcheck(loss_fn, inputs)
        for index, error in errors.items():
            self.assertLessEqual(error, tolerance, f"input {index}: relative error {error:.3e}")


class TestBackward(BasisTests):
    def test_sum_gives_ones(self):
        x = leaf(self.rng, 3, 4)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_fan_out_accumulates(self):
        x = leaf(self.rng, 5)
        (x + x).sum().backward()
        np.testing.assert_array_equal(x.grad, np.full(5, 2.0))

    def test_shared_intermediate(self):
        x = leaf(self.rng, 4)
        y = F.tanh(x)
        F.sum(F.mul(y, y)).backward()
        expected = 2.0 * np.tanh(x.data) * (1.0 - np.tanh(x.data) ** 2)
        np.testing.assert_allclose(x.grad, expected, rtol=1e-12)

    def test_non_scalar_loss_is_rejected(self):
        x = leaf(self.rng, 2, 2)
        with self.assertRaises(ShapeError):
            (x * 2.0).backward()

    def test_no_grad_records_nothing(self):
        x = leaf(self.rng, 3)
        with no_grad():
            y = F.relu(x)
        self.assertIsNone(y.node)
        self.assertFalse(y.requires_grad)

    def test_tape_is_topological(self):
        x = leaf(self.rng, 3)
        loss = F.sum(F.relu(F.mul(x, Tensor(2.0))))
        tape = Tape.build(loss)
        seen = set()
        for entry in tape.entries:
            for parent_id in entry.input_ids:
                producers = [e.output_id for e in tape.entries]
                if parent_id in producers:
                    self.assertIn(parent_id, seen)
            seen.add(entry.output_id)
        self.assertEqual(len(tape), 3)


class TestConv2d(BasisTests):
    def test_sum_of_ones(self):
        out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
        self.assertEqual(out.shape, (1, 1, 1, 1))
        self.assertEqual(out.item(), 9.0)

    def test_zero_weight_gives_bias(self):
        x = Tensor(self.rng.normal(size=(2, 2, 6, 6)))
        out = F.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.array([0.5, -1.0, 2.0])), padding=1)
        self.assertEqual(out.shape, (2, 3, 6, 6))
        for channel, value in enumerate((0.5, -1.0, 2.0)):
            np.testing.assert_array_equal(out.data[:, channel], value)

    @parameterized.expand([
        ("stride1_pad0", 1, 0),
        ("stride2_pad1", 2, 1),
    ])
    def test_gradients(self, name, stride, padding):
        x, w, b = leaf(self.rng, 1, 2, 5, 5), leaf(self.rng, 3, 2, 3, 3), leaf(self.rng, 3)
        self.assertGradientsMatch(lambda: F.sum(F.tanh(F.conv2d(x, w, b, stride, padding))), [x, w, b])

    def test_channel_mismatch(self):
        with self.assertRaises(ShapeError):
            F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))

    def test_kernel_larger_than_input(self):
        with self.assertRaises(ShapeError):
            F.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)))


class TestDepthwiseSeparableConv(BasisTests):
    def test_matches_dense_equivalent(self):
        x = Tensor(self.rng.normal(size=(2, 3, 5, 5)))
        dw = self.rng.normal(size=(3, 1, 3, 3))
        pw = self.rng.normal(size=(4, 3, 1, 1))
        bias = self.rng.normal(size=4)
        # dense kernel whose (f, c) slice is pw[f, c] * dw[c]
        dense = pw[:, :, 0, 0][:, :, None, None] * dw[:, 0][None, :, :, :]
        expected = F.conv2d(x, Tensor(dense), Tensor(bias), padding=1).data
        got = F.depthwise_separable_conv(x, Tensor(dw), Tensor(pw), Tensor(bias), padding=1).data
        np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-12)

    def test_gradients(self):
        x, dw, pw, b = (leaf(self.rng, 1, 2, 5, 5), leaf(self.rng, 2, 1, 3, 3),
                        leaf(self.rng, 3, 2, 1, 1), leaf(self.rng, 3))
        self.assertGradientsMatch(
            lambda: F.sum(F.tanh(F.depthwise_separable_conv(x, dw, pw, b, stride=2, padding=1))), [x, dw, pw, b])

    def test_channel_mismatch(self):
        with self.assertRaises(ShapeError):
            F.depthwise_separable_conv(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 1, 3, 3))),
                                       Tensor(np.zeros((1, 3, 1, 1))), Tensor(np.zeros(1)))


class TestLinear(BasisTests):
    def test_identity(self):
        x = Tensor(self.rng.normal(size=(4, 3)))
        np.testing.assert_array_equal(F.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)

    def test_zero_weight(self):
        out = F.linear(Tensor(self.rng.normal(size=(4, 3))), Tensor(np.zeros((2, 3))), Tensor(np.array([1.0, -2.0])))
        np.testing.assert_array_equal(out.data, np.tile([1.0, -2.0], (4, 1)))

    def test_gradients(self):
        x, w, b = leaf(self.rng, 4, 3), leaf(self.rng, 2, 3), leaf(self.rng, 2)
        self.assertGradientsMatch(lambda: F.sum(F.tanh(F.linear(x, w, b))), [x, w, b])

    def test_leading_dims(self):
        x, w = leaf(self.rng, 2, 5, 3), leaf(self.rng, 4, 3)
        self.assertEqual(F.linear(x, w).shape, (2, 5, 4))
        self.assertGradientsMatch(lambda: F.sum(F.tanh(F.linear(x, w))), [x, w])

    def test_dimension_mismatch(self):
        with self.assertRaises(ShapeError):
            F.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestBatchNorm(BasisTests):
    def test_constant_channel_normalizes_to_zero(self):
        x = Tensor(np.full((4, 1, 3, 3), 7.0))
        out = F.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), np.zeros(1), np.ones(1), training=True)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_eval_identity(self):
        x = Tensor(self.rng.normal(size=(2, 3, 4, 4)))
        out = F.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), training=False)
        np.testing.assert_allclose(out.data, x.data / math.sqrt(1.0 + 1e-5), rtol=1e-12)

    def test_running_stats_update(self):
        x = Tensor(self.rng.normal(loc=3.0, size=(4, 2, 3, 3)))
        mean, var = np.zeros(2), np.ones(2)
        F.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), mean, var, training=True, momentum=0.1)
        batch_mean = x.data.mean(axis=(0, 2, 3))
        batch_var = x.data.var(axis=(0, 2, 3), ddof=1)
        np.testing.assert_allclose(mean, 0.1 * batch_mean, rtol=1e-12)
        np.testing.assert_allclose(var, 0.9 + 0.1 * batch_var, rtol=1e-12)

    def test_single_sample_in_train_mode(self):
        with self.assertRaises(ValueError):
            F.batch_norm(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                         np.zeros(2), np.ones(2), training=True)

    def test_gradients_train_mode(self):
        x, gamma, beta = leaf(self.rng, 3, 2, 3, 3), leaf(self.rng, 2), leaf(self.rng, 2)
        target = Tensor(self.rng.normal(size=(3, 2, 3, 3)))

        def loss():
            out = F.batch_norm(x, gamma, beta, np.zeros(2), np.ones(2), training=True)
            return F.sum(F.mul(F.tanh(out), target))

        self.assertGradientsMatch(loss, [x, gamma, beta], tolerance=1e-3)


class TestSoftmax(BasisTests):
    def test_uniform(self):
        np.testing.assert_allclose(F.softmax(Tensor(np.full(4, 3.0))).data, [0.25] * 4)

    def test_shift_invariance(self):
        s = self.rng.normal(size=(3, 6))
        np.testing.assert_allclose(F.softmax(Tensor(s)).data, F.softmax(Tensor(s + 123.0)).data, atol=1e-12)

    def test_closed_form(self):
        np.testing.assert_allclose(F.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-12)

    def test_large_scores_stay_finite(self):
        out = F.softmax(Tensor([1000.0, 0.0])).data
        self.assertTrue(np.all(np.isfinite(out)))

    def test_nan_rejected(self):
        with self.assertRaises(ValueError):
            F.softmax(Tensor([0.0, float("nan")]))

    def test_gradients(self):
        s = leaf(self.rng, 2, 5)
        weights = Tensor(self.rng.normal(size=(2, 5)))
        self.assertGradientsMatch(lambda: F.sum(F.mul(F.softmax(s), weights)), [s])


class TestElementwiseGradients(BasisTests):
    @parameterized.expand([
        ("add_broadcast", lambda x, y: F.add(x, y), (3, 4), (4,)),
        ("sub", lambda x, y: F.sub(x, y), (3, 4), (3, 4)),
        ("mul_broadcast", lambda x, y: F.mul(x, y), (2, 3, 4), (3, 1)),
        ("matmul", lambda x, y: F.matmul(x, y), (3, 4), (4, 2)),
        ("matmul_vector", lambda x, y: F.matmul(x, y), (2, 3, 4), (4,)),
        ("batched_matmul", lambda x, y: F.matmul(x, y), (2, 3, 4), (2, 4, 5)),
        ("concat", lambda x, y: F.concat([x, y], axis=1), (2, 3), (2, 5)),
    ])
    def test_binary(self, name, op, x_shape, y_shape):
        x, y = leaf(self.rng, *x_shape), leaf(self.rng, *y_shape)
        self.assertGradientsMatch(lambda: F.sum(F.tanh(op(x, y))), [x, y])

    @parameterized.expand([
        ("relu", F.relu),
        ("tanh", F.tanh),
        ("mean_axis", lambda x: F.mean(x, axis=1)),
        ("reshape", lambda x: F.reshape(x, (4, 6))),
        ("transpose", lambda x: F.transpose(x, (2, 0, 1))),
        ("global_avg_pool", lambda x: F.global_avg_pool(F.reshape(x, (1, 2, 3, 4)))),
    ])
    def test_unary(self, name, op):
        x = leaf(self.rng, 2, 3, 4)
        w = Tensor(self.rng.normal(size=op(Tensor(x.data)).shape))
        self.assertGradientsMatch(lambda: F.sum(F.mul(op(x), w)), [x])

    def test_broadcast_mismatch(self):
        with self.assertRaises(ShapeError):
            F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


class TestHuberOp(BasisTests):
    @parameterized.expand([
        ("sum", "sum"),
        ("mean", "mean"),
    ])
    def test_gradients(self, name, reduction):
        # errors straddle the quadratic/linear boundary
        pred = Tensor(np.array([0.2, -0.7, 1.8, -2.5, 0.95]), requires_grad=True)
        target = Tensor(np.zeros(5))
        self.assertGradientsMatch(lambda: F.huber(pred, target, delta=1.0, reduction=reduction), [pred])


class TinyScale(Function):
    """Multiplies by 1e-7 and reports `slope` as its derivative."""

    slope = 1e-7

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x * 1e-7

    def backward(self, grad: np.ndarray):
        return (grad * self.slope,)


class WrongTinyScale(TinyScale):
    slope = 3e-7


class TestGradcheck(BasisTests):
    def test_relative_error_near_zero(self):
        self.assertAlmostEqual(relative_error(1e-7, 3e-7), 2.0 / 3.0)
        self.assertEqual(relative_error(0.0, 0.0), 0.0)
        # below the floor the error is absolute, scaled by 1/floor
        self.assertAlmostEqual(relative_error(0.0, 1e-12), 1e-6)

    def test_tiny_correct_gradient_passes(self):
        x = leaf(self.rng, 5)
        self.assertGradientsMatch(lambda: F.sum(TinyScale.apply(x)), [x])

    def test_tiny_wrong_gradient_is_flagged(self):
        x = leaf(self.rng, 5)
        errors = gradcheck(lambda: F.sum(WrongTinyScale.apply(x)), [x])
        self.assertGreater(errors[0], 0.1)


if __name__ == "__main__":
    unittest.main()
