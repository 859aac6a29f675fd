# -*- coding: utf-8 -*-
"""Unit tests for the starflow.tensor module."""

import unittest

import numpy as np

from starflow import tensor
from starflow.errors import ContractError, ShapeError
from starflow.tensor import ConvParams, Tensor


def conv_oracle(x, kernel, bias):
    """Direct padded-window summation of a same-padded convolution."""
    batch, channels, height, width = x.shape
    filters, _, k_h, k_w = kernel.shape
    pad_h, pad_w = (k_h - 1) // 2, (k_w - 1) // 2
    out = np.zeros((batch, filters, height, width))
    for b in range(batch):
        for i in range(filters):
            for j in range(height):
                for k in range(width):
                    total = bias[i]
                    for c in range(channels):
                        for m in range(k_h):
                            for n in range(k_w):
                                row, col = j + m - pad_h, k + n - pad_w
                                if 0 <= row < height and 0 <= col < width:
                                    total += x[b, c, row, col] * \
                                        kernel[i, c, m, n]
                    out[b, i, j, k] = total
    return out


def random_conv(rng, in_channels, out_channels, k, scale=0.5, l2_coeff=0.0):
    kernel = Tensor.parameter(
        rng.normal(0, scale, (out_channels, in_channels, k, k)),
        name='kernel')
    bias = Tensor.parameter(rng.normal(0, scale, out_channels), name='bias')
    return ConvParams(kernel, bias, l2_coeff)


class ConvolutionTestCase(unittest.TestCase):
    """Tests for the conv2d function."""

    def test_identity_kernel(self):
        """Tests that a 1x1 unit kernel returns its input."""
        params = ConvParams(Tensor([[[[1.0]]]]), Tensor([0.0]))
        out = tensor.conv2d(Tensor([[[[5.0]]]]), params)
        self.assertEqual([[[[5.0]]]], out.data.tolist())

    def test_all_ones_window_sums(self):
        """Tests that zero padding gives centre, edge and corner sums."""
        params = ConvParams(Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]))
        out = tensor.conv2d(Tensor(np.ones((1, 1, 3, 3))), params).data[0, 0]
        self.assertEqual(9.0, out[1, 1])
        self.assertEqual(6.0, out[0, 1])
        self.assertEqual(6.0, out[1, 2])
        self.assertEqual(4.0, out[0, 0])
        self.assertEqual(4.0, out[2, 2])

    def test_channel_summation(self):
        """Tests that input channels are summed."""
        params = ConvParams(Tensor(np.ones((1, 2, 1, 1))), Tensor([0.0]))
        out = tensor.conv2d(Tensor([[[[1.0]], [[2.0]]]]), params)
        self.assertEqual(3.0, out.item())

    def test_matches_summation_oracle(self):
        """Tests that conv2d agrees with direct summation."""
        rng = np.random.default_rng(3)
        for k in (1, 3, 5):
            x = rng.normal(size=(2, 3, 4, 5))
            params = random_conv(rng, 3, 4, k)
            out = tensor.conv2d(Tensor(x), params).data
            expected = conv_oracle(x, params.kernel.data, params.bias.data)
            np.testing.assert_allclose(out, expected, rtol=1e-5, atol=1e-5)

    def test_same_padding_keeps_shape(self):
        """Tests that the output keeps the spatial size of the input."""
        rng = np.random.default_rng(4)
        for _ in range(20):
            k = int(rng.choice([1, 3, 5, 7]))
            h, w = rng.integers(1, 9, size=2)
            c_in, c_out = rng.integers(1, 4, size=2)
            params = random_conv(rng, c_in, c_out, k)
            x = Tensor(rng.normal(size=(2, c_in, h, w)))
            self.assertEqual((2, c_out, h, w), tensor.conv2d(x, params).shape)

    def test_linearity(self):
        """Tests that a bias-free convolution is linear in its input."""
        rng = np.random.default_rng(5)
        params = random_conv(rng, 2, 3, 3)
        params.bias.data[:] = 0
        x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
        scaled = tensor.conv2d(Tensor(2.5 * x), params).data
        expected = 2.5 * tensor.conv2d(Tensor(x), params).data
        np.testing.assert_allclose(scaled, expected, rtol=1e-5, atol=1e-5)

    def test_channel_mismatch(self):
        """Tests that a channel mismatch names the offending axis."""
        params = ConvParams(Tensor(np.ones((1, 2, 3, 3))), Tensor([0.0]))
        with self.assertRaises(ShapeError) as cm:
            tensor.conv2d(Tensor(np.ones((1, 3, 4, 4))), params)
        self.assertEqual(('in_channels',), cm.exception.axes)

    def test_even_kernel_rejected(self):
        """Tests that even kernel sizes are rejected."""
        self.assertRaises(ContractError, ConvParams,
                          Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))

    def test_deterministic(self):
        """Tests that repeated calls give bitwise identical outputs."""
        rng = np.random.default_rng(6)
        params = random_conv(rng, 3, 4, 3)
        x = Tensor(rng.normal(size=(2, 3, 5, 5)))
        first = tensor.conv2d(x, params).data
        second = tensor.conv2d(x, params).data
        self.assertEqual(first.tobytes(), second.tobytes())


class ElementwiseOpsTestCase(unittest.TestCase):
    """Tests for the dense, activation, concatenation and loss ops."""

    def test_fully_connected(self):
        """Tests that fully_connected computes weight · input + bias."""
        out = tensor.fully_connected(Tensor([[1.0, 1.0]]),
                                     Tensor([[1.0, 2.0], [3.0, 4.0]]),
                                     Tensor([0.0, 0.0]))
        self.assertEqual([[3.0, 7.0]], out.data.tolist())
        identity = tensor.fully_connected(Tensor([[2.0, -1.0]]),
                                          Tensor(np.eye(2)),
                                          Tensor([0.0, 0.0]))
        self.assertEqual([[2.0, -1.0]], identity.data.tolist())
        zero = tensor.fully_connected(Tensor(np.ones((3, 2))),
                                      Tensor(np.zeros((2, 2))),
                                      Tensor([1.5, -2.0]))
        self.assertEqual([[1.5, -2.0]] * 3, zero.data.tolist())

    def test_fully_connected_mismatch(self):
        """Tests that an input width mismatch raises ShapeError."""
        self.assertRaises(ShapeError, tensor.fully_connected,
                          Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))),
                          Tensor(np.zeros(2)))

    def test_activations(self):
        """Tests that relu and tanh work correctly."""
        self.assertEqual(0.0, tensor.activation(Tensor([-1.5]),
                                                'relu').item())
        self.assertEqual(3.25, tensor.activation(Tensor([3.25]),
                                                 'relu').item())
        self.assertEqual(0.0, tensor.activation(Tensor([0.0]),
                                                'tanh').item())
        self.assertRaises(ContractError, tensor.activation, Tensor([0.0]),
                          'sigmoid')

    def test_tanh_open_interval(self):
        """Tests that tanh never reaches -1 or 1."""
        for dtype in ('float32', 'float64'):
            with tensor.precision(dtype):
                out = tensor.activation(Tensor([-1e6, -50.0, 50.0, 1e6]),
                                        'tanh').data
            self.assertTrue(np.all(np.abs(out) < 1))

    def test_relu_gradient_at_zero(self):
        """Tests that the relu derivative at 0 is 0."""
        x = Tensor.parameter([0.0, 1.0, -1.0])
        tensor.backward(tensor.sum_all(tensor.activation(x, 'relu')))
        self.assertEqual([0.0, 1.0, 0.0], x.grad.tolist())

    def test_concat_channels(self):
        """Tests that concat_channels keeps order and values."""
        a = Tensor.parameter(np.arange(8.0).reshape(1, 2, 2, 2))
        b = Tensor.parameter(-np.arange(8.0).reshape(1, 2, 2, 2))
        out = tensor.concat_channels(a, b)
        self.assertEqual((1, 4, 2, 2), out.shape)
        np.testing.assert_array_equal(a.data, out.data[:, :2])
        tensor.backward(tensor.sum_all(out))
        np.testing.assert_array_equal(np.ones_like(a.data), a.grad)
        np.testing.assert_array_equal(np.ones_like(b.data), b.grad)

        frames = Tensor(np.zeros((2, 18, 4, 4)))
        external = Tensor(np.zeros((2, 2, 4, 4)))
        self.assertEqual((2, 20, 4, 4),
                         tensor.concat_channels(frames, external).shape)
        self.assertRaises(ShapeError, tensor.concat_channels, frames,
                          Tensor(np.zeros((2, 2, 4, 5))))

    def test_residual_add(self):
        """Tests that residual_add adds and passes gradients through."""
        x = Tensor.parameter([1.0, 2.0])
        fx = Tensor.parameter([3.0, 4.0])
        out = tensor.residual_add(x, fx)
        self.assertEqual([4.0, 6.0], out.data.tolist())
        upstream = Tensor([0.5, -2.0])
        tensor.backward(tensor.sum_all(tensor.reshape(
            tensor.fully_connected(tensor.reshape(out, (1, 2)),
                                   Tensor(np.diag(upstream.data)),
                                   Tensor([0.0, 0.0])), (2,))))
        self.assertEqual([0.5, -2.0], x.grad.tolist())
        self.assertEqual(x.grad.tolist(), fx.grad.tolist())
        zero = tensor.residual_add(Tensor([7.0]), Tensor([0.0]))
        self.assertEqual([7.0], zero.data.tolist())
        self.assertRaises(ShapeError, tensor.residual_add, Tensor([1.0]),
                          Tensor([1.0, 2.0]))

    def test_mse_loss(self):
        """Tests that mse_loss works correctly."""
        self.assertEqual(0.0, tensor.mse_loss(Tensor([1.0, 2.0]),
                                              Tensor([1.0, 2.0])).item())
        self.assertEqual(4.0, tensor.mse_loss(Tensor([2.0]),
                                              Tensor([0.0])).item())
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(2, 3, 4))
        self.assertEqual(tensor.mse_loss(Tensor(a), Tensor(b)).item(),
                         tensor.mse_loss(Tensor(b), Tensor(a)).item())
        self.assertRaises(ShapeError, tensor.mse_loss, Tensor([1.0]),
                          Tensor([1.0, 2.0]))

    def test_reshape_size(self):
        """Tests that reshape rejects a different element count."""
        self.assertRaises(ShapeError, tensor.reshape, Tensor(np.zeros(6)),
                          (4, 2))

    def test_flat_buffer_shape(self):
        """Tests that a flat buffer is reshaped in row-major order."""
        t = Tensor(range(6), shape=(2, 3))
        self.assertEqual([[0, 1, 2], [3, 4, 5]], t.data.tolist())
        self.assertRaises(ShapeError, Tensor, range(5), shape=(2, 3))


class BackwardTestCase(unittest.TestCase):
    """Tests for the backward and reset_grads functions."""

    def test_constant_loss(self):
        """Tests that a loss without parameters leaves gradients at zero."""
        w = Tensor.parameter([1.0, 2.0])
        tensor.reset_grads([w])
        tensor.backward(tensor.mse_loss(Tensor([1.0]), Tensor([3.0])))
        self.assertEqual([0.0, 0.0], w.grad.tolist())

    def test_closed_form_gradient(self):
        """Tests the gradient of a one-dimensional dense layer."""
        w = Tensor.parameter([[1.5]])
        b = Tensor.parameter([0.25])
        x, y = 2.0, 1.0
        loss = tensor.mse_loss(tensor.fully_connected(Tensor([[x]]), w, b),
                               Tensor([[y]]))
        tensor.backward(loss)
        residual = 1.5 * x + 0.25 - y
        self.assertAlmostEqual(2 * residual * x, w.grad.item(), places=5)
        self.assertAlmostEqual(2 * residual, b.grad.item(), places=5)

    def test_accumulation(self):
        """Tests that repeated calls accumulate until reset."""
        w = Tensor.parameter([3.0])
        tensor.backward(tensor.sum_all(tensor.add(w, w)))
        self.assertEqual([2.0], w.grad.tolist())
        tensor.backward(tensor.sum_all(w))
        self.assertEqual([3.0], w.grad.tolist())
        tensor.reset_grads([w])
        self.assertEqual([0.0], w.grad.tolist())

    def test_non_scalar(self):
        """Tests that backward on a non-scalar raises ContractError."""
        self.assertRaises(ContractError, tensor.backward,
                          Tensor.parameter([1.0, 2.0]))

    def test_check_finite(self):
        """Tests that check_finite flags NaN values and infinite gradients."""
        w = Tensor.parameter([1.0, 2.0], name='w')
        w.check_finite()
        w.grad = np.array([0.0, np.inf], dtype=w.data.dtype)
        with self.assertRaises(ContractError) as cm:
            w.check_finite()
        self.assertIn('w', str(cm.exception))
        self.assertRaises(ContractError, Tensor([np.nan]).check_finite)


class AdamTestCase(unittest.TestCase):
    """Tests for the adam_step function."""

    def test_zero_gradient(self):
        """Tests that zero gradients leave parameters unchanged."""
        p = Tensor.parameter([1.0, -2.0], name='p')
        state = tensor.AdamState()
        for _ in range(5):
            tensor.adam_step([p], state, [np.zeros(2, dtype=p.data.dtype)])
        self.assertEqual([1.0, -2.0], p.data.tolist())
        self.assertEqual(5, state.step_count)

    def test_first_step_magnitude(self):
        """Tests that the first update has the size of the learning rate."""
        with tensor.precision('float64'):
            p = Tensor.parameter([0.0, 0.0], name='p')
            state = tensor.AdamState(learning_rate=1e-3)
            tensor.adam_step([p], state, [np.array([4.0, -0.5])])
        self.assertAlmostEqual(-1e-3, p.data[0], delta=1e-9)
        self.assertAlmostEqual(1e-3, p.data[1], delta=1e-9)

    def test_moments_keyed_by_name(self):
        """Tests that moment estimates match their parameter's shape."""
        p = Tensor.parameter(np.zeros((2, 3)), name='layer.kernel')
        state = tensor.AdamState()
        p.grad = np.ones((2, 3), dtype=p.data.dtype)
        tensor.adam_step([p], state)
        self.assertEqual((2, 3), state.m['layer.kernel'].shape)
        self.assertEqual((2, 3), state.v['layer.kernel'].shape)

    def test_invalid_hyperparameters(self):
        """Tests that invalid hyperparameters raise ContractError."""
        self.assertRaises(ContractError, tensor.AdamState, learning_rate=0)
        self.assertRaises(ContractError, tensor.AdamState, beta1=1.0)


class FiniteDifferenceTestCase(unittest.TestCase):
    """Tests every op's backward rule against central differences."""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def check(self, f, params, limit=1e-6):
        with tensor.precision('float64'):
            error = tensor.finite_diff_check(f, params)
        self.assertLess(error, limit)
        return error

    def test_linear_function(self):
        """Tests that a linear function gives an exact gradient."""
        with tensor.precision('float64'):
            w = Tensor.parameter([[0.5, -1.0, 2.0]])
            b = Tensor.parameter([0.1])
            x = Tensor([[1.0], [2.0], [3.0]])
            with_b = lambda: tensor.sum_all(tensor.fully_connected(
                tensor.reshape(x, (1, 3)), w, b))
            self.assertLess(tensor.finite_diff_check(with_b, [w, b]), 1e-10)

    def test_random_instances(self):
        """Tests every op on 100 random small instances in 64-bit mode."""
        checked = 0
        with tensor.precision('float64'):
            for _ in range(20):
                c_in, c_out = self.rng.integers(1, 3, size=2)
                h, w = self.rng.integers(1, 4, size=2)
                k = int(self.rng.choice([1, 3]))

                x = Tensor.parameter(self.rng.normal(size=(2, c_in, h, w)))
                params = random_conv(self.rng, c_in, c_out, k)
                target = Tensor(self.rng.normal(size=(2, c_out, h, w)))
                self.check(lambda: tensor.mse_loss(tensor.activation(
                    tensor.conv2d(x, params), 'relu'), target),
                    [x, params.kernel, params.bias])

                d_in, d_out = self.rng.integers(1, 5, size=2)
                v = Tensor.parameter(self.rng.normal(size=(3, d_in)))
                weight = Tensor.parameter(self.rng.normal(size=(d_out,
                                                                d_in)))
                bias = Tensor.parameter(self.rng.normal(size=d_out))
                y = Tensor(self.rng.normal(size=(3, d_out)))
                self.check(lambda: tensor.mse_loss(tensor.activation(
                    tensor.fully_connected(v, weight, bias), 'tanh'), y),
                    [v, weight, bias])

                a = Tensor.parameter(self.rng.normal(size=(1, c_in, h, w)))
                b = Tensor.parameter(self.rng.normal(size=(1, c_out, h, w)))
                z = Tensor(self.rng.normal(size=(1, c_in + c_out, h, w)))
                self.check(lambda: tensor.mse_loss(
                    tensor.concat_channels(a, b), z), [a, b])

                r = Tensor.parameter(self.rng.normal(size=(2, 3)))
                fr = Tensor.parameter(self.rng.normal(size=(2, 3)))
                self.check(lambda: tensor.mse_loss(
                    tensor.reshape(tensor.residual_add(r, fr), (3, 2)),
                    Tensor(np.zeros((3, 2)))), [r, fr])

                kernel = params.kernel
                self.check(lambda: tensor.add(
                    tensor.l2_penalty(kernel, 1e-2),
                    tensor.sum_all(tensor.activation(kernel, 'tanh'))),
                    [kernel])
                checked += 5
        self.assertGreaterEqual(checked, 100)

    def test_corrupted_rule(self):
        """Tests that a wrong backward rule is detected."""
        def double(x):
            # The derivative of 2x is 2; this rule drops the factor.
            return Tensor.from_op(2 * x.data, (x,), lambda grad: (grad,))

        with tensor.precision('float64'):
            w = Tensor.parameter(self.rng.normal(size=(3,)))
            error = tensor.finite_diff_check(
                lambda: tensor.mse_loss(double(w), Tensor(np.ones(3))), [w])
        self.assertGreater(error, 1e-2)


class PrecisionTestCase(unittest.TestCase):
    """Tests for the precision switch."""

    def test_precision_context(self):
        """Tests that precision() restores the previous dtype."""
        self.assertIs(np.float32, tensor.get_dtype())
        with tensor.precision('float64'):
            self.assertEqual(np.float64, Tensor([1.0]).data.dtype)
        self.assertIs(np.float32, tensor.get_dtype())
        self.assertRaises(ContractError, tensor.set_precision, 'float16')


if __name__ == '__main__':
    unittest.main()
