import io
import math
import threading
import unittest

import numpy as np
import pytest
from common import TripleTestCase, rand

from tripleprior.exceptions import NonFiniteError, ParameterError, ShapeError
from tripleprior.tensor import ops
from tripleprior.tensor.core import Tensor, current_tape, grad_enabled, no_grad
from tripleprior.tensor.gradcheck import grad_check
from tripleprior.tensor.io import read_tensor, write_tensor
from tripleprior.tensor.nn import GroupNorm, Linear, Module, Parameter
from tripleprior.tensor.optim import AdamW, clip_grad_norm, cosine_lr


def param(*shape, seed=0):
    return Tensor(rand(*shape, seed=seed), requires_grad=True)


def conv_oracle(x, w, stride=1, padding=0):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[b, o, i, j] = acc
    return out


class TestPrimitiveValues(TripleTestCase):

    def test_matmul_identity_and_selector(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ops.matmul(np.eye(2), a).data, a)
        np.testing.assert_array_equal(ops.matmul([[1.0, 0.0]], [[5.0], [7.0]]).data, [[5.0]])

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_softmax_values(self):
        np.testing.assert_allclose(ops.softmax([0.0, 0.0]).data, [0.5, 0.5])
        np.testing.assert_allclose(ops.softmax([1000.0, 0.0]).data, [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(ops.softmax([1.0, -1.0]).data, [0.8808, 0.1192], atol=1e-4)

    def test_log_softmax_matches_log_of_softmax(self):
        x = rand(3, 5)
        np.testing.assert_allclose(ops.log_softmax(x, axis=1).data, np.log(ops.softmax(x, axis=1).data))

    def test_conv_identity_kernel(self):
        x = rand(2, 5, 6)
        w = np.eye(2).reshape(2, 2, 1, 1)
        np.testing.assert_array_equal(ops.conv2d(x, w).data, x)

    def test_conv_counting(self):
        out = ops.conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)))
        np.testing.assert_array_equal(out.data, [[[9.0]]])

    def test_conv_matches_nested_loops(self):
        rng = np.random.default_rng(3)
        x = rng.integers(-5, 6, size=(1, 1, 5, 5)).astype(float)
        w = rng.integers(-3, 4, size=(1, 1, 3, 3)).astype(float)
        np.testing.assert_array_equal(ops.conv2d(x, w).data, conv_oracle(x, w))

    def test_conv_stride_padding_matches_nested_loops(self):
        x, w = rand(2, 3, 7, 6, seed=1), rand(4, 3, 3, 3, seed=2)
        out = ops.conv2d(x, w, stride=2, padding=1).data
        self.assertEqual(out.shape, (2, 4, 4, 3))
        np.testing.assert_allclose(out, conv_oracle(x, w, stride=2, padding=1), rtol=1e-12, atol=1e-12)

    def test_conv_kernel_too_large(self):
        with pytest.raises(ShapeError):
            ops.conv2d(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)))

    def test_broadcast_add(self):
        out = ops.add(np.ones((2, 3)), np.arange(3.0))
        np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])

    def test_non_finite_reports_op(self):
        with pytest.raises(NonFiniteError) as e:
            ops.log(Tensor([0.0, 1.0]))
        self.assertEqual(e.value.op_name, "Log")
        self.assertIsInstance(e.value.op_index, int)

    def test_upsample_nearest(self):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        out = ops.upsample_nearest(Tensor(x), 2).data
        np.testing.assert_array_equal(out[0, 0], np.kron(x[0, 0], np.ones((2, 2))))

    def test_group_norm_normalizes_groups(self):
        x = Tensor(rand(2, 4, 3, 3))
        out = ops.group_norm(x, 2, Tensor(np.ones(4)), Tensor(np.zeros(4)), 1e-5).data
        grouped = out.reshape(2, 2, -1)
        np.testing.assert_allclose(grouped.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(grouped.var(axis=-1), 1.0, atol=1e-3)

    def test_l1_loss_nonnegative(self):
        self.assertAlmostEqual(ops.l1_loss([1.0, -1.0], [0.0, 0.0]).item(), 1.0)


class TestAutodiff(TripleTestCase):

    def test_sum_gradient_is_ones(self):
        x = param(3, 4)
        self.assertLess(grad_check(lambda: ops.sum(x), [x]), 1e-10)
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        self.assertLess(grad_check(lambda: ops.sum(x * x), [x]), 1e-8)
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_grad_check_skips_small_differences(self):
        x = Tensor([1e-7, 1.0, 2.0], requires_grad=True)
        with self.assertLogs("tripleprior.tensor.gradcheck", level="DEBUG") as logs:
            self.assertLess(grad_check(lambda: ops.sum(x * x), [x], min_magnitude=1e-3), 1e-8)
        self.assertIn("scored 2 coordinates, skipped 1", logs.output[-1])

    def test_grad_check_needs_a_scored_coordinate(self):
        x = Tensor([1e-9], requires_grad=True)
        with pytest.raises(ParameterError):
            grad_check(lambda: ops.sum(x * x), [x], min_magnitude=1.0)

    def test_matmul_gradient(self):
        a, b = param(3, 4, seed=1), param(4, 2, seed=2)
        self.assertLess(grad_check(lambda: ops.sum(ops.matmul(a, b)), [a, b]), 1e-6)

    def test_elementwise_gradients(self):
        a = Tensor(np.abs(rand(2, 3, seed=4)) + 0.5, requires_grad=True)
        b = param(2, 3, seed=5)
        cases = {
            "add": lambda: ops.sum(a + b),
            "sub": lambda: ops.sum((a - b) * b),
            "div": lambda: ops.sum(b / a),
            "exp": lambda: ops.sum(ops.exp(b)),
            "log": lambda: ops.sum(ops.log(a) * b),
            "sqrt": lambda: ops.sum(ops.sqrt(a) * b),
            "abs": lambda: ops.sum(ops.abs(a) * b),
            "silu": lambda: ops.sum(ops.silu(b) * a),
            "neg": lambda: ops.sum(-b * a),
        }
        for name, f in cases.items():
            with self.subTest(op=name):
                self.assertLess(grad_check(f, [a, b]), 1e-6)

    def test_shape_op_gradients(self):
        a = param(2, 3, 4, seed=6)
        w = Tensor(rand(2, 3, 4, seed=7))
        cases = {
            "reshape": lambda: ops.sum(ops.reshape(a, (6, 4)) * w.data.reshape(6, 4)),
            "transpose": lambda: ops.sum(ops.transpose(a, (2, 0, 1)) * np.transpose(w.data, (2, 0, 1))),
            "getitem": lambda: ops.sum(a[:, 1:, ::2] * w.data[:, 1:, ::2]),
            "concat": lambda: ops.sum(ops.concat([a, a * w], axis=1) * rand(2, 6, 4, seed=8)),
            "broadcast": lambda: ops.sum(ops.broadcast_to(a[:, :1], (2, 3, 4)) * w),
            "mean": lambda: ops.sum(ops.mean(a * w, axis=(0, 2))),
            "softmax": lambda: ops.sum(ops.softmax(a, axis=-1) * w),
            "log_softmax": lambda: ops.sum(ops.log_softmax(a, axis=1) * w),
        }
        for name, f in cases.items():
            with self.subTest(op=name):
                self.assertLess(grad_check(f, [a]), 1e-6)

    def test_conv_gradient(self):
        x, w, b = param(2, 2, 5, 5, seed=9), param(3, 2, 3, 3, seed=10), param(3, seed=11)
        mask = rand(2, 3, 3, 3, seed=12)
        f = lambda: ops.sum(ops.conv2d(x, w, b, stride=2, padding=1) * mask)  # noqa: E731
        self.assertLess(grad_check(f, [x, w, b]), 1e-6)

    def test_composite_gradients(self):
        x = param(2, 4, 3, 3, seed=13)
        norm = GroupNorm(2, 4)
        norm.weight.data[:] = rand(4, seed=14)
        mask = rand(2, 4, 3, 3, seed=15)
        self.assertLess(grad_check(lambda: ops.sum(norm(x) * mask), [x, norm.weight, norm.bias]), 1e-6)
        up_mask = rand(2, 4, 6, 6, seed=16)
        self.assertLess(grad_check(lambda: ops.sum(ops.upsample_nearest(x, 2) * up_mask), [x]), 1e-6)

    def test_shared_subexpression_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        (y + y * x).backward()
        np.testing.assert_allclose(x.grad, [2 * 3.0 + 3 * 9.0])

    def test_tape_cleared_after_backward(self):
        x = param(3)
        ops.sum(x * x).backward()
        self.assertEqual(len(current_tape()), 0)

    def test_backward_needs_scalar(self):
        with pytest.raises(ShapeError):
            (param(3) * 2.0).backward()

    def test_no_grad_records_nothing(self):
        x = param(3)
        with no_grad():
            y = x * x
        self.assertFalse(y.requires_grad)
        self.assertEqual(len(current_tape()), 0)
        self.assertTrue(grad_enabled())

    def test_no_grad_is_thread_local(self):
        seen = []
        with no_grad():
            worker = threading.Thread(target=lambda: seen.append(grad_enabled()))
            worker.start()
            worker.join()
        self.assertEqual(seen, [True])


class TestModules(TripleTestCase):

    def test_state_dict_round_trip(self):
        rng = np.random.default_rng(0)
        a, b = Linear(3, 2, rng), Linear(3, 2, rng)
        b.load_state_dict(a.state_dict())
        x = rand(4, 3)
        np.testing.assert_array_equal(a(Tensor(x)).data, b(Tensor(x)).data)

    def test_named_parameters_order(self):
        class Two(Module):
            def __init__(self):
                rng = np.random.default_rng(0)
                self.first = Linear(2, 2, rng)
                self.second = Parameter(np.zeros(1))
        self.assertEqual([n for n, _ in Two().named_parameters()], ["first.weight", "first.bias", "second"])

    def test_freeze(self):
        layer = Linear(2, 2, np.random.default_rng(0)).freeze()
        self.assertEqual(layer.trainable_parameters(), [])

    def test_tensor_container(self):
        x = rand(2, 3, 4)
        buf = io.BytesIO()
        write_tensor(buf, x)
        buf.seek(0)
        self.assertEqual(buf.read(4), b"TPGT")
        buf.seek(0)
        np.testing.assert_array_equal(read_tensor(buf), x)


class TestOptim(unittest.TestCase):

    def test_cosine_lr_endpoints(self):
        self.assertEqual(cosine_lr(0, 100, 1e-3), 1e-3)
        self.assertAlmostEqual(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5)
        self.assertAlmostEqual(cosine_lr(50, 100, 1.0), 0.5)

    def test_clip_grad_norm(self):
        p = Parameter(np.zeros(2))
        p.grad = np.array([3.0, 4.0])
        self.assertEqual(clip_grad_norm([p], 1.0), 5.0)
        self.assertAlmostEqual(float(np.linalg.norm(p.grad)), 1.0)

    def test_adamw_zero_lr_keeps_parameters(self):
        p = Parameter(rand(3))
        before = p.data.copy()
        p.grad = np.ones(3)
        AdamW([p], lr=0.0).step()
        np.testing.assert_array_equal(p.data, before)

    def test_adamw_first_step_moves_against_gradient(self):
        p = Parameter(np.zeros(2))
        p.grad = np.array([1.0, -1.0])
        AdamW([p], lr=0.1, weight_decay=0.0).step()
        np.testing.assert_allclose(p.data, [-0.1, 0.1], rtol=1e-6)
        self.assertFalse(math.isnan(p.data[0]))
