# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

import unittest

import numpy as np
import scipy.sparse as sp

from fns.v0.autodiff import (
    GradientError,
    ShapeError,
    Tensor,
    concat,
    cos,
    gather,
    mean_pool,
    norm2,
    numerical_gradient,
    relative_error,
    relu,
    sparse_matmul,
    sqrt,
)


class TestGradients(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def check(self, fn, param):
        param.zero_grad()
        fn().backward()
        numeric = numerical_gradient(fn, param)
        self.assertLess(relative_error(param.grad, numeric), 1e-6)

    def test_linear_relu(self):
        w = Tensor(self.rng.standard_normal((3, 2)), requires_grad=True)
        x = Tensor(self.rng.standard_normal((5, 3)))
        self.check(lambda: relu(x @ w).sum(), w)

    def test_elementwise_chain(self):
        a = Tensor(self.rng.uniform(0.5, 2.0, (4, 3)), requires_grad=True)
        b = Tensor(self.rng.uniform(0.5, 2.0, (1, 3)))
        self.check(lambda: (sqrt(a) / (a + b) - cos(a * b)).sum(), a)

    def test_broadcast_operand(self):
        a = Tensor(self.rng.standard_normal((4, 3)))
        b = Tensor(self.rng.standard_normal((3,)), requires_grad=True)
        self.check(lambda: ((a - b) * (a + b)).sum(), b)

    def test_sparse_product(self):
        matrix = sp.random(6, 6, density=0.5, random_state=1, format="csr")
        v = Tensor(self.rng.standard_normal((3, 2)), requires_grad=True)
        self.check(lambda: norm2(sparse_matmul(matrix, v)), v)

    def test_concat_and_pool(self):
        a = Tensor(self.rng.standard_normal((3, 2)), requires_grad=True)
        b = Tensor(self.rng.standard_normal((3, 1)))
        self.check(lambda: (mean_pool(concat([a, b], axis=1)) * 2.0).sum(), a)

    def test_reused_node_accumulates(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        (x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [3.0, 5.0, 7.0])

    def test_gather_with_repeated_indices(self):
        a = Tensor(np.ones(3), requires_grad=True)
        gather(a, np.array([0, 0, 2])).sum().backward()
        np.testing.assert_array_equal(a.grad, [2.0, 0.0, 1.0])

    def test_norm_at_origin(self):
        a = Tensor(np.zeros(3), requires_grad=True)
        norm2(a).backward()
        np.testing.assert_array_equal(a.grad, np.zeros(3))

    def test_reshape_and_transpose(self):
        a = Tensor(self.rng.standard_normal((2, 3)), requires_grad=True)
        weights = self.rng.standard_normal((3, 2))
        self.check(lambda: (a.reshape(3, 2) * weights + a.T).sum(), a)


class TestGraph(unittest.TestCase):
    def test_constants_record_nothing(self):
        out = Tensor(np.ones(2)) * 3.0 + 1.0
        self.assertFalse(out.requires_grad)
        with self.assertRaises(GradientError):
            out.sum().backward()

    def test_detach(self):
        x = Tensor(np.ones(2), requires_grad=True)
        self.assertFalse((x * 2.0).detach().requires_grad)

    def test_non_scalar_backward_needs_a_gradient(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with self.assertRaises(GradientError):
            (x * 2.0).backward()
        with self.assertRaises(ShapeError):
            (x * 2.0).backward(np.ones(3))

    def test_arrays_defer_to_tensors(self):
        x = Tensor(np.ones(2), requires_grad=True)
        out = np.full(2, 2.0) * x
        self.assertIsInstance(out, Tensor)
        self.assertTrue(out.requires_grad)

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            Tensor(np.ones(2)) + Tensor(np.ones(3))
        with self.assertRaises(ShapeError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
        with self.assertRaises(ShapeError):
            sparse_matmul(sp.identity(4), Tensor(np.ones(3)))

    def test_deep_graph(self):
        x = Tensor(np.ones(2), requires_grad=True)
        out = x
        for _ in range(5000):
            out = out * 1.0
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones(2))
