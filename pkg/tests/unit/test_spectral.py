# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

import unittest

import numpy as np

from fns.v0.autodiff import Tensor, numerical_gradient, relative_error
from fns.v0.mesh import build_structured_box, build_structured_square
from fns.v0.spectral import (
    TWO_PI,
    FourierBasis,
    FrequencyLattice,
    SpectralError,
    SpectralLevel,
    Spectrum,
    apply_level,
    forward_nudft,
    identity_kernel,
    inverse_nudft,
    kernel_size,
    lattice_convolution,
    normalize_coordinates,
    quartile_masks,
)


def random_spectrum(rng, shape):
    return Spectrum(Tensor(rng.standard_normal(shape)), Tensor(rng.standard_normal(shape)))


class TestFrequencyLattice(unittest.TestCase):
    def test_layout(self):
        lattice = FrequencyLattice(2, 4)
        self.assertEqual(lattice.size, 81)
        self.assertEqual(lattice.index((0, 0)), 40)
        np.testing.assert_array_equal(lattice.frequencies[0], [-4, -4])
        np.testing.assert_array_equal(lattice.frequencies[40], [0, 0])
        self.assertEqual(lattice.shift_operator().shape, (9 * 81, 81))
        self.assertEqual(kernel_size(2), 36)

    def test_invalid(self):
        with self.assertRaises(SpectralError):
            FrequencyLattice(4, 2)
        with self.assertRaises(SpectralError):
            FrequencyLattice(2, 1).index((2, 0))

    def test_quartiles(self):
        lattice = FrequencyLattice(2, 3)
        low, high = quartile_masks(lattice)
        self.assertEqual(low.sum(), lattice.size // 4)
        self.assertTrue(low[lattice.index((0, 0))])
        self.assertTrue(high[lattice.index((3, 3))])
        self.assertFalse(np.any(low & high))


class TestTransforms(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_zero_field_has_zero_spectrum(self):
        mesh = build_structured_square(4)
        lattice = FrequencyLattice(2, 3)
        spectrum = forward_nudft(np.zeros((mesh.n_nodes, 2)), mesh.nodes, lattice)
        np.testing.assert_array_equal(spectrum.magnitude(), 0.0)
        self.assertEqual(spectrum.norm(), 0.0)

    def test_uniform_grid_lands_on_dft_points(self):
        mesh = build_structured_square(7)
        lattice = FrequencyLattice(2, 3)
        spectrum = forward_nudft(np.ones((mesh.n_nodes, 2)), mesh.nodes, lattice)
        expected = np.zeros((lattice.size, 2), dtype=complex)
        expected[lattice.index((0, 0))] = mesh.n_nodes
        np.testing.assert_allclose(spectrum.to_complex(), expected, atol=1e-10)

    def test_full_lattice_inverts_exactly(self):
        mesh = build_structured_square(4)
        lattice = FrequencyLattice(2, 2)
        r = self.rng.standard_normal((mesh.n_nodes, 2))
        spectrum = forward_nudft(r, mesh.nodes, lattice)
        np.testing.assert_allclose(
            inverse_nudft(spectrum, mesh.nodes, lattice).value, r, atol=1e-10
        )
        level = SpectralLevel(lattice, np.ones((lattice.size, 2)), identity_kernel(2))
        np.testing.assert_allclose(apply_level(r, mesh.nodes, level).value, r, atol=1e-10)

    def test_flat_axis_maps_to_zero(self):
        xi = np.column_stack([np.linspace(0.0, 1.0, 5), np.full(5, 0.3)])
        normalized = normalize_coordinates(xi).value
        np.testing.assert_allclose(normalized[:, 1], 0.0)
        self.assertAlmostEqual(normalized[-1, 0], np.pi)

    def test_padded_box_lands_on_dft_points(self):
        mesh = build_structured_box(4, 2, 2)
        span = mesh.nodes.max(axis=0) - mesh.nodes.min(axis=0)
        spacing = mesh.axis_spacing()
        normalized = normalize_coordinates(mesh.nodes, spacing / span).value
        counts = np.array([5, 3, 3])
        np.testing.assert_allclose(
            normalized, TWO_PI * np.round(mesh.nodes / spacing) / counts, atol=1e-12
        )
        with self.assertRaises(SpectralError):
            normalize_coordinates(mesh.nodes, [0.25, 0.5])
        with self.assertRaises(SpectralError):
            normalize_coordinates(mesh.nodes, [0.25, -0.5, 0.5])

    def test_basis_dimension_mismatch(self):
        with self.assertRaises(SpectralError):
            FourierBasis(np.zeros((4, 3)), FrequencyLattice(2, 1))
        basis = FourierBasis(np.zeros((4, 2)), FrequencyLattice(2, 1))
        with self.assertRaises(SpectralError):
            forward_nudft(np.zeros((4, 2)), basis, FrequencyLattice(2, 2))


class TestConvolution(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.lattice = FrequencyLattice(2, 2)
        self.shape = (self.lattice.size, 2)

    def test_identity_kernel(self):
        spectrum = random_spectrum(self.rng, self.shape)
        out = lattice_convolution(spectrum, identity_kernel(2), self.lattice)
        np.testing.assert_allclose(out.real.value, spectrum.real.value)
        np.testing.assert_allclose(out.imag.value, spectrum.imag.value)

    def test_adjoint(self):
        kernel = self.rng.standard_normal((2, 9, 2))
        x = random_spectrum(self.rng, self.shape)
        y = random_spectrum(self.rng, self.shape)
        cx = lattice_convolution(x, kernel, self.lattice)
        cy = lattice_convolution(y, kernel, self.lattice, adjoint=True)
        left = np.sum(cx.real.value * y.real.value + cx.imag.value * y.imag.value)
        right = np.sum(x.real.value * cy.real.value + x.imag.value * cy.imag.value)
        self.assertAlmostEqual(left, right, places=10)

    def test_kernel_shape(self):
        with self.assertRaises(SpectralError):
            lattice_convolution(
                random_spectrum(self.rng, self.shape), np.zeros((2, 3, 2)), self.lattice
            )


class TestSpectralLevel(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.mesh = build_structured_square(4)
        self.lattice = FrequencyLattice(2, 2)
        self.r = self.rng.standard_normal((self.mesh.n_nodes, 2))

    def test_linear_in_the_residual(self):
        level = SpectralLevel(
            self.lattice, self.rng.uniform(0.5, 1.5, (self.lattice.size, 2)), identity_kernel(2)
        )
        basis = FourierBasis(self.mesh.nodes, self.lattice)
        once = apply_level(self.r, basis, level).value
        np.testing.assert_allclose(apply_level(2.0 * self.r, basis, level).value, 2.0 * once)

    def test_zero_lambda_gives_zero_correction(self):
        level = SpectralLevel(self.lattice, np.zeros((self.lattice.size, 2)), identity_kernel(2))
        np.testing.assert_array_equal(apply_level(self.r, self.mesh.nodes, level).value, 0.0)

    def test_gradients(self):
        lam = Tensor(self.rng.uniform(0.5, 1.5, (self.lattice.size, 2)), requires_grad=True)
        kernel = Tensor(identity_kernel(2) + 0.1 * self.rng.standard_normal((2, 9, 2)))
        kernel.requires_grad = True
        xi = Tensor(self.mesh.nodes + 0.01 * self.rng.standard_normal(self.mesh.nodes.shape))

        def loss():
            level = SpectralLevel(self.lattice, lam, kernel, scale=0.5)
            return (apply_level(self.r, xi, level) * self.r).sum()

        loss().backward()
        for param in (lam, kernel):
            self.assertLess(relative_error(param.grad, numerical_gradient(loss, param)), 1e-6)

    def test_invalid_lambda(self):
        with self.assertRaises(SpectralError):
            SpectralLevel(self.lattice, np.ones((3, 2)), identity_kernel(2))
        lam = np.ones((self.lattice.size, 2))
        lam[0, 0] = np.inf
        with self.assertRaises(SpectralError):
            SpectralLevel(self.lattice, lam, identity_kernel(2))
