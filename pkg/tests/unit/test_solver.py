# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

import json
import unittest

import numpy as np

from fns.v0.autodiff import Tensor
from fns.v0.blocks import BlockCsrMatrix, block_diag_inverse, l2, residual
from fns.v0.config import ConfigError
from fns.v0.datasets import DatasetSpec, make_problem
from fns.v0.model import CorrectionModel, ModelConfig, SystemContext
from fns.v0.smoother import JacobiConfig
from fns.v0.solver import (
    ExactCorrector,
    HybridConfig,
    SolveReport,
    cycle_function,
    direct_solve,
    estimate_contraction,
    fgmres,
    hybrid_cycle,
    hybrid_preconditioner,
    jacobi_preconditioner,
    jacobi_solve,
    solve,
    zero_correctors,
)


def data1_system(resolution=4):
    sample = make_problem(DatasetSpec(samples=2, resolution=resolution), 0)
    return sample, sample.system.matrix, sample.system.rhs


class TestHybridConfig(unittest.TestCase):
    def test_presets(self):
        data1 = HybridConfig.preset("Data1")
        self.assertEqual((data1.variant, data1.modes), ("agfns", (4,)))
        self.assertEqual((data1.smoother.sweeps, data1.max_iters), (10, 200))
        data2 = HybridConfig.preset("Data2")
        self.assertEqual((data2.variant, data2.modes), ("mlagfns", (4, 3, 2)))
        self.assertEqual((data2.smoother.sweeps, data2.max_iters), (50, 1000))
        self.assertEqual(HybridConfig.preset("Data3", "full").modes, (20, 19, 18, 17))
        self.assertEqual(HybridConfig.preset("Data4", "full").modes, (6, 5, 4, 3))
        self.assertEqual(HybridConfig.preset("Data1", "full", mesh="unstructured").modes, (20,))
        self.assertEqual(HybridConfig.preset("Data2", variant="gfns").modes, (4,))

    def test_invalid(self):
        for args in (("xfns", (4,)), ("agfns", (4, 3)), ("mlagfns", (3, 4)), ("gfns", (0,))):
            with self.assertRaises(ConfigError):
                HybridConfig(*args)
        with self.assertRaises(ConfigError):
            HybridConfig.preset("Data5")
        with self.assertRaises(ConfigError):
            HybridConfig.preset("Data1", scale="huge")

    def test_dict_round_trip(self):
        config = HybridConfig("mlagfns", (5, 3), JacobiConfig(0.5, 4), 30, 1e-8, False)
        self.assertEqual(HybridConfig.from_dict(config.to_dict()), config)
        with self.assertRaises(ConfigError):
            HybridConfig.from_dict({"variant": "agfns", "levels": 2})


class TestHybridCycle(unittest.TestCase):
    def setUp(self):
        self.sample, self.A, self.f = data1_system()
        self.context = SystemContext.build(
            self.sample.mesh, self.sample.system, self.sample.features
        )
        self.hybrid = HybridConfig("agfns", (2,), JacobiConfig(sweeps=3))
        config = ModelConfig.from_hybrid(self.hybrid, 2, 3, width=4, lambda_init=0.5)
        self.correctors = CorrectionModel(config).realise(self.context, detach=True)
        self.rng = np.random.default_rng(0)

    def test_affine_in_f_and_u(self):
        f1, f2, u1, u2 = (self.rng.standard_normal(self.f.shape) for _ in range(4))

        def cycle(f, u):
            return hybrid_cycle(self.A, None, f, u, self.correctors, self.hybrid)

        np.testing.assert_allclose(
            cycle(f1 + f2, u1 + u2), cycle(f1, u1) + cycle(f2, u2), rtol=1e-9, atol=1e-12
        )

    def test_return_types(self):
        u = np.zeros_like(self.f)
        out = hybrid_cycle(self.A, None, self.f, u, self.correctors, self.hybrid)
        self.assertIsInstance(out, np.ndarray)
        out = hybrid_cycle(self.A, None, self.f, Tensor(u), self.correctors, self.hybrid)
        self.assertIsInstance(out, Tensor)

    def test_corrector_count(self):
        with self.assertRaises(ConfigError):
            hybrid_cycle(self.A, None, self.f, np.zeros_like(self.f), [], self.hybrid)

    def test_zero_correctors_reduce_to_smoothing(self):
        config = HybridConfig("agfns", (2,), JacobiConfig(sweeps=3), post_smoothing=False)
        smoothed = jacobi_preconditioner(self.A, JacobiConfig(sweeps=3))
        zero = zero_correctors(config)
        cycled = hybrid_cycle(self.A, None, self.f, np.zeros_like(self.f), zero, config)
        np.testing.assert_allclose(cycled, smoothed(self.f))

    def test_untrained_cycle_never_increases_the_residual(self):
        untrained = CorrectionModel(ModelConfig.from_hybrid(self.hybrid, 2, 3, width=4))
        D_inv = block_diag_inverse(self.A)

        # residual in the D^-1 norm
        def weighted_residual(u):
            r = residual(self.A, u, self.f)
            return float(np.sqrt(np.einsum("ni,nij,nj->", r, D_inv, r)))

        learned = untrained.realise(self.context, detach=True)
        for correctors in (learned, zero_correctors(self.hybrid)):
            u = np.zeros_like(self.f)
            previous = weighted_residual(u)
            for _ in range(10):
                u = hybrid_cycle(self.A, None, self.f, u, correctors, self.hybrid)
                current = weighted_residual(u)
                self.assertLessEqual(current, previous * (1.0 + 1e-12))
                previous = current
            self.assertLess(current, weighted_residual(np.zeros_like(self.f)))


class TestStationarySolves(unittest.TestCase):
    def setUp(self):
        _, self.A, self.f = data1_system()
        self.hybrid = HybridConfig("agfns", (2,), JacobiConfig(sweeps=2), tol=1e-8)

    def test_exact_corrector_converges_in_one_cycle(self):
        u, report = solve(self.A, self.f, [ExactCorrector(self.A)], self.hybrid)
        self.assertTrue(report.converged)
        self.assertEqual(report.iterations, 1)
        self.assertLess(l2(residual(self.A, u, self.f)), 1e-8 * l2(self.f))

    def test_contraction_with_reference(self):
        reference = direct_solve(self.A, self.f)
        _, report = solve(
            self.A, self.f, [ExactCorrector(self.A)], self.hybrid, reference=reference
        )
        self.assertIsNotNone(report.contraction)
        self.assertLess(report.contraction, 1e-6)
        cycle = cycle_function(self.A, [ExactCorrector(self.A)], self.hybrid)
        self.assertLess(estimate_contraction(self.A, self.f, reference, cycle, iterations=1), 1e-6)

    def test_divergence_is_reported(self):
        def blow_up(r):
            return Tensor(np.full(r.shape, np.inf))

        _, report = solve(self.A, self.f, [blow_up], self.hybrid)
        self.assertTrue(report.diverged)
        self.assertFalse(report.converged)

    def test_iteration_cap(self):
        _, report = jacobi_solve(self.A, self.f, JacobiConfig(sweeps=1), tol=1e-12, max_iters=3)
        self.assertFalse(report.converged)
        self.assertEqual(report.iterations, 3)
        self.assertEqual(len(report.history), 4)
        self.assertEqual(report.method, "jacobi-solver")

    def test_zero_rhs(self):
        u, report = solve(self.A, np.zeros_like(self.f), [ExactCorrector(self.A)], self.hybrid)
        self.assertTrue(report.converged)
        self.assertEqual(report.iterations, 0)
        np.testing.assert_array_equal(u, 0.0)

    def test_report_json(self):
        report = SolveReport("agfns", 2, [1.0, 0.1, 0.01], True)
        data = json.loads(report.to_json())
        self.assertEqual(data["iterations"], 2)
        self.assertEqual(report.final_residual, 0.01)


class TestFgmres(unittest.TestCase):
    def setUp(self):
        _, self.A, self.f = data1_system()

    def test_exact_preconditioner(self):
        exact = ExactCorrector(self.A)
        u, report = fgmres(self.A, self.f, lambda v: exact(v).value, tol=1e-10)
        self.assertTrue(report.converged)
        self.assertEqual(report.iterations, 1)
        self.assertLess(l2(residual(self.A, u, self.f)), 1e-8 * l2(self.f))

    def test_matches_dense_minimal_residual(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            q, _ = np.linalg.qr(rng.standard_normal((20, 20)))
            dense = q @ np.diag(rng.uniform(1.0, 3.0, 20)) @ q.T
            A = BlockCsrMatrix.from_dense(dense, 2)
            b = rng.standard_normal(20)
            _, report = fgmres(A, b.reshape(10, 2), tol=1e-14, max_iters=6)
            basis = (b / np.linalg.norm(b))[:, None]
            for k in range(1, 7):
                y, *_ = np.linalg.lstsq(dense @ basis, b, rcond=None)
                expected = np.linalg.norm(b - dense @ basis @ y) / np.linalg.norm(b)
                self.assertAlmostEqual(report.history[k], expected, delta=1e-10)
                basis, _ = np.linalg.qr(np.column_stack([basis, dense @ basis[:, -1]]))

    def test_recursive_residual_tracks_the_true_residual(self):
        preconditioner = jacobi_preconditioner(self.A, JacobiConfig(sweeps=2))
        u, report = fgmres(self.A, self.f, preconditioner, tol=1e-7, max_iters=100)
        self.assertTrue(report.converged)
        self.assertTrue(all(b <= a for a, b in zip(report.history, report.history[1:])))
        true_residual = l2(residual(self.A, u, self.f)) / l2(self.f)
        self.assertAlmostEqual(report.true_residual, true_residual, delta=1e-14)
        self.assertAlmostEqual(report.true_residual, report.final_residual, delta=1e-8)

    def test_unpreconditioned(self):
        u, report = fgmres(self.A, self.f, tol=1e-9, max_iters=self.f.size)
        self.assertTrue(report.converged)
        self.assertLess(l2(residual(self.A, u, self.f)), 1e-6 * l2(self.f))

    def test_hybrid_preconditioner(self):
        hybrid = HybridConfig("agfns", (2,), JacobiConfig(sweeps=2))
        preconditioner = hybrid_preconditioner(self.A, [ExactCorrector(self.A)], hybrid)
        _, report = fgmres(self.A, self.f, preconditioner, tol=1e-8)
        self.assertTrue(report.converged)
        self.assertLessEqual(report.iterations, 2)

    def test_zero_rhs_and_invalid_settings(self):
        u, report = fgmres(self.A, np.zeros_like(self.f))
        self.assertTrue(report.converged)
        self.assertEqual(report.iterations, 0)
        with self.assertRaises(ConfigError):
            fgmres(self.A, self.f, tol=0.0)
