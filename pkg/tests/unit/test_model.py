# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

import tempfile
import unittest
from pathlib import Path

import numpy as np

from fns.v0.config import ConfigError
from fns.v0.datasets import DatasetSpec, feature_dim, make_problem
from fns.v0.model import CorrectionModel, ModelConfig, SystemContext, load_model, save_model
from fns.v0.optim import CheckpointError
from fns.v0.smoother import JacobiConfig
from fns.v0.solver import HybridConfig


def data1_context(resolution=4, index=0):
    sample = make_problem(DatasetSpec(samples=2, resolution=resolution), index)
    return sample, SystemContext.build(sample.mesh, sample.system, sample.features)


class TestModelConfig(unittest.TestCase):
    def test_from_hybrid(self):
        hybrid = HybridConfig("mlagfns", (4, 3), JacobiConfig(sweeps=2))
        config = ModelConfig.from_hybrid(hybrid, d=2, in_dim=3, width=4)
        self.assertEqual(config.modes, (4, 3))
        self.assertTrue(config.use_coordinate_map)
        self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)
        gfns = ModelConfig.from_hybrid(HybridConfig("gfns", (4,)), d=2, in_dim=3)
        self.assertFalse(gfns.use_coordinate_map)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            ModelConfig(d=4, in_dim=3, modes=(2,))
        with self.assertRaises(ConfigError):
            ModelConfig(d=2, in_dim=3, modes=())
        with self.assertRaises(ConfigError):
            ModelConfig.from_dict({"d": 2, "in_dim": 3, "modes": [2], "depth": 3})


class TestSystemContext(unittest.TestCase):
    def test_build(self):
        sample, context = data1_context()
        self.assertEqual(context.n_nodes, 25)
        self.assertEqual(context.propagation.shape, (25, 25))
        left = sample.mesh.tagged_nodes("left")
        np.testing.assert_array_equal(context.free_mask[left, 0], 0.0)
        self.assertEqual(context.free_mask.sum(), 20)
        self.assertGreater(context.diagonal_scale, 0.0)
        np.testing.assert_allclose(context.padding, [0.25, 0.25])

    def test_feature_rows_must_match_nodes(self):
        sample, _ = data1_context()
        with self.assertRaises(ConfigError):
            SystemContext.build(sample.mesh, sample.system, sample.features[:-1])


class TestCorrectionModel(unittest.TestCase):
    def setUp(self):
        self.sample, self.context = data1_context()
        self.config = ModelConfig(
            d=2, in_dim=feature_dim("Data1"), modes=(3, 2), width=4, lambda_init=0.5
        )
        self.model = CorrectionModel(self.config)
        self.r = np.random.default_rng(0).standard_normal((25, 2))

    def test_levels(self):
        correctors = self.model.realise(self.context)
        self.assertEqual(len(correctors), 2)
        self.assertEqual(correctors[0].level.lattice.size, 49)
        np.testing.assert_array_equal(correctors[1].level.lam.value, 0.5)

    def test_untrained_model_adds_no_correction(self):
        model = CorrectionModel(ModelConfig(d=2, in_dim=feature_dim("Data1"), modes=(3,), width=4))
        self.assertEqual(model.config.lambda_init, 0.0)
        (corrector,) = model.realise(self.context, detach=True)
        np.testing.assert_array_equal(corrector(self.r).value, 0.0)

    def test_coordinate_map_starts_as_identity(self):
        np.testing.assert_array_equal(
            self.model.coordinates(self.context).value, self.context.coordinates
        )

    def test_parameter_names(self):
        names = list(self.model.parameters())
        self.assertIn("levels.1.meta_kernel.right_output.bias", names)
        self.assertIn("coordinate_map.output.weight", names)
        gfns = CorrectionModel(ModelConfig(2, 3, (2,), use_coordinate_map=False, width=4))
        self.assertFalse(any(n.startswith("coordinate_map") for n in gfns.parameters()))
        self.assertIsNone(gfns.coordinate_map)

    def test_constrained_nodes_get_no_correction(self):
        left = self.sample.mesh.tagged_nodes("left")
        for corrector in self.model.realise(self.context, detach=True):
            np.testing.assert_array_equal(corrector(self.r).value[left], 0.0)

    def test_detach(self):
        attached = self.model.realise(self.context)[0](self.r)
        detached = self.model.realise(self.context, detach=True)[0](self.r)
        self.assertTrue(attached.requires_grad)
        self.assertFalse(detached.requires_grad)
        np.testing.assert_allclose(detached.value, attached.value)


class TestModelFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "model.yaml"
        _, self.context = data1_context()
        self.hybrid = HybridConfig("agfns", (2,), JacobiConfig(sweeps=2))
        self.model = CorrectionModel(ModelConfig.from_hybrid(self.hybrid, 2, 3, width=4))
        rng = np.random.default_rng(1)
        for param in self.model.parameters().values():
            param.value += 0.01 * rng.standard_normal(param.shape)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        save_model(self.path, self.model, self.hybrid, extra={"epoch": 4})
        model, hybrid, checkpoint = load_model(self.path, self.model.config)
        self.assertEqual(hybrid, self.hybrid)
        self.assertEqual(checkpoint.extra["epoch"], 4)
        r = np.random.default_rng(2).standard_normal((25, 2))
        np.testing.assert_array_equal(
            model.realise(self.context, detach=True)[0](r).value,
            self.model.realise(self.context, detach=True)[0](r).value,
        )

    def test_expected_config_mismatch(self):
        save_model(self.path, self.model, self.hybrid)
        expected = ModelConfig.from_hybrid(self.hybrid, 2, 3, width=8)
        with self.assertRaises(CheckpointError) as e:
            load_model(self.path, expected)
        self.assertIn("width", e.exception.message)

    def test_invalid_header(self):
        self.path.write_text(
            "config: {}\nextra: {}\nformat: fns-checkpoint\nlibapi: 0\nparameters: {}\n"
        )
        with self.assertRaises(CheckpointError):
            load_model(self.path)
