# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

import tempfile
import unittest
from pathlib import Path

import numpy as np

from fns.v0.autodiff import GradientError, Tensor
from fns.v0.config import ConfigError
from fns.v0.optim import (
    Adam,
    CheckpointError,
    checkpoint_document,
    clip_grad_norm,
    decode_array,
    encode_array,
    load_checkpoint,
    restore_parameters,
    save_checkpoint,
)


def quadratic_params():
    return {"x": Tensor(np.array([3.0, -2.0]), requires_grad=True)}


class TestAdam(unittest.TestCase):
    def test_first_step_moves_by_the_learning_rate(self):
        params = quadratic_params()
        optimizer = Adam(params, lr=0.1)
        (params["x"] * params["x"]).sum().backward()
        optimizer.step()
        np.testing.assert_allclose(params["x"].value, [2.9, -1.9], atol=1e-8)

    def test_converges_on_a_quadratic(self):
        params = quadratic_params()
        optimizer = Adam(params, lr=0.05)
        for _ in range(2000):
            optimizer.zero_grad()
            (params["x"] * params["x"]).sum().backward()
            optimizer.step()
        np.testing.assert_allclose(params["x"].value, [0.0, 0.0], atol=0.1)

    def test_missing_gradient_counts_as_zero(self):
        params = quadratic_params()
        Adam(params).step()
        np.testing.assert_array_equal(params["x"].value, [3.0, -2.0])

    def test_non_finite_gradient(self):
        params = quadratic_params()
        params["x"].grad = np.array([np.nan, 0.0])
        with self.assertRaises(GradientError):
            Adam(params).step()
        np.testing.assert_array_equal(params["x"].value, [3.0, -2.0])

    def test_invalid_hyperparameters(self):
        with self.assertRaises(ConfigError):
            Adam(quadratic_params(), lr=0.0)
        with self.assertRaises(ConfigError):
            Adam(quadratic_params(), beta1=1.0)

    def test_state_round_trip(self):
        params = quadratic_params()
        optimizer = Adam(params, lr=0.1)
        (params["x"] * params["x"]).sum().backward()
        optimizer.step()
        restored = Adam(quadratic_params())
        restored.load_state_dict(optimizer.state_dict())
        self.assertEqual(restored.step_count, 1)
        self.assertEqual(restored.lr, 0.1)
        np.testing.assert_array_equal(restored.m["x"], optimizer.m["x"])
        with self.assertRaises(CheckpointError):
            Adam({"y": Tensor(np.zeros(2), requires_grad=True)}).load_state_dict(
                optimizer.state_dict()
            )


class TestClipping(unittest.TestCase):
    def test_clip(self):
        params = {"a": Tensor(np.zeros(2), requires_grad=True)}
        params["a"].grad = np.array([3.0, 4.0])
        self.assertAlmostEqual(clip_grad_norm(params, 1.0), 5.0)
        np.testing.assert_allclose(params["a"].grad, [0.6, 0.8])

    def test_small_gradients_are_untouched(self):
        params = {"a": Tensor(np.zeros(2), requires_grad=True)}
        params["a"].grad = np.array([0.3, 0.4])
        clip_grad_norm(params, 1.0)
        np.testing.assert_array_equal(params["a"].grad, [0.3, 0.4])


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "weights.yaml"
        self.config = {"d": 2, "modes": [4, 2]}
        self.params = {
            "w": Tensor(np.random.default_rng(0).standard_normal((3, 2)), requires_grad=True)
        }

    def tearDown(self):
        self.tmp.cleanup()

    def test_array_encoding_is_exact(self):
        value = np.random.default_rng(1).standard_normal((2, 3))
        np.testing.assert_array_equal(decode_array(encode_array(value)), value)
        with self.assertRaises(CheckpointError):
            decode_array({"shape": [2], "data": "not base64!"})

    def test_resave_is_byte_identical(self):
        optimizer = Adam(self.params)
        save_checkpoint(self.path, self.config, self.params, optimizer, {"epoch": 3})
        checkpoint = load_checkpoint(self.path, self.config)
        self.assertEqual(checkpoint.extra, {"epoch": 3})
        restored = Adam(self.params)
        restored.load_state_dict(checkpoint.optimizer)
        text = checkpoint_document(
            checkpoint.config, checkpoint.parameters, restored, {"epoch": 3}
        )
        self.assertEqual(text, self.path.read_text())

    def test_restore(self):
        save_checkpoint(self.path, self.config, self.params)
        target = {"w": Tensor(np.zeros((3, 2)), requires_grad=True)}
        restore_parameters(target, load_checkpoint(self.path))
        np.testing.assert_array_equal(target["w"].value, self.params["w"].value)
        with self.assertRaises(CheckpointError):
            restore_parameters(
                {"w": Tensor(np.zeros((2, 2)), requires_grad=True)}, load_checkpoint(self.path)
            )
        with self.assertRaises(CheckpointError):
            restore_parameters(
                {"v": Tensor(np.zeros((3, 2)), requires_grad=True)}, load_checkpoint(self.path)
            )

    def test_config_mismatch(self):
        save_checkpoint(self.path, self.config, self.params)
        with self.assertRaises(CheckpointError) as e:
            load_checkpoint(self.path, {"d": 3, "modes": [4, 2]})
        self.assertIn("differs in d", e.exception.message)

    def test_not_a_checkpoint(self):
        self.path.write_text("format: something-else\n")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(Path(self.tmp.name) / "missing.yaml")
