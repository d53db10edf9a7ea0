# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

import dataclasses
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from fns.v0.autodiff import Tensor, numerical_gradient, relative_error
from fns.v0.blocks import l2
from fns.v0.config import ConfigError
from fns.v0.datasets import DatasetSpec, generate
from fns.v0.model import load_model, save_model
from fns.v0.optim import CheckpointError
from fns.v0.smoother import JacobiConfig, smooth
from fns.v0.solver import HybridConfig
from fns.v0.trainer import (
    TrainConfig,
    TrainingDivergedError,
    TrainingError,
    build_contexts,
    create_model,
    evaluate,
    loss,
    train,
    usable_contexts,
)

HYBRID = HybridConfig("agfns", (2,), JacobiConfig(sweeps=2))
TINY = TrainConfig(k=1, batch=2, epochs=2, lr=1e-3, width=4)


def contexts(samples=3, resolution=4):
    return build_contexts(generate(DatasetSpec(samples=samples, resolution=resolution)))


class TestTrainConfig(unittest.TestCase):
    def test_invalid(self):
        for kwargs in ({"k": 0}, {"batch": 0}, {"epochs": 0}, {"lr": 0.0}, {"clip": -1.0}):
            with self.assertRaises(ConfigError):
                TrainConfig(**kwargs)
        self.assertEqual(TrainConfig.from_dict(TINY.to_dict()), TINY)


class TestLoss(unittest.TestCase):
    def setUp(self):
        self.contexts = contexts(2)
        self.model = create_model(HYBRID, self.contexts[0], TrainConfig(width=4, lambda_init=0.5))

    def test_invalid_unroll(self):
        with self.assertRaises(ConfigError):
            loss(self.contexts, self.model, HYBRID, 0)

    def test_zero_rhs_systems_are_excluded(self):
        empty = dataclasses.replace(self.contexts[0], rhs=np.zeros_like(self.contexts[0].rhs))
        with self.assertLogs("fns.v0.trainer", level="WARNING"):
            self.assertEqual(len(usable_contexts([empty, self.contexts[1]])), 1)
        with self.assertLogs("fns.v0.trainer", level="WARNING"):
            with self.assertRaises(TrainingError):
                loss([empty], self.model, HYBRID, 1)

    def test_loss_is_a_relative_residual(self):
        value = float(loss(self.contexts, self.model, HYBRID, 1).value)
        self.assertGreater(value, 0.0)
        self.assertTrue(np.isfinite(value))

    def test_untrained_cycle_is_one_extra_sweep(self):
        hybrid = HybridConfig.preset("Data1")
        systems = contexts(2, resolution=8)
        model = create_model(hybrid, systems[0], TrainConfig(width=4))
        value = float(loss(systems, model, hybrid, 1).value)
        sweeps = JacobiConfig(hybrid.smoother.omega, hybrid.smoother.sweeps + 1)
        expected = []
        for c in systems:
            u = smooth(c.operator, None, c.rhs, np.zeros_like(c.rhs), sweeps)
            expected.append(l2(c.operator.residual(c.rhs, u).value) / l2(c.rhs))
        self.assertAlmostEqual(value, float(np.mean(expected)), delta=1e-10)
        self.assertLessEqual(value, 1.0)
        self.assertAlmostEqual(evaluate(systems, model, hybrid, 1), value, delta=1e-12)

    def test_unrolled_gradient(self):
        params = self.model.parameters()

        def fn():
            return loss(self.contexts[:1], self.model, HYBRID, 2)

        for name in (
            "levels.0.meta_lambda.right_output.bias",
            "levels.0.meta_kernel.right_output.bias",
        ):
            self.model.zero_grad()
            fn().backward()
            param = params[name]
            self.assertLess(relative_error(param.grad, numerical_gradient(fn, param)), 1e-4)


class TestTrain(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.contexts = contexts(3)

    def tearDown(self):
        self.tmp.cleanup()

    def test_tiny_run(self):
        model = create_model(HYBRID, self.contexts[0], TINY)
        checkpoint, log = self.root / "model.yaml", self.root / "loss.csv"
        result = train(
            self.contexts, model, HYBRID, TINY, checkpoint, log, header={"command": "fns train"}
        )
        self.assertEqual([r.epoch for r in result.history], [1, 2])
        self.assertEqual(result.best_loss, min(result.losses))
        loaded, hybrid, stored = load_model(checkpoint, model.config)
        self.assertEqual(hybrid, HYBRID)
        self.assertEqual(stored.extra["epoch"], result.best_epoch)
        for name, param in loaded.parameters().items():
            np.testing.assert_array_equal(param.value, model.parameters()[name].value)
        lines = log.read_text().splitlines()
        self.assertEqual(lines[0], "# command: fns train")
        self.assertEqual(lines[1], "epoch,mean_loss,wall_seconds")
        self.assertEqual(len(lines), 4)

    def test_checkpoint_holds_the_best_loss_weights(self):
        model = create_model(HYBRID, self.contexts[0], TINY)
        checkpoint = self.root / "model.yaml"
        result = train(self.contexts, model, HYBRID, TINY, checkpoint)
        loaded, hybrid, stored = load_model(checkpoint, model.config)
        self.assertEqual(stored.extra["loss"], result.best_loss)
        self.assertAlmostEqual(
            evaluate(self.contexts, loaded, hybrid, TINY.k), result.best_loss, delta=1e-12
        )

    def test_resumed_run_repeats_the_uninterrupted_epochs(self):
        first = self.root / "first.yaml"
        model = create_model(HYBRID, self.contexts[0], TINY)
        train(self.contexts, model, HYBRID, dataclasses.replace(TINY, epochs=1), first)

        uninterrupted = create_model(HYBRID, self.contexts[0], TINY)
        full = train(self.contexts, uninterrupted, HYBRID, TINY)
        continued = create_model(HYBRID, self.contexts[0], TINY)
        resumed = train(self.contexts, continued, HYBRID, TINY, resume=first)

        self.assertEqual([r.epoch for r in resumed.history], [2])
        self.assertEqual(resumed.history[0].mean_loss, full.history[1].mean_loss)
        self.assertEqual(resumed.best_loss, full.best_loss)
        for name, param in continued.parameters().items():
            np.testing.assert_array_equal(param.value, uninterrupted.parameters()[name].value)

    def test_resume_errors(self):
        model = create_model(HYBRID, self.contexts[0], TINY)
        weights = self.root / "weights.yaml"
        save_model(weights, model, HYBRID)
        with self.assertRaises(TrainingError):
            train(self.contexts, model, HYBRID, TINY, resume=weights)
        wider = create_model(HYBRID, self.contexts[0], dataclasses.replace(TINY, width=8))
        with self.assertRaises(CheckpointError):
            train(self.contexts, wider, HYBRID, TINY, resume=weights)

    def test_equal_seeds_give_equal_losses(self):
        runs = []
        for _ in range(2):
            model = create_model(HYBRID, self.contexts[0], TINY)
            runs.append(train(self.contexts, model, HYBRID, TINY).losses)
        self.assertEqual(runs[0], runs[1])

    def test_divergence_restores_parameters(self):
        model = create_model(HYBRID, self.contexts[0], TINY)
        before = {name: p.value.copy() for name, p in model.parameters().items()}
        with patch("fns.v0.trainer.loss", return_value=Tensor(np.nan)):
            with self.assertLogs("fns.v0.trainer", level="ERROR"):
                with self.assertRaises(TrainingDivergedError):
                    train(self.contexts, model, HYBRID, TINY, log=self.root / "loss.csv")
        for name, param in model.parameters().items():
            np.testing.assert_array_equal(param.value, before[name])
        self.assertTrue((self.root / "loss.csv").exists())

    def test_no_usable_samples(self):
        model = create_model(HYBRID, self.contexts[0], TINY)
        empty = dataclasses.replace(self.contexts[0], rhs=np.zeros_like(self.contexts[0].rhs))
        with self.assertLogs("fns.v0.trainer", level="WARNING"):
            with self.assertRaises(TrainingError):
                train([empty], model, HYBRID, TINY)
