# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from fns.v0.config import ConfigError
from fns.v0.datasets import (
    DATA3_RANGES,
    DatasetError,
    DatasetSpec,
    GrfConfig,
    build_mesh,
    export_dataset,
    feature_dim,
    generate,
    load_dataset,
    make_problem,
    p1_operator_matrices,
    read_manifest,
    sample_grf,
    sample_stream,
    uniformity_check,
)
from fns.v0.mesh import build_structured_square


class TestDatasetSpec(unittest.TestCase):
    def test_split(self):
        self.assertEqual(DatasetSpec(samples=200).n_test, 10)
        self.assertEqual(DatasetSpec(samples=1).n_test, 0)
        self.assertEqual(DatasetSpec(samples=5).split(), ([0, 1, 2, 3], [4]))
        self.assertEqual(DatasetSpec(samples=2, test_fraction=0.9).split(), ([0], [1]))

    def test_invalid(self):
        for kwargs in (
            {"family": "Data5"},
            {"samples": 0},
            {"mesh": "hex"},
            {"family": "Data2", "mesh": "unstructured"},
            {"test_fraction": 1.0},
        ):
            with self.assertRaises(ConfigError):
                DatasetSpec(**kwargs)
        with self.assertRaises(ConfigError):
            GrfConfig(a=0.0)

    def test_dict_round_trip(self):
        spec = DatasetSpec("Data3", 12, 3, "structured", 7, 0.25, GrfConfig(alpha=2.0))
        self.assertEqual(DatasetSpec.from_dict(spec.to_dict()), spec)
        with self.assertRaises(DatasetError):
            DatasetSpec.from_dict({"family": "Data1", "size": 3})

    def test_feature_dims(self):
        self.assertEqual(
            [feature_dim(f) for f in ("Data1", "Data2", "Data3", "Data4")], [3, 4, 7, 12]
        )

    def test_three_dimensional_mesh(self):
        mesh = build_mesh(DatasetSpec(family="Data2", resolution=1))
        self.assertEqual(mesh.n_nodes, 12)
        np.testing.assert_allclose(mesh.nodes.max(axis=0), [3.0, 1.0, 1.0])


class TestRandomField(unittest.TestCase):
    def test_p1_matrices(self):
        K, M, lumped = p1_operator_matrices(build_structured_square(4))
        np.testing.assert_allclose(K @ np.ones(25), 0.0, atol=1e-12)
        self.assertAlmostEqual(M.sum(), 1.0)
        self.assertAlmostEqual(lumped.sum(), 1.0)
        np.testing.assert_allclose(K.toarray(), K.toarray().T)

    def test_modulus_is_log_normal(self):
        sample = make_problem(DatasetSpec(samples=3, resolution=4), 1)
        grf = GrfConfig()
        np.testing.assert_allclose(
            grf.alpha * np.exp(sample.features[:, 0]) + grf.beta,
            sample.problem.material.E,
            rtol=1e-10,
        )
        np.testing.assert_array_equal(sample.features[:, 1:], sample.mesh.nodes)
        self.assertTrue(np.all(sample.problem.material.E > grf.beta))

    def test_streams_are_independent_of_order(self):
        spec = DatasetSpec(samples=4, resolution=4)
        first = make_problem(spec, 3)
        reordered = generate(spec, [3, 1])[0]
        np.testing.assert_array_equal(first.features, reordered.features)
        other = make_problem(spec, 2)
        self.assertFalse(np.array_equal(first.features, other.features))
        self.assertEqual(
            sample_stream(0, 3).standard_normal(), sample_stream(0, 3).standard_normal()
        )

    def test_field_scales_with_alpha(self):
        mesh = build_structured_square(4)
        _, w = sample_grf(mesh, GrfConfig(), np.random.default_rng(0))
        E, w2 = sample_grf(mesh, GrfConfig(alpha=1.0, beta=0.0), np.random.default_rng(0))
        np.testing.assert_array_equal(w, w2)
        np.testing.assert_allclose(E, np.exp(w))

    def test_index_out_of_range(self):
        with self.assertRaises(DatasetError):
            make_problem(DatasetSpec(samples=2, resolution=2), 2)


class TestParametricFamilies(unittest.TestCase):
    def test_anisotropic_parameters(self):
        spec = DatasetSpec(family="Data3", samples=25, resolution=2)
        samples = generate(spec)
        for sample in samples:
            for name, (low, high) in DATA3_RANGES.items():
                self.assertGreaterEqual(sample.parameters[name], low)
                self.assertLess(sample.parameters[name], high)
            self.assertTrue(np.all((sample.features[:, :5] >= 0) & (sample.features[:, :5] < 1)))
        p_values = uniformity_check(samples, "Data3")
        self.assertEqual(set(p_values), set(DATA3_RANGES))
        self.assertTrue(all(0.0 <= p <= 1.0 for p in p_values.values()))
        self.assertEqual(uniformity_check(samples[:5], "Data3"), {})
        self.assertEqual(uniformity_check(samples, "Data1"), {})

    def test_orthotropic_sample(self):
        sample = make_problem(DatasetSpec(family="Data4", samples=2, resolution=1), 0)
        self.assertEqual(sample.features.shape, (12, 12))
        self.assertEqual(sample.system.matrix.d, 3)
        np.testing.assert_allclose(sample.features[:, 9:], sample.mesh.nodes)


class TestExport(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name) / "data"
        self.spec = DatasetSpec(samples=3, resolution=2)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        originals = generate(self.spec)
        export_dataset(self.spec, self.root, originals, systems=True)
        self.assertTrue((self.root / "sample_0002" / "matrix.txt").exists())
        self.assertTrue((self.root / "sample_0000" / "rhs.txt").exists())
        self.assertEqual(read_manifest(self.root), self.spec)
        spec, samples = load_dataset(self.root, self.spec)
        self.assertEqual(spec, self.spec)
        for original, loaded in zip(originals, samples):
            np.testing.assert_allclose(
                loaded.system.matrix.to_dense(), original.system.matrix.to_dense(), rtol=1e-12
            )
            np.testing.assert_allclose(loaded.features, original.features, rtol=1e-12)

    def test_load_errors(self):
        export_dataset(self.spec, self.root)
        with self.assertRaises(DatasetError):
            load_dataset(self.root, DatasetSpec(samples=4, resolution=2))
        shutil.rmtree(self.root / "sample_0001")
        _, samples = load_dataset(self.root, indices=[0, 2])
        self.assertEqual([s.index for s in samples], [0, 2])
        with self.assertRaises(DatasetError) as e:
            load_dataset(self.root)
        self.assertIn("[1]", e.exception.message)
        (self.root / "manifest.yaml").write_text("format: other\n")
        with self.assertRaises(DatasetError):
            read_manifest(self.root)
        with self.assertRaises(DatasetError):
            read_manifest(Path(self.tmp.name) / "missing")
