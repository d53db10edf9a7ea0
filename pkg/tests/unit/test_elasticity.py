# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

import unittest

import numpy as np

from fns.v0.elasticity import (
    Anisotropic2D,
    BoundaryTagError,
    DegenerateElementError,
    Isotropic2D,
    Isotropic3D,
    MaterialError,
    MaterialModel,
    Orthotropic3D,
    ProblemDefinition,
    assemble,
    assemble_stiffness,
    element_stiffness,
    element_stiffness_batch,
    isotropic_voigt,
    lame,
    p1_gradients,
    rigid_body_modes,
    voigt_stiffness,
)
from fns.v0.mesh import build_structured_box, build_structured_square, build_unstructured_2d


def square_problem(n=4, **kwargs):
    mesh = build_structured_square(n)
    material = Isotropic2D(E=np.linspace(1.0, 2.0, mesh.n_nodes), nu=0.3)
    return ProblemDefinition(mesh, material, **kwargs)


class TestMaterials(unittest.TestCase):
    def test_isotropic_voigt(self):
        C = voigt_stiffness(Isotropic2D(E=1.0, nu=0.25))
        np.testing.assert_allclose(C, [[1.2, 0.4, 0.0], [0.4, 1.2, 0.0], [0.0, 0.0, 0.4]])

    def test_nodal_field_needs_an_element(self):
        with self.assertRaises(MaterialError):
            voigt_stiffness(Isotropic2D(E=[1.0, 2.0, 3.0], nu=0.3))

    def test_invalid_isotropic(self):
        with self.assertRaises(MaterialError):
            Isotropic2D(E=1.0, nu=0.5)
        with self.assertRaises(MaterialError):
            Isotropic2D(E=[1.0, -1.0], nu=0.3)

    def test_rotation_swaps_axes(self):
        layer = Anisotropic2D(E1=10.0, E2=1.0, G12=0.5, nu12=0.25)
        rotated = Anisotropic2D(E1=10.0, E2=1.0, G12=0.5, nu12=0.25, theta=np.pi / 2)
        np.testing.assert_allclose(layer.voigt(), layer.principal_voigt())
        self.assertAlmostEqual(rotated.voigt()[0, 0], layer.voigt()[1, 1])
        self.assertAlmostEqual(rotated.voigt()[1, 1], layer.voigt()[0, 0])
        np.testing.assert_allclose(rotated.voigt(), rotated.voigt().T, atol=1e-12)

    def test_reciprocity(self):
        layer = Anisotropic2D(E1=10.0, E2=2.0, G12=1.0, nu12=0.3)
        self.assertAlmostEqual(layer.nu21 * layer.E1, layer.nu12 * layer.E2)

    def test_orthotropic_reduces_to_isotropic(self):
        nu = 0.25
        G = 1.0 / (2.0 * (1.0 + nu))
        solid = Orthotropic3D(1.0, 1.0, 1.0, G, G, G, nu, nu, nu)
        lam, mu = lame(1.0, nu)
        np.testing.assert_allclose(solid.voigt(), isotropic_voigt(lam, mu, 3), atol=1e-12)

    def test_unstable_orthotropic(self):
        with self.assertRaises(MaterialError):
            Orthotropic3D(1.0, 1.0, 1.0, 0.4, 0.4, 0.4, 0.9, 0.9, 0.9)

    def test_dict_round_trip(self):
        layer = Anisotropic2D(E1=10.0, E2=2.0, G12=1.0, nu12=0.3, theta=0.5)
        self.assertEqual(MaterialModel.from_dict(layer.to_dict()), layer)
        field = Isotropic3D(E=[1.0, 2.0], nu=0.4)
        self.assertEqual(MaterialModel.from_dict(field.to_dict()).to_dict(), field.to_dict())
        with self.assertRaises(MaterialError):
            MaterialModel.from_dict({"variant": "Rubber"})


class TestElementStiffness(unittest.TestCase):
    def test_single_element_matches_batch(self):
        problem = square_problem(2)
        batch = element_stiffness_batch(problem.material, problem.mesh)
        np.testing.assert_allclose(element_stiffness(problem.material, problem.mesh, 3), batch[3])
        self.assertEqual(batch.shape, (problem.mesh.n_elements, 6, 6))

    def test_degenerate_element(self):
        with self.assertRaises(DegenerateElementError):
            p1_gradients(np.array([[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]]))


class TestAssembly(unittest.TestCase):
    def test_rigid_body_modes_are_annihilated(self):
        for mesh, material in (
            (build_structured_square(4), Isotropic2D(E=1e8, nu=0.4)),
            (build_structured_box(2, 1, 1), Isotropic3D(E=1e8, nu=0.4)),
        ):
            A = assemble_stiffness(ProblemDefinition(mesh, material))
            scale = A.frobenius_norm()
            for mode in rigid_body_modes(mesh):
                self.assertLess(np.linalg.norm(A @ mode), 1e-10 * scale * np.linalg.norm(mode))

    def test_patch_test(self):
        mesh = build_unstructured_2d(6, seed=1)
        A = assemble_stiffness(ProblemDefinition(mesh, Isotropic2D(E=1.0, nu=0.3)))
        gradient = np.array([[0.3, -0.2], [0.5, 0.1]])
        u = mesh.nodes @ gradient.T + np.array([0.7, -0.4])
        interior = np.setdiff1d(
            np.arange(mesh.n_nodes), mesh.tagged_nodes(["left", "right", "bottom", "top"])
        )
        forces = (A @ u)[interior]
        self.assertLess(np.abs(forces).max(), 1e-10 * A.frobenius_norm())

    def test_dof_count(self):
        mesh = build_structured_square(32)
        problem = ProblemDefinition(
            mesh, Isotropic2D(E=1.0, nu=0.4), tractions=[("right", (1.0, 0.0))], dirichlet=["left"]
        )
        A, f = assemble(problem)
        self.assertEqual(A.n * A.d, 2178)
        self.assertEqual(f.size, 2178)

    def test_stiffness_is_symmetric(self):
        A = assemble_stiffness(square_problem())
        self.assertTrue(A.is_symmetric(1e-12))

    def test_dirichlet_elimination(self):
        problem = square_problem(tractions=[("right", (1.0, 0.0))], dirichlet=["left"])
        system = assemble(problem)
        A, f = system
        self.assertFalse(system.singular)
        fixed = problem.dirichlet_nodes()
        np.testing.assert_array_equal(fixed, system.dirichlet_nodes)
        identities = np.broadcast_to(np.eye(2), (len(fixed), 2, 2))
        np.testing.assert_allclose(A.diagonal_blocks()[fixed], identities)
        np.testing.assert_allclose(f[fixed], 0.0)
        np.linalg.cholesky(A.to_dense())

    def test_traction_load_sums_to_the_resultant(self):
        problem = square_problem(tractions=[("right", (1e6, 0.0))], dirichlet=["left"])
        _, f = assemble(problem)
        np.testing.assert_allclose(f.sum(axis=0), [1e6, 0.0])

    def test_body_force(self):
        problem = square_problem(body_force=(0.0, -2.0), dirichlet=["left"])
        _, f = assemble(problem)
        free = np.setdiff1d(np.arange(problem.mesh.n_nodes), problem.dirichlet_nodes())
        self.assertLess(f[free, 1].sum(), 0.0)
        np.testing.assert_allclose(f[:, 0], 0.0)

    def test_missing_dirichlet_warns(self):
        with self.assertLogs("fns.v0.elasticity", level="WARNING"):
            system = assemble(square_problem())
        self.assertTrue(system.singular)

    def test_boundary_errors(self):
        with self.assertRaises(BoundaryTagError):
            square_problem(dirichlet=["front"])
        with self.assertRaises(BoundaryTagError):
            square_problem(tractions=[("left", (1.0, 0.0))], dirichlet=["left"])
        with self.assertRaises(MaterialError):
            square_problem(tractions=[("right", (1.0, 0.0, 0.0))])
        with self.assertRaises(MaterialError):
            ProblemDefinition(build_structured_box(1, 1, 1), Isotropic2D(E=1.0, nu=0.3))

    def test_assembly_is_reproducible(self):
        problem = square_problem(tractions=[("right", (1.0, 0.0))], dirichlet=["left"])
        first, second = assemble(problem), assemble(problem)
        np.testing.assert_array_equal(first.matrix.blocks, second.matrix.blocks)
        np.testing.assert_array_equal(first.rhs, second.rhs)
