# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Linear elasticity with P1 finite elements.

This library evaluates the Voigt stiffness of the supported material models, builds P1 element
stiffness matrices and assembles the global block system `A u = f` with one d x d block per pair
of adjacent nodes.

Supported materials:

- `Isotropic2D` / `Isotropic3D`: per-node Young's modulus field E and a constant Poisson ratio;
- `Anisotropic2D`: orthotropic layer rotated by an angle theta (Bond transformation);
- `Orthotropic3D`: stiffness obtained by inverting the orthotropic compliance matrix.

You can use this library as follows:

```python
from fns.v0.mesh import build_structured_square
from fns.v0.elasticity import Isotropic2D, ProblemDefinition, assemble

mesh = build_structured_square(32)
problem = ProblemDefinition(
    mesh,
    Isotropic2D(E=np.full(mesh.n_nodes, 1e8), nu=0.4),
    tractions=[("right", (1e6, 0.0))],
    dirichlet=["left"],
)
A, f = assemble(problem)
```

Dirichlet conditions fix every component of the constrained nodes. They are imposed by
symmetric elimination: constrained rows and columns are zeroed and the diagonal block set to the
identity, so the block layout stays uniform.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from fns.v0.blocks import BlockCsrMatrix
from fns.v0.config import Error
from fns.v0.mesh import MeshTopology

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 6


class MaterialError(Error):
    """Raised when material parameters are invalid or give a non positive definite stiffness."""


class DegenerateElementError(Error):
    """Raised when an element has zero measure."""


class BoundaryTagError(Error):
    """Raised when a boundary condition names a missing or conflicting tag."""


def lame(E, nu: float) -> Tuple[np.ndarray, np.ndarray]:
    """Lamé constants (lambda, mu) of Young's modulus E and Poisson ratio nu."""
    E = np.asarray(E, dtype=np.float64)
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def isotropic_voigt(lam, mu, dim: int) -> np.ndarray:
    """Isotropic Voigt stiffness for arrays of Lamé constants, shape (..., k, k)."""
    lam = np.asarray(lam, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    k = 3 if dim == 2 else 6
    C = np.zeros(lam.shape + (k, k))
    for i in range(dim):
        for j in range(dim):
            C[..., i, j] = lam
        C[..., i, i] = lam + 2.0 * mu
    for i in range(dim, k):
        C[..., i, i] = mu
    return C


def bond_matrix(theta: float) -> np.ndarray:
    """Strain transformation T of a rotation by theta in Voigt form (engineering shear)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [c * c, s * s, c * s],
            [s * s, c * c, -c * s],
            [-2.0 * c * s, 2.0 * c * s, c * c - s * s],
        ]
    )


def _check_spd(C: np.ndarray, what: str):
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise MaterialError(f"{what} stiffness is not positive definite") from None


class MaterialModel:
    """Base class of the material models."""

    variant = ""
    dim = 0

    def voigt_batch(self, elements: np.ndarray) -> np.ndarray:
        """Voigt stiffness of every element, shape (M, k, k)."""
        raise NotImplementedError

    def scaled(self, factor: float) -> "MaterialModel":
        """Return the material with every modulus multiplied by `factor`."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        """Return the parameters as plain Python values."""
        raise NotImplementedError

    @staticmethod
    def from_dict(data: dict) -> "MaterialModel":
        """Rebuild a material written by `to_dict`."""
        kinds = {
            cls.variant: cls for cls in (Isotropic2D, Isotropic3D, Anisotropic2D, Orthotropic3D)
        }
        params = dict(data)
        try:
            cls = kinds[params.pop("variant")]
        except KeyError as e:
            raise MaterialError(f"unknown material variant {e}") from None
        return cls(**params)


@dataclass(frozen=True, eq=False)
class _Isotropic(MaterialModel):
    E: np.ndarray
    nu: float

    def __post_init__(self):
        E = np.atleast_1d(np.asarray(self.E, dtype=np.float64))
        E.setflags(write=False)
        object.__setattr__(self, "E", E)
        if not 0.0 <= self.nu < 0.5:
            raise MaterialError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")
        if not np.all(E > 0) or not np.all(np.isfinite(E)):
            raise MaterialError("Young's modulus must be positive and finite")

    def element_modulus(self, elements: np.ndarray) -> np.ndarray:
        """Arithmetic mean of the nodal moduli over each element (constant fields broadcast)."""
        if self.E.size == 1:
            return np.full(len(elements), self.E[0])
        return self.E[elements].mean(axis=1)

    def voigt_batch(self, elements: np.ndarray) -> np.ndarray:
        """Voigt stiffness of every element, shape (M, k, k)."""
        lam, mu = lame(self.element_modulus(np.atleast_2d(elements)), self.nu)
        return isotropic_voigt(lam, mu, self.dim)

    def scaled(self, factor: float) -> "MaterialModel":
        """Return the material with E multiplied by `factor`."""
        return type(self)(E=self.E * factor, nu=self.nu)

    def to_dict(self) -> dict:
        """Return the parameters as plain Python values."""
        return {"variant": self.variant, "E": self.E.tolist(), "nu": float(self.nu)}


class Isotropic2D(_Isotropic):
    """Plane isotropic material with a nodal Young's modulus field."""

    variant = "Isotropic2D"
    dim = 2


class Isotropic3D(_Isotropic):
    """Isotropic solid with a nodal Young's modulus field."""

    variant = "Isotropic3D"
    dim = 3


@dataclass(frozen=True)
class Anisotropic2D(MaterialModel):
    """Orthotropic layer with principal axes rotated by `theta` from the x axis."""

    E1: float
    E2: float
    G12: float
    nu12: float
    theta: float = 0.0

    variant = "Anisotropic2D"
    dim = 2

    def __post_init__(self):
        if min(self.E1, self.E2, self.G12) <= 0:
            raise MaterialError("moduli must be positive")
        self.voigt()

    @property
    def nu21(self) -> float:
        """Minor Poisson ratio from reciprocity nu21 E1 = nu12 E2."""
        return self.nu12 * self.E2 / self.E1

    def principal_voigt(self) -> np.ndarray:
        """Stiffness in the material principal axes."""
        nu12, nu21 = self.nu12, self.nu21
        scale = 1.0 / (1.0 - nu12 * nu21)
        return scale * np.array(
            [
                [self.E1, nu21 * self.E1, 0.0],
                [nu12 * self.E2, self.E2, 0.0],
                [0.0, 0.0, self.G12 * (1.0 - nu12 * nu21)],
            ]
        )

    def voigt(self) -> np.ndarray:
        """Stiffness in the global axes, T^T C_hat T."""
        T = bond_matrix(self.theta)
        C = T.T @ self.principal_voigt() @ T
        _check_spd(C, "anisotropic")
        return C

    def voigt_batch(self, elements: np.ndarray) -> np.ndarray:
        """The constant stiffness repeated for every element."""
        return np.broadcast_to(self.voigt(), (len(np.atleast_2d(elements)), 3, 3))

    def scaled(self, factor: float) -> "MaterialModel":
        """Return the material with every modulus multiplied by `factor`."""
        return Anisotropic2D(
            self.E1 * factor, self.E2 * factor, self.G12 * factor, self.nu12, self.theta
        )

    def to_dict(self) -> dict:
        """Return the parameters as plain Python values."""
        return {
            "variant": self.variant,
            "E1": float(self.E1),
            "E2": float(self.E2),
            "G12": float(self.G12),
            "nu12": float(self.nu12),
            "theta": float(self.theta),
        }


@dataclass(frozen=True)
class Orthotropic3D(MaterialModel):
    """Orthotropic solid with principal axes aligned with the coordinate axes."""

    E1: float
    E2: float
    E3: float
    G12: float
    G23: float
    G31: float
    nu12: float
    nu13: float
    nu23: float

    variant = "Orthotropic3D"
    dim = 3

    def __post_init__(self):
        if min(self.E1, self.E2, self.E3, self.G12, self.G23, self.G31) <= 0:
            raise MaterialError("moduli must be positive")
        self.voigt()

    def compliance(self) -> np.ndarray:
        """Compliance matrix in Voigt order (xx, yy, zz, yz, xz, xy)."""
        E1, E2, E3 = self.E1, self.E2, self.E3
        # minor ratios from reciprocity nu_ij E_j = nu_ji E_i
        nu21 = self.nu12 * E2 / E1
        nu31 = self.nu13 * E3 / E1
        nu32 = self.nu23 * E3 / E2
        S = np.zeros((6, 6))
        S[:3, :3] = [
            [1.0 / E1, -nu21 / E2, -nu31 / E3],
            [-self.nu12 / E1, 1.0 / E2, -nu32 / E3],
            [-self.nu13 / E1, -self.nu23 / E2, 1.0 / E3],
        ]
        S[3, 3] = 1.0 / self.G23
        S[4, 4] = 1.0 / self.G31
        S[5, 5] = 1.0 / self.G12
        return S

    def voigt(self) -> np.ndarray:
        """Stiffness as the inverse of the compliance."""
        S = self.compliance()
        # compare against the diagonal so the check is independent of the moduli scale
        scale = np.sqrt(np.outer(np.diag(S), np.diag(S)))
        _check_spd(S / scale, "orthotropic compliance")
        if np.linalg.cond(S / scale) > 1e14:
            raise MaterialError("orthotropic compliance matrix is singular")
        C = np.linalg.inv(S)
        return 0.5 * (C + C.T)

    def voigt_batch(self, elements: np.ndarray) -> np.ndarray:
        """The constant stiffness repeated for every element."""
        return np.broadcast_to(self.voigt(), (len(np.atleast_2d(elements)), 6, 6))

    def scaled(self, factor: float) -> "MaterialModel":
        """Return the material with every modulus multiplied by `factor`."""
        return Orthotropic3D(
            self.E1 * factor,
            self.E2 * factor,
            self.E3 * factor,
            self.G12 * factor,
            self.G23 * factor,
            self.G31 * factor,
            self.nu12,
            self.nu13,
            self.nu23,
        )

    def to_dict(self) -> dict:
        """Return the parameters as plain Python values."""
        names = ("E1", "E2", "E3", "G12", "G23", "G31", "nu12", "nu13", "nu23")
        return {"variant": self.variant, **{n: float(getattr(self, n)) for n in names}}


def voigt_stiffness(
    material: MaterialModel, element: Optional[Sequence[int]] = None
) -> np.ndarray:
    """Voigt stiffness C of `material` on one element (node indices; needed for nodal fields)."""
    if element is None:
        if isinstance(material, _Isotropic) and material.E.size > 1:
            raise MaterialError("a nodal modulus field needs the element's node indices")
        element = [0] * (material.dim + 1)
    return np.array(material.voigt_batch(np.atleast_2d(element))[0])


def p1_gradients(corners: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of the P1 basis functions and the measure of each simplex.

    Args:
        corners: (M, dim + 1, dim) vertex coordinates.

    Returns:
        gradients of shape (M, dim + 1, dim) and measures of shape (M,).
    """
    M, n_vertices, dim = corners.shape
    system = np.concatenate([np.ones((M, n_vertices, 1)), corners], axis=2)
    determinants = np.linalg.det(system)
    measures = np.abs(determinants) / (2.0 if dim == 2 else 6.0)
    scale = np.abs(corners).max(initial=1.0)
    degenerate = measures <= 1e-14 * scale**dim
    if degenerate.any():
        raise DegenerateElementError(f"element {int(np.argmax(degenerate))} has zero measure")
    inverse = np.linalg.inv(system)
    return inverse[:, 1:, :].transpose(0, 2, 1), measures


def strain_displacement(gradients: np.ndarray) -> np.ndarray:
    """P1 strain-displacement matrices B, shape (M, k, dim (dim + 1)), node-major DOFs."""
    M, n_vertices, dim = gradients.shape
    k = 3 if dim == 2 else 6
    B = np.zeros((M, k, n_vertices * dim))
    for a in range(n_vertices):
        g = gradients[:, a, :]
        for c in range(dim):
            B[:, c, a * dim + c] = g[:, c]
        if dim == 2:
            B[:, 2, a * dim + 0] = g[:, 1]
            B[:, 2, a * dim + 1] = g[:, 0]
        else:
            # yz, xz, xy
            for row, (p, q) in zip((3, 4, 5), ((1, 2), (0, 2), (0, 1))):
                B[:, row, a * dim + p] = g[:, q]
                B[:, row, a * dim + q] = g[:, p]
    return B


def element_stiffness_batch(material: MaterialModel, mesh: MeshTopology) -> np.ndarray:
    """Stiffness matrices |K| B^T C B of all elements, shape (M, d(d+1), d(d+1))."""
    if material.dim != mesh.dim:
        raise MaterialError(f"{material.variant} material on a {mesh.dim}D mesh")
    gradients, measures = p1_gradients(mesh.nodes[mesh.elements])
    B = strain_displacement(gradients)
    C = material.voigt_batch(mesh.elements)
    return measures[:, None, None] * np.einsum("mki,mkl,mlj->mij", B, C, B)


def element_stiffness(
    material: MaterialModel, mesh: MeshTopology, element_index: int
) -> np.ndarray:
    """Stiffness matrix of a single element."""
    element = mesh.elements[element_index : element_index + 1]
    gradients, measures = p1_gradients(mesh.nodes[element])
    B = strain_displacement(gradients)[0]
    C = material.voigt_batch(element)[0]
    return measures[0] * B.T @ C @ B


@dataclass(frozen=True, eq=False)
class ProblemDefinition:
    """A boundary value problem on a mesh.

    Args:
        mesh: the discretised domain.
        material: material model of matching dimension.
        body_force: constant body force vector.
        tractions: (tag, constant traction vector) pairs.
        dirichlet: tags whose nodes are fixed in every component.
    """

    mesh: MeshTopology
    material: MaterialModel
    body_force: Optional[Sequence[float]] = None
    tractions: List[Tuple[str, Sequence[float]]] = field(default_factory=list)
    dirichlet: List[str] = field(default_factory=list)

    def __post_init__(self):
        dim = self.mesh.dim
        if self.material.dim != dim:
            raise MaterialError(f"{self.material.variant} material on a {dim}D mesh")
        force = np.zeros(dim) if self.body_force is None else np.asarray(self.body_force, float)
        if force.shape != (dim,):
            raise MaterialError(f"body force must have {dim} components")
        object.__setattr__(self, "body_force", force)
        tags = set(self.mesh.tags)
        for tag, vector in self.tractions:
            if tag not in tags:
                raise BoundaryTagError(f"traction tag '{tag}' is not a boundary tag of the mesh")
            if np.shape(vector) != (dim,):
                raise MaterialError(f"traction on '{tag}' must have {dim} components")
        for tag in self.dirichlet:
            if tag not in tags:
                raise BoundaryTagError(f"Dirichlet tag '{tag}' is not a boundary tag of the mesh")
        overlap = set(self.dirichlet) & {tag for tag, _ in self.tractions}
        if overlap:
            raise BoundaryTagError(f"tags {sorted(overlap)} are both Dirichlet and Neumann")

    @property
    def d(self) -> int:
        """Unknowns per node."""
        return self.mesh.dim

    def dirichlet_nodes(self) -> np.ndarray:
        """Sorted indices of the constrained nodes."""
        return self.mesh.tagged_nodes(self.dirichlet)

    def traction(self, tag: str) -> np.ndarray:
        """Traction vector applied on `tag`."""
        for name, vector in self.tractions:
            if name == tag:
                return np.asarray(vector, dtype=np.float64)
        raise BoundaryTagError(f"no traction is applied on '{tag}'")


@dataclass
class LinearSystem:
    """Assembled system; unpacks as (A, f)."""

    matrix: BlockCsrMatrix
    rhs: np.ndarray
    dirichlet_nodes: np.ndarray
    singular: bool = False

    def __iter__(self) -> Iterator:
        """Yield the matrix and the right-hand side."""
        return iter((self.matrix, self.rhs))


def facet_measures(mesh: MeshTopology, facets: np.ndarray) -> np.ndarray:
    """Length (2D) or area (3D) of boundary facets."""
    corners = mesh.nodes[facets]
    if mesh.dim == 2:
        return np.linalg.norm(corners[:, 1] - corners[:, 0], axis=1)
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def apply_traction(problem: ProblemDefinition, tag: str) -> np.ndarray:
    """Load vector of the traction on `tag`: each facet node gets t |facet| / (#facet nodes)."""
    mesh = problem.mesh
    t = problem.traction(tag)
    facets = mesh.facets_with_tag(tag)
    share = facet_measures(mesh, facets) / mesh.dim
    load = np.zeros((mesh.n_nodes, mesh.dim))
    np.add.at(load, facets.ravel(), np.repeat(share, mesh.dim)[:, None] * t[None, :])
    return load


def body_force_load(problem: ProblemDefinition) -> np.ndarray:
    """Load vector of the constant body force, lumped to the element vertices."""
    mesh = problem.mesh
    load = np.zeros((mesh.n_nodes, mesh.dim))
    if not np.any(problem.body_force):
        return load
    share = np.abs(mesh.signed_volumes()) / (mesh.dim + 1)
    np.add.at(
        load,
        mesh.elements.ravel(),
        np.repeat(share, mesh.dim + 1)[:, None] * problem.body_force[None, :],
    )
    return load


def assemble_stiffness(problem: ProblemDefinition) -> BlockCsrMatrix:
    """Global stiffness matrix before boundary conditions.

    Element contributions are accumulated in element order, so the result is bitwise
    reproducible.
    """
    mesh = problem.mesh
    d = mesh.dim
    n_vertices = d + 1
    local = element_stiffness_batch(problem.material, mesh)
    local = local.reshape(-1, n_vertices, d, n_vertices, d).transpose(0, 1, 3, 2, 4)
    A = BlockCsrMatrix.from_pattern(mesh.adjacency(), d)
    rows = np.repeat(mesh.elements, n_vertices, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n_vertices)).ravel()
    np.add.at(A.blocks, A.positions(rows, cols), local.reshape(-1, d, d))
    return A


def eliminate_dirichlet(
    A: BlockCsrMatrix,
    f: np.ndarray,
    nodes: np.ndarray,
    values: Optional[np.ndarray] = None,
) -> Tuple[BlockCsrMatrix, np.ndarray]:
    """Impose u = values on `nodes` by symmetric elimination (homogeneous when values is None)."""
    f = np.array(f, dtype=np.float64, copy=True)
    constrained = np.zeros(A.n, dtype=bool)
    constrained[nodes] = True
    prescribed = np.zeros_like(f)
    if values is not None:
        prescribed[constrained] = np.asarray(values, dtype=np.float64)[constrained]
        f -= A @ prescribed
    A = A.copy()
    rows = A.rows()
    touched = constrained[rows] | constrained[A.indices]
    A.blocks[touched] = 0.0
    A.blocks[touched & (rows == A.indices)] = np.eye(A.d)
    f[constrained] = prescribed[constrained]
    return A, f


def assemble(
    problem: ProblemDefinition, dirichlet_values: Optional[np.ndarray] = None
) -> LinearSystem:
    """Assemble the block system of `problem` with boundary conditions applied.

    Args:
        problem: the boundary value problem.
        dirichlet_values: optional (N, d) field whose values are prescribed on the Dirichlet
            nodes; zero by default.

    Returns:
        the `LinearSystem`, which unpacks as (A, f).
    """
    A = assemble_stiffness(problem)
    f = body_force_load(problem)
    for tag, _ in problem.tractions:
        f += apply_traction(problem, tag)
    nodes = problem.dirichlet_nodes()
    singular = len(nodes) == 0
    if singular:
        logger.warning("no Dirichlet nodes: the assembled system is singular")
    A, f = eliminate_dirichlet(A, f, nodes, dirichlet_values)
    logger.debug(
        "assembled %d nodes, %d blocks, %d constrained nodes", A.n, A.nnzb, len(nodes)
    )
    return LinearSystem(A, f, nodes, singular)


def rigid_body_modes(mesh: MeshTopology) -> np.ndarray:
    """Zero-strain displacement fields, shape (3, N, 2) in 2D and (6, N, 3) in 3D."""
    x = mesh.nodes
    n, dim = x.shape
    modes: List[np.ndarray] = []
    for axis in range(dim):
        mode = np.zeros((n, dim))
        mode[:, axis] = 1.0
        modes.append(mode)
    rotations: Dict[int, List[Tuple[int, int]]] = {2: [(0, 1)], 3: [(0, 1), (1, 2), (0, 2)]}
    for p, q in rotations[dim]:
        mode = np.zeros((n, dim))
        mode[:, p] = -x[:, q]
        mode[:, q] = x[:, p]
        modes.append(mode)
    return np.stack(modes)
