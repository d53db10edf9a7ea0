# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Simplicial meshes for the elasticity solvers.

This library builds, reads, writes and queries 2D triangle and 3D tetrahedron meshes. The node
adjacency of a mesh (two nodes are adjacent iff they share an element) is the graph every other
library works on.

You can use this library as follows:

```python
from fns.v0.mesh import build_structured_square, save_mesh, load_mesh

mesh = build_structured_square(32)      # 1089 nodes on [0, 1]^2
assert mesh.n_nodes == 1089

save_mesh(mesh, "square.mesh")
same = load_mesh("square.mesh")
```

The ASCII format is: a header line `dim N M B`, then N lines of `dim` coordinates, M lines of
`dim + 1` zero-based node indices, and B lines of facet node indices followed by a tag name.
"""

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from fns.v0.config import Error

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 5

TAG_TOLERANCE = 1e-9
JITTER = 0.3
MAX_HALVINGS = 5


class MeshError(Error):
    """Raised when a mesh cannot be built or violates its invariants."""


class MeshParseError(MeshError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class BoundaryTag:
    """Axis-aligned boundary region, e.g. the plane x_0 = 0."""

    name: str
    axis: int
    value: float
    tolerance: float = TAG_TOLERANCE

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Return a boolean mask of the points lying on this region."""
        return np.abs(points[..., self.axis] - self.value) <= self.tolerance


def box_tags(extent: Sequence[float]) -> List[BoundaryTag]:
    """Return the side tags of the box [0, extent_0] x ... in a fixed order."""
    names = [("left", "right"), ("bottom", "top"), ("back", "front")]
    tags = []
    for axis, length in enumerate(extent):
        low, high = names[axis]
        tags.append(BoundaryTag(low, axis, 0.0))
        tags.append(BoundaryTag(high, axis, float(length)))
    return tags


def signed_volumes(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed measure of every simplex (area in 2D, volume in 3D)."""
    dim = nodes.shape[1]
    corners = nodes[elements]
    edges = corners[:, 1:, :] - corners[:, :1, :]
    return np.linalg.det(edges) / (2.0 if dim == 2 else 6.0)


def _orient(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    elements = np.array(elements, dtype=np.int64, copy=True)
    negative = signed_volumes(nodes, elements) < 0
    elements[negative, 0], elements[negative, 1] = (
        elements[negative, 1].copy(),
        elements[negative, 0].copy(),
    )
    return elements


def _element_faces(elements: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """All faces of all elements with sorted node indices, and the owning element."""
    n_vertices = elements.shape[1]
    faces = []
    owners = []
    for omitted in range(n_vertices):
        keep = [v for v in range(n_vertices) if v != omitted]
        faces.append(elements[:, keep])
        owners.append(np.arange(len(elements)))
    faces = np.sort(np.concatenate(faces), axis=1)
    return faces, np.concatenate(owners)


def _boundary_facets(elements: np.ndarray) -> np.ndarray:
    faces, _ = _element_faces(elements)
    unique, counts = np.unique(faces, axis=0, return_counts=True)
    return unique[counts == 1]


def _tag_facets(
    nodes: np.ndarray, facets: np.ndarray, tags: Iterable[BoundaryTag]
) -> Tuple[np.ndarray, Tuple[str, ...]]:
    names = np.full(len(facets), "boundary", dtype=object)
    assigned = np.zeros(len(facets), dtype=bool)
    for tag in tags:
        on_region = tag.contains(nodes[facets]).all(axis=1) & ~assigned
        names[on_region] = tag.name
        assigned |= on_region
    return facets, tuple(str(n) for n in names)


class MeshTopology:
    """Immutable simplicial mesh with tagged boundary facets."""

    def __init__(
        self,
        nodes: np.ndarray,
        elements: np.ndarray,
        facets: np.ndarray,
        facet_tags: Sequence[str],
        *,
        validate: bool = True,
    ):
        """Build a mesh and check its invariants.

        Args:
            nodes: (N, dim) coordinates.
            elements: (M, dim + 1) node indices, any orientation.
            facets: (B, dim) node indices of the boundary facets.
            facet_tags: one tag name per facet.
            validate: check index ranges, facet ownership and connectivity.
        """
        nodes = np.asarray(nodes, dtype=np.float64)
        if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
            raise MeshError(f"nodes must have shape (N, 2) or (N, 3), got {nodes.shape}")
        dim = nodes.shape[1]
        elements = np.asarray(elements, dtype=np.int64).reshape(-1, dim + 1)
        facets = np.asarray(facets, dtype=np.int64).reshape(-1, dim)
        if len(facet_tags) != len(facets):
            raise MeshError("every boundary facet needs exactly one tag")

        if validate:
            self._check_indices(len(nodes), elements, facets)
        elements = _orient(nodes, elements)

        self._nodes = nodes
        self._elements = elements
        self._facets = facets
        self._facet_tags = tuple(facet_tags)
        for array in (self._nodes, self._elements, self._facets):
            array.setflags(write=False)
        self._adjacency: Optional[sp.csr_matrix] = None

        if validate:
            self._check_volumes()
            self._check_facets()
            if not self.is_connected():
                raise MeshError("node adjacency graph is not connected")

    @staticmethod
    def _check_indices(n_nodes: int, elements: np.ndarray, facets: np.ndarray):
        for name, array in (("element", elements), ("facet", facets)):
            if array.size and (array.min() < 0 or array.max() >= n_nodes):
                raise MeshError(f"{name} node index out of range [0, {n_nodes})")

    def _check_volumes(self):
        volumes = self.signed_volumes()
        if len(volumes) == 0:
            raise MeshError("mesh has no elements")
        if volumes.min() <= 0:
            raise MeshError(f"degenerate element {int(np.argmin(volumes))}")

    def _check_facets(self):
        faces, _ = _element_faces(self._elements)
        unique, counts = np.unique(faces, axis=0, return_counts=True)
        owners = {tuple(f): c for f, c in zip(unique.tolist(), counts.tolist())}
        for index, facet in enumerate(np.sort(self._facets, axis=1).tolist()):
            if owners.get(tuple(facet)) != 1:
                raise MeshError(f"boundary facet {index} does not belong to exactly one element")

    @property
    def dim(self) -> int:
        """Spatial dimension, 2 or 3."""
        return self._nodes.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (N, dim)."""
        return self._nodes

    @property
    def elements(self) -> np.ndarray:
        """Positively oriented simplices, shape (M, dim + 1)."""
        return self._elements

    @property
    def facets(self) -> np.ndarray:
        """Boundary facets, shape (B, dim)."""
        return self._facets

    @property
    def facet_tags(self) -> Tuple[str, ...]:
        """Tag name of every boundary facet."""
        return self._facet_tags

    @property
    def n_nodes(self) -> int:
        """Number of nodes N."""
        return len(self._nodes)

    @property
    def n_elements(self) -> int:
        """Number of elements M."""
        return len(self._elements)

    @property
    def tags(self) -> Tuple[str, ...]:
        """Distinct facet tag names in order of first appearance."""
        return tuple(dict.fromkeys(self._facet_tags))

    @property
    def node_tags(self) -> Dict[int, frozenset]:
        """Per-node marker sets derived from the facet tags (untagged nodes are omitted)."""
        markers: Dict[int, set] = {}
        for facet, tag in zip(self._facets.tolist(), self._facet_tags):
            for node in facet:
                markers.setdefault(node, set()).add(tag)
        return {node: frozenset(names) for node, names in sorted(markers.items())}

    def facets_with_tag(self, tag: str) -> np.ndarray:
        """Return the facets carrying `tag`."""
        if tag not in self.tags:
            raise MeshError(f"unknown boundary tag '{tag}'")
        mask = np.array([t == tag for t in self._facet_tags], dtype=bool)
        return self._facets[mask]

    def tagged_nodes(self, tags: Union[str, Iterable[str]]) -> np.ndarray:
        """Return the sorted nodes touching any facet carrying one of `tags`."""
        if isinstance(tags, str):
            tags = [tags]
        facets = [self.facets_with_tag(tag) for tag in tags]
        if not facets:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([f.ravel() for f in facets]))

    def signed_volumes(self) -> np.ndarray:
        """Signed element measures; positive for every element of a valid mesh."""
        return signed_volumes(self._nodes, self._elements)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric node adjacency without self loops, as a 0/1 CSR matrix."""
        if self._adjacency is None:
            pairs = np.array(
                list(itertools.permutations(range(self.dim + 1), 2)), dtype=np.int64
            )
            rows = self._elements[:, pairs[:, 0]].ravel()
            cols = self._elements[:, pairs[:, 1]].ravel()
            adjacency = sp.coo_matrix(
                (np.ones(len(rows)), (rows, cols)), shape=(self.n_nodes, self.n_nodes)
            ).tocsr()
            adjacency.data[:] = 1.0
            adjacency.sort_indices()
            self._adjacency = adjacency
        return self._adjacency

    def edges(self) -> np.ndarray:
        """Unique undirected edges (i < j), shape (E, 2), lexicographically sorted."""
        upper = sp.triu(self.adjacency(), k=1).tocoo()
        edges = np.column_stack([upper.row, upper.col]).astype(np.int64)
        return edges[np.lexsort((edges[:, 1], edges[:, 0]))]

    def neighbors(self, node: int) -> np.ndarray:
        """Nodes sharing an element with `node`."""
        adjacency = self.adjacency()
        return adjacency.indices[adjacency.indptr[node] : adjacency.indptr[node + 1]]

    def degree(self) -> np.ndarray:
        """Number of neighbours of every node."""
        return np.diff(self.adjacency().indptr)

    def is_connected(self) -> bool:
        """Report if the node adjacency graph has a single component."""
        n_components, _ = connected_components(self.adjacency(), directed=False)
        return n_components == 1

    def euler_characteristic(self) -> int:
        """V - E + F for 2D meshes (1 for a triangulated disc)."""
        if self.dim != 2:
            raise MeshError("Euler characteristic is only defined here for 2D meshes")
        return self.n_nodes - len(self.edges()) + self.n_elements

    def spacing(self) -> float:
        """Nominal node spacing: bounding box span divided by (N^{1/dim} - 1)."""
        span = np.max(self._nodes.max(axis=0) - self._nodes.min(axis=0))
        per_axis = max(round(self.n_nodes ** (1.0 / self.dim)) - 1, 1)
        return float(span / per_axis)

    def axis_spacing(self) -> np.ndarray:
        """Node spacing along each axis: median |dx_i| over the edges that move along axis i.

        Exact for the structured builders, a nominal value for jittered meshes; 0 on a flat axis.
        """
        edges = self.edges()
        steps = np.abs(self._nodes[edges[:, 1]] - self._nodes[edges[:, 0]])
        span = self._nodes.max(axis=0) - self._nodes.min(axis=0)
        spacing = np.zeros(self.dim)
        for axis in range(self.dim):
            moving = steps[:, axis][steps[:, axis] > 1e-9 * max(span[axis], 1e-300)]
            if moving.size:
                spacing[axis] = np.median(moving)
        return spacing

    def __eq__(self, other) -> bool:
        """Meshes are equal when coordinates, elements and tagged facets are identical."""
        if not isinstance(other, MeshTopology):
            return NotImplemented
        return (
            np.array_equal(self._nodes, other._nodes)
            and np.array_equal(self._elements, other._elements)
            and np.array_equal(self._facets, other._facets)
            and self._facet_tags == other._facet_tags
        )

    __hash__ = None

    def __repr__(self) -> str:
        """Short summary of the mesh."""
        return f"<MeshTopology dim={self.dim} nodes={self.n_nodes} elements={self.n_elements}>"


def from_simplices(
    nodes: np.ndarray, elements: np.ndarray, tags: Iterable[BoundaryTag]
) -> MeshTopology:
    """Build a mesh from raw simplices, extracting and tagging the boundary facets."""
    nodes = np.asarray(nodes, dtype=np.float64)
    elements = _orient(nodes, np.asarray(elements, dtype=np.int64))
    facets, names = _tag_facets(nodes, _boundary_facets(elements), tags)
    return MeshTopology(nodes, elements, facets, names)


def build_structured_square(n: int) -> MeshTopology:
    """Uniform triangulation of [0, 1]^2 with n subdivisions per side.

    Every cell is split along its lower-left to upper-right diagonal, so interior nodes have
    six neighbours.
    """
    if n < 1:
        raise MeshError(f"subdivisions must be >= 1, got {n}")
    ticks = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(ticks, ticks, indexing="xy")
    nodes = np.column_stack([x.ravel(), y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    logger.debug("structured square mesh with %d subdivisions", n)
    return from_simplices(nodes, elements, box_tags((1.0, 1.0)))


def build_structured_box(
    nx: int, ny: int, nz: int, extent: Sequence[float] = (3.0, 1.0, 1.0)
) -> MeshTopology:
    """Uniform tetrahedral mesh of a box, each hexahedral cell split into six tetrahedra.

    The split follows the cell diagonal from the lowest to the highest corner, which is the same
    in every cell and therefore conforming. The x = 0 side is tagged "left" (Dirichlet in the
    datasets) and the x = extent_x side "right" (traction).
    """
    counts = (nx, ny, nz)
    if min(counts) < 1:
        raise MeshError(f"subdivisions must be >= 1, got {counts}")
    if len(extent) != 3 or min(extent) <= 0:
        raise MeshError(f"extent must hold three positive lengths, got {tuple(extent)}")

    axes = [np.linspace(0.0, float(length), count + 1) for length, count in zip(extent, counts)]
    grid = np.meshgrid(*axes, indexing="ij")
    # x varies fastest in the node numbering
    nodes = np.column_stack([g.transpose(2, 1, 0).ravel() for g in grid])

    def index(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    cells = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = (a.ravel() for a in cells)
    corner = {
        offset: index(i + offset[0], j + offset[1], k + offset[2])
        for offset in itertools.product((0, 1), repeat=3)
    }
    tets = []
    for order in itertools.permutations(range(3)):
        path = [(0, 0, 0)]
        step = [0, 0, 0]
        for axis in order:
            step[axis] = 1
            path.append(tuple(step))
        tets.append(np.column_stack([corner[p] for p in path]))
    elements = np.stack(tets, axis=1).reshape(-1, 4)
    logger.debug("structured box mesh %s over %s", counts, tuple(extent))
    return from_simplices(nodes, elements, box_tags(extent))


def build_unstructured_2d(n: int, seed: int) -> MeshTopology:
    """Delaunay triangulation of a jittered (n + 1) x (n + 1) grid on [0, 1]^2.

    Interior nodes move by a seeded uniform perturbation of at most 0.3 h per axis, boundary
    nodes stay fixed. A degenerate triangulation is regenerated with the perturbation halved.
    """
    if n < 2:
        raise MeshError(f"resolution must be >= 2, got {n}")
    h = 1.0 / n
    ticks = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(ticks, ticks, indexing="xy")
    grid = np.column_stack([x.ravel(), y.ravel()])
    interior = np.all((grid > TAG_TOLERANCE) & (grid < 1.0 - TAG_TOLERANCE), axis=1)

    jitter = JITTER
    for attempt in range(MAX_HALVINGS + 1):
        rng = np.random.default_rng(seed)
        nodes = grid.copy()
        nodes[interior] += rng.uniform(-jitter * h, jitter * h, size=(int(interior.sum()), 2))
        triangulation = Delaunay(nodes)
        elements = _orient(nodes, triangulation.simplices)
        areas = signed_volumes(nodes, elements)
        dropped = len(getattr(triangulation, "coplanar", ())) > 0
        if not dropped and areas.min() >= 1e-12 * h * h:
            logger.debug("unstructured mesh accepted after %d halvings", attempt)
            return from_simplices(nodes, elements, box_tags((1.0, 1.0)))
        logger.debug("degenerate triangulation with jitter %.3g, halving", jitter)
        jitter /= 2.0
    raise MeshError(f"degenerate triangulation after {MAX_HALVINGS} halvings (seed {seed})")


def save_mesh(mesh: MeshTopology, path: Union[str, Path]):
    """Write `mesh` in the ASCII mesh format."""
    lines = [f"{mesh.dim} {mesh.n_nodes} {mesh.n_elements} {len(mesh.facets)}"]
    lines += [" ".join(repr(float(c)) for c in node) for node in mesh.nodes.tolist()]
    lines += [" ".join(str(i) for i in element) for element in mesh.elements.tolist()]
    lines += [
        " ".join(str(i) for i in facet) + f" {tag}"
        for facet, tag in zip(mesh.facets.tolist(), mesh.facet_tags)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_ints(fields: List[str], count: int, n_nodes: int, line: int, what: str) -> List[int]:
    if len(fields) != count:
        raise MeshParseError(
            line, f"dim mismatch: {what} has {len(fields)} node indices, expected {count}"
        )
    try:
        values = [int(f) for f in fields]
    except ValueError:
        raise MeshParseError(line, f"{what} indices must be integers") from None
    for value in values:
        if not 0 <= value < n_nodes:
            raise MeshParseError(line, f"{what} node index {value} out of range [0, {n_nodes})")
    return values


def load_mesh(path: Union[str, Path]) -> MeshTopology:
    """Read a mesh written by `save_mesh`; errors name the offending line."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise MeshParseError(1, "empty mesh file")
    try:
        dim, n_nodes, n_elements, n_facets = (int(v) for v in lines[0].split())
    except ValueError:
        raise MeshParseError(1, "malformed header, expected 'dim N M B'") from None
    if dim not in (2, 3):
        raise MeshParseError(1, f"dim must be 2 or 3, got {dim}")
    if len(lines) < 1 + n_nodes + n_elements + n_facets:
        raise MeshParseError(len(lines), "file ends before all declared entries were read")

    nodes = []
    for offset in range(n_nodes):
        number = 2 + offset
        fields = lines[number - 1].split()
        if len(fields) != dim:
            raise MeshParseError(number, f"dim mismatch: expected {dim} coordinates")
        try:
            nodes.append([float(f) for f in fields])
        except ValueError:
            raise MeshParseError(number, "coordinates must be floats") from None

    elements = []
    start = 2 + n_nodes
    for offset in range(n_elements):
        number = start + offset
        fields = lines[number - 1].split()
        elements.append(_parse_ints(fields, dim + 1, n_nodes, number, "element"))

    facets, tags = [], []
    start += n_elements
    for offset in range(n_facets):
        number = start + offset
        fields = lines[number - 1].split()
        facets.append(_parse_ints(fields[:-1], dim, n_nodes, number, "facet"))
        tags.append(fields[-1] if fields else "")

    try:
        return MeshTopology(np.array(nodes), np.array(elements), np.array(facets), tags)
    except MeshError as e:
        raise MeshParseError(len(lines), e.message) from e
