# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Block sparse linear algebra and the graph encoding of block systems.

A system `A u = f` with d unknowns per mesh node is stored as a `BlockCsrMatrix`: a CSR
structure over nodes whose nonzeros are dense d x d blocks. Nodal vectors (`BlockVector`) are
NumPy arrays of shape (N, d); the flattened view is the node-major DOF vector.

The same system can be re-encoded as a `GraphSystem`: one graph node per mesh node carrying the
right-hand side block f_i, and one directed edge (j -> i) per nonzero block carrying the
row-major flattening of A_ij. Self loops carry the diagonal blocks.

You can use this library as follows:

```python
from fns.v0.blocks import to_graph, spmv_message_passing, spmv_direct

graph = to_graph(A, f)
w = spmv_message_passing(graph, v)      # equals spmv_direct(A, v)
```

Matrices are exported as text with one nonzero block per line, `i j d b00 b01 ...`; vectors with
one node per line.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from fns.v0.config import Error

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 5

CONDITION_LIMIT = 1e14
SPD_TOLERANCE = 1e-10


class BlockStructureError(Error):
    """Raised when a block CSR structure is invalid."""


class DimensionMismatchError(Error):
    """Raised when operand shapes do not agree."""


class NonSpdError(Error):
    """Raised when an energy norm is requested from a matrix that is not positive definite."""


class SingularBlockError(Error):
    """Raised when a diagonal block cannot be inverted."""

    def __init__(self, node: int, condition: float):
        super().__init__(f"diagonal block of node {node} is singular (condition {condition:.3g})")
        self.node = node


def as_block_vector(values: np.ndarray, d: int) -> np.ndarray:
    """Return `values` as an (N, d) float array, accepting flat DOF vectors."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        if values.size % d:
            raise DimensionMismatchError(
                f"vector of length {values.size} is not a multiple of {d}"
            )
        return values.reshape(-1, d)
    if values.ndim != 2 or values.shape[1] != d:
        raise DimensionMismatchError(f"expected shape (N, {d}), got {values.shape}")
    return values


class BlockCsrMatrix:
    """Square block sparse matrix with dense d x d blocks."""

    def __init__(self, indptr: np.ndarray, indices: np.ndarray, blocks: np.ndarray):
        """Build and validate a block CSR matrix.

        Args:
            indptr: (N + 1,) row offsets.
            indices: (nnzb,) column index of every block, strictly increasing within a row.
            blocks: (nnzb, d, d) dense blocks in the order of `indices`.
        """
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.blocks = np.asarray(blocks, dtype=np.float64)
        self._validate()
        self._scipy: Optional[sp.bsr_matrix] = None

    def _validate(self):
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise BlockStructureError(
                f"blocks must have shape (nnzb, d, d), got {self.blocks.shape}"
            )
        if self.indptr.ndim != 1 or len(self.indptr) < 2 or self.indptr[0] != 0:
            raise BlockStructureError("row offsets must start at 0 and cover at least one row")
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != len(self.indices):
            raise BlockStructureError("row offsets must be non-decreasing and end at nnzb")
        if len(self.indices) != len(self.blocks):
            raise BlockStructureError("one block per column index is required")
        n = self.n
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= n):
            raise BlockStructureError(f"column index out of range [0, {n})")
        rows = self.rows()
        same_row = rows[1:] == rows[:-1]
        if np.any(self.indices[1:][same_row] <= self.indices[:-1][same_row]):
            raise BlockStructureError("column indices must be strictly increasing within a row")
        diagonal = np.zeros(n, dtype=bool)
        diagonal[rows[self.indices == rows]] = True
        if not diagonal.all():
            raise BlockStructureError(f"row {int(np.argmin(diagonal))} has no diagonal block")

    @property
    def d(self) -> int:
        """Block dimension."""
        return self.blocks.shape[1]

    @property
    def n(self) -> int:
        """Number of block rows (mesh nodes)."""
        return len(self.indptr) - 1

    @property
    def nnzb(self) -> int:
        """Number of stored blocks."""
        return len(self.indices)

    @property
    def shape(self) -> Tuple[int, int]:
        """Scalar shape (N d, N d)."""
        return (self.n * self.d, self.n * self.d)

    def rows(self) -> np.ndarray:
        """Row index of every stored block."""
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    @classmethod
    def from_pattern(cls, adjacency: sp.spmatrix, d: int) -> "BlockCsrMatrix":
        """Zero matrix whose block pattern is `adjacency` plus the diagonal."""
        n = adjacency.shape[0]
        pattern = (sp.csr_matrix(adjacency, dtype=np.float64) + sp.identity(n)).tocsr()
        pattern.sum_duplicates()
        pattern.sort_indices()
        return cls(pattern.indptr, pattern.indices, np.zeros((pattern.nnz, d, d)))

    @classmethod
    def from_scipy(cls, matrix: sp.spmatrix, d: int) -> "BlockCsrMatrix":
        """Convert a scalar sparse matrix; every row gets a diagonal block."""
        bsr = sp.bsr_matrix(matrix, blocksize=(d, d))
        bsr.sum_duplicates()
        bsr.sort_indices()
        n = bsr.shape[0] // d
        structure = sp.csr_matrix(
            (np.ones(len(bsr.indices)), bsr.indices, bsr.indptr), shape=(n, n)
        )
        result = cls.from_pattern(structure, d)
        rows = np.repeat(np.arange(n), np.diff(bsr.indptr))
        result.blocks[result.positions(rows, bsr.indices)] = bsr.data
        return result

    @classmethod
    def from_dense(cls, dense: np.ndarray, d: int) -> "BlockCsrMatrix":
        """Convert a dense matrix, storing every block with a nonzero entry."""
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=np.float64)), d)

    def positions(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Storage position of the blocks (rows[k], cols[k]); all must exist in the pattern."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keys = self.rows() * self.n + self.indices
        wanted = rows * self.n + cols
        found = np.searchsorted(keys, wanted)
        found = np.minimum(found, len(keys) - 1)
        if np.any(keys[found] != wanted):
            missing = int(np.argmax(keys[found] != wanted))
            raise BlockStructureError(f"block ({rows[missing]}, {cols[missing]}) is not stored")
        return found

    def copy(self) -> "BlockCsrMatrix":
        """Deep copy."""
        return BlockCsrMatrix(self.indptr.copy(), self.indices.copy(), self.blocks.copy())

    def scaled(self, factor: float) -> "BlockCsrMatrix":
        """Return factor * A."""
        return BlockCsrMatrix(self.indptr, self.indices, self.blocks * factor)

    def diagonal_blocks(self) -> np.ndarray:
        """The (N, d, d) block diagonal D."""
        rows = self.rows()
        return self.blocks[self.indices == rows]

    def to_scipy(self) -> sp.bsr_matrix:
        """Scalar view as a SciPy BSR matrix (cached)."""
        if self._scipy is None:
            self._scipy = sp.bsr_matrix(
                (self.blocks, self.indices, self.indptr), shape=self.shape
            )
        return self._scipy

    def to_dense(self) -> np.ndarray:
        """Dense (N d) x (N d) array."""
        return self.to_scipy().toarray()

    def frobenius_norm(self) -> float:
        """Frobenius norm of the scalar matrix."""
        return float(np.sqrt(np.sum(self.blocks**2)))

    def is_symmetric(self, rtol: float = 0.0) -> bool:
        """Report if A equals its transpose up to `rtol` relative to the largest entry."""
        transposed = self.blocks[self.positions(self.indices, self.rows())].transpose(0, 2, 1)
        scale = max(np.abs(self.blocks).max(initial=0.0), 1.0)
        return bool(np.abs(self.blocks - transposed).max(initial=0.0) <= rtol * scale)

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        """Block matrix times block vector."""
        return spmv_direct(self, v)

    def __repr__(self) -> str:
        """Short summary of the matrix."""
        return f"<BlockCsrMatrix n={self.n} d={self.d} nnzb={self.nnzb}>"


@dataclass(frozen=True)
class GraphSystem:
    """Graph encoding of a block system.

    Edge k runs from `senders[k]` (column j) to `receivers[k]` (row i) and carries the row-major
    flattening of A_ij. Edges are ordered as the blocks of the source matrix.
    """

    senders: np.ndarray
    receivers: np.ndarray
    node_features: np.ndarray
    edge_features: np.ndarray

    @property
    def d(self) -> int:
        """Block dimension."""
        return self.node_features.shape[1]

    @property
    def n_nodes(self) -> int:
        """Number of graph nodes."""
        return self.node_features.shape[0]

    @property
    def n_edges(self) -> int:
        """Number of edges, self loops included."""
        return len(self.senders)


def to_graph(A: BlockCsrMatrix, f: np.ndarray) -> GraphSystem:
    """Encode the system (A, f) as a graph with node features f_i and edge features vec(A_ij)."""
    f = as_block_vector(f, A.d)
    if len(f) != A.n:
        raise DimensionMismatchError(f"right-hand side has {len(f)} nodes, matrix has {A.n}")
    return GraphSystem(
        senders=A.indices.copy(),
        receivers=A.rows(),
        node_features=f.copy(),
        edge_features=A.blocks.reshape(A.nnzb, A.d * A.d).copy(),
    )


def from_graph(graph: GraphSystem) -> Tuple[BlockCsrMatrix, np.ndarray]:
    """Decode a graph produced by `to_graph` back into (A, f)."""
    d = graph.d
    order = np.lexsort((graph.senders, graph.receivers))
    receivers = graph.receivers[order]
    indptr = np.zeros(graph.n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, receivers + 1, 1)
    indptr = np.cumsum(indptr)
    blocks = graph.edge_features[order].reshape(-1, d, d)
    return BlockCsrMatrix(indptr, graph.senders[order], blocks), graph.node_features.copy()


def spmv_message_passing(graph: GraphSystem, v: np.ndarray) -> np.ndarray:
    """Block SpMV as message passing over the graph encoding.

    Each source value v_j is replicated d times (S1), multiplied with the edge feature by a
    Hadamard product (S2), summed at the receiving node (S3) and reduced from d^2 to d
    components by summing consecutive groups of d (S4).
    """
    d = graph.d
    v = as_block_vector(v, d)
    if len(v) != graph.n_nodes:
        raise DimensionMismatchError(f"vector has {len(v)} nodes, graph has {graph.n_nodes}")
    replicated = np.tile(v[graph.senders], (1, d))
    messages = graph.edge_features * replicated
    aggregated = np.zeros((graph.n_nodes, d * d))
    np.add.at(aggregated, graph.receivers, messages)
    return aggregated.reshape(graph.n_nodes, d, d).sum(axis=2)


def spmv_direct(A: BlockCsrMatrix, v: np.ndarray) -> np.ndarray:
    """Block SpMV through the scalar BSR view."""
    v = as_block_vector(v, A.d)
    if len(v) != A.n:
        raise DimensionMismatchError(f"vector has {len(v)} nodes, matrix has {A.n}")
    return (A.to_scipy() @ v.ravel()).reshape(A.n, A.d)


def residual(A: BlockCsrMatrix, u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Return f - A u."""
    return as_block_vector(f, A.d) - spmv_direct(A, u)


def l2(v: np.ndarray) -> float:
    """Euclidean norm of the flattened vector."""
    return float(np.linalg.norm(np.ravel(v)))


def energy(A: BlockCsrMatrix, v: np.ndarray) -> float:
    """Energy norm sqrt(v^T A v); A must be positive definite."""
    v = as_block_vector(v, A.d)
    quadratic = float(np.dot(v.ravel(), spmv_direct(A, v).ravel()))
    if quadratic < -SPD_TOLERANCE * float(np.dot(v.ravel(), v.ravel())):
        raise NonSpdError(f"v^T A v = {quadratic:.3e} is negative")
    return float(np.sqrt(max(quadratic, 0.0)))


def block_diag_inverse(A: BlockCsrMatrix) -> np.ndarray:
    """Invert every diagonal block, returning an (N, d, d) array."""
    diagonal = A.diagonal_blocks()
    with np.errstate(divide="ignore", invalid="ignore"):
        conditions = np.linalg.cond(diagonal)
    bad = ~np.isfinite(conditions) | (conditions > CONDITION_LIMIT)
    if bad.any():
        node = int(np.argmax(bad))
        raise SingularBlockError(node, float(conditions[node]))
    return np.linalg.inv(diagonal)


def block_diagonal_matrix(blocks: np.ndarray) -> sp.bsr_matrix:
    """Scalar sparse matrix with the given (N, d, d) blocks on its diagonal."""
    n, d, _ = blocks.shape
    return sp.bsr_matrix(
        (blocks, np.arange(n), np.arange(n + 1)), shape=(n * d, n * d)
    )


def save_matrix(A: BlockCsrMatrix, path: Union[str, Path]):
    """Write A with one `i j d b00 b01 ...` line per stored block."""
    lines = [
        f"{i} {j} {A.d} " + " ".join(repr(float(b)) for b in block.ravel())
        for i, j, block in zip(A.rows().tolist(), A.indices.tolist(), A.blocks)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path: Union[str, Path], n: Optional[int] = None) -> BlockCsrMatrix:
    """Read a matrix written by `save_matrix`; `n` defaults to the largest index + 1."""
    rows, cols, blocks = [], [], []
    d = None
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        try:
            i, j, block_dim = int(fields[0]), int(fields[1]), int(fields[2])
            values = [float(v) for v in fields[3:]]
        except (ValueError, IndexError):
            raise BlockStructureError(f"line {number}: malformed block entry") from None
        if d is None:
            d = block_dim
        if block_dim != d or len(values) != d * d:
            raise BlockStructureError(f"line {number}: expected {d}x{d} block")
        rows.append(i)
        cols.append(j)
        blocks.append(values)
    if d is None:
        raise BlockStructureError(f"no blocks in {path}")
    n = n if n is not None else max(max(rows), max(cols)) + 1
    structure = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    A = BlockCsrMatrix.from_pattern(structure, d)
    A.blocks[A.positions(rows, cols)] = np.array(blocks).reshape(-1, d, d)
    return A


def save_vector(v: np.ndarray, path: Union[str, Path]):
    """Write a block vector with one node per line."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    Path(path).write_text("\n".join(" ".join(repr(float(x)) for x in row) for row in v) + "\n")


def load_vector(path: Union[str, Path]) -> np.ndarray:
    """Read a block vector written by `save_vector`."""
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if len({len(r) for r in rows}) != 1:
        raise DimensionMismatchError(f"rows of {path} have differing lengths")
    return np.array(rows, dtype=np.float64)
