# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Weighted block Jacobi smoothing.

One sweep is

    u' = u + omega D^{-1} (f - A u)

with D the block diagonal of A. Sweeps accept plain arrays or autodiff tensors; with tensors the
result stays on the autodiff graph so an unrolled solver can be differentiated through it.

You can use this library as follows:

```python
from fns.v0.smoother import JacobiConfig, SystemOperator, smooth

operator = SystemOperator(A)
u = smooth(operator, operator.D_inv, f, np.zeros_like(f), JacobiConfig(omega=2 / 3, sweeps=10))
```
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Union

import numpy as np
import scipy.sparse as sp
import yaml

from fns.v0.autodiff import ArrayLike, Tensor, as_tensor, sparse_matmul
from fns.v0.blocks import (
    BlockCsrMatrix,
    DimensionMismatchError,
    block_diag_inverse,
    block_diagonal_matrix,
)
from fns.v0.config import ConfigError
from fns.v0.mesh import MeshTopology
from fns.v0.spectral import FrequencyLattice, forward_nudft, quartile_masks

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 3


@dataclass(frozen=True)
class JacobiConfig:
    """Relaxation factor and number of sweeps of one smoothing application."""

    omega: float = 2.0 / 3.0
    sweeps: int = 10

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise ConfigError(f"omega must lie in (0, 2), got {self.omega}")
        if int(self.sweeps) != self.sweeps or self.sweeps < 1:
            raise ConfigError(f"sweeps must be a positive integer, got {self.sweeps}")

    def to_dict(self) -> dict:
        """Return the config as a Python dictionary."""
        return asdict(self)

    def __str__(self) -> str:
        """Return the config as a YAML string."""
        return yaml.safe_dump(self.to_dict())


class SystemOperator:
    """Constant sparse views of A and D^{-1} for tensor-valued iterations."""

    def __init__(self, A: BlockCsrMatrix, D_inv: Optional[np.ndarray] = None):
        self.A = A
        self.matrix: sp.csr_matrix = A.to_scipy().tocsr()
        self.D_inv = block_diag_inverse(A) if D_inv is None else np.asarray(D_inv)
        if self.D_inv.shape != (A.n, A.d, A.d):
            raise DimensionMismatchError(
                f"inverse diagonal of shape {self.D_inv.shape} for {A.n} blocks of size {A.d}"
            )
        self.inverse_diagonal: sp.csr_matrix = block_diagonal_matrix(self.D_inv).tocsr()

    @property
    def d(self) -> int:
        """Block dimension."""
        return self.A.d

    @property
    def n(self) -> int:
        """Number of nodes."""
        return self.A.n

    def apply(self, u: ArrayLike) -> Tensor:
        """A u."""
        return sparse_matmul(self.matrix, u)

    def apply_inverse_diagonal(self, r: ArrayLike) -> Tensor:
        """D^{-1} r."""
        return sparse_matmul(self.inverse_diagonal, r)

    def residual(self, f: ArrayLike, u: ArrayLike) -> Tensor:
        """f - A u."""
        return as_tensor(f) - self.apply(u)


Operator = Union[BlockCsrMatrix, SystemOperator]


def as_operator(A: Operator, D_inv: Optional[np.ndarray] = None) -> SystemOperator:
    """Wrap a block matrix as a `SystemOperator` (no-op for operators)."""
    if isinstance(A, SystemOperator):
        return A
    return SystemOperator(A, D_inv)


def _check(operator: SystemOperator, f: ArrayLike, u: ArrayLike):
    for name, value in (("f", f), ("u", u)):
        shape = np.shape(value.value if isinstance(value, Tensor) else value)
        if shape != (operator.n, operator.d):
            raise DimensionMismatchError(
                f"{name} has shape {shape}, expected {(operator.n, operator.d)}"
            )


def _output(result: Tensor, *inputs) -> Union[Tensor, np.ndarray]:
    if any(isinstance(value, Tensor) for value in inputs):
        return result
    return result.value


def jacobi_sweep(
    A: Operator, D_inv: Optional[np.ndarray], f: ArrayLike, u: ArrayLike, omega: float = 2.0 / 3.0
):
    """One weighted block Jacobi sweep u + omega D^{-1} (f - A u)."""
    operator = as_operator(A, D_inv)
    _check(operator, f, u)
    result = as_tensor(u) + omega * operator.apply_inverse_diagonal(operator.residual(f, u))
    return _output(result, f, u)


def smooth(
    A: Operator, D_inv: Optional[np.ndarray], f: ArrayLike, u: ArrayLike, config: JacobiConfig
):
    """Apply `config.sweeps` weighted block Jacobi sweeps."""
    operator = as_operator(A, D_inv)
    _check(operator, f, u)
    current = as_tensor(u)
    for _ in range(config.sweeps):
        current = current + config.omega * operator.apply_inverse_diagonal(
            operator.residual(f, current)
        )
    return _output(current, f, u)


def iteration_radius(
    A: Operator,
    D_inv: Optional[np.ndarray] = None,
    omega: float = 2.0 / 3.0,
    iterations: int = 200,
    seed: int = 0,
) -> float:
    """Power-iteration estimate of the spectral radius of I - omega D^{-1} A."""
    operator = as_operator(A, D_inv)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((operator.n, operator.d))
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iterations):
        w = v - omega * operator.apply_inverse_diagonal(operator.apply(v)).value
        estimate = float(np.linalg.norm(w))
        if estimate == 0.0:
            break
        v = w / estimate
    return estimate


def smoother_frequency_decay(
    mesh: MeshTopology,
    A: Operator,
    config: JacobiConfig,
    m: Optional[int] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """Per-sweep decay of the lowest and highest quarter of error frequencies.

    A random error is smoothed against a zero right-hand side and its spectrum is measured on
    the identity coordinate map before and after. The frequency bandwidth defaults to half the
    nominal number of nodes per axis.

    Returns:
        a dictionary with the per-sweep factors "low" and "high".
    """
    operator = as_operator(A)
    if m is None:
        m = max((round(mesh.n_nodes ** (1.0 / mesh.dim)) - 1) // 2, 1)
    lattice = FrequencyLattice(mesh.dim, m)
    rng = np.random.default_rng(seed)
    error = rng.standard_normal((operator.n, operator.d))
    smoothed = smooth(operator, None, np.zeros_like(error), error, config)
    before = forward_nudft(error, mesh.nodes, lattice).magnitude()
    after = forward_nudft(smoothed, mesh.nodes, lattice).magnitude()
    low, high = quartile_masks(lattice)
    factors = {}
    for name, mask in (("low", low), ("high", high)):
        ratio = np.linalg.norm(after[mask]) / np.linalg.norm(before[mask])
        factors[name] = float(ratio ** (1.0 / config.sweeps))
    logger.debug("smoother decay per sweep: low %.4f, high %.4f", factors["low"], factors["high"])
    return factors
