# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Learnable correction model: meta networks per level plus the coordinate map.

For every correction level the model owns two meta networks reading the node inputs of a system
over its mesh graph:

- Meta-lambda outputs |K| d values, the per-frequency per-component scaling lambda; its output
  layer starts at zero weights with bias `lambda_init`;
- Meta-T outputs the 2 3^d d weights of the lattice convolution, added to the identity kernel
  (its output layer starts at zero, so C starts as the identity).

Variants other than G-FNS also own a coordinate map xi = x + x * f(x) shared by all levels.

`CorrectionModel.realise(context)` turns the networks into one `SpectralCorrector` per level for
a given system. Lambda is applied with the scale |K| / (N a), a being the geometric mean of the
free diagonal entries of A, so network outputs stay O(1) whatever the material magnitude.

Lambda starts at zero, so an untrained model is the smoother plus one post-smoothing sweep per
level. The scale is a single number per system; a nonzero start overshoots wherever the modulus
is far above its mean.

You can use this library as follows:

```python
from fns.v0.model import CorrectionModel, ModelConfig, SystemContext

model = CorrectionModel(ModelConfig.from_hybrid(hybrid, d=2, in_dim=3, width=16, seed=0))
context = SystemContext.build(mesh, system, node_inputs)
correctors = model.realise(context)
u, report = solve(context.operator, context.rhs, correctors, hybrid)
```
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
import yaml

from fns.v0.autodiff import Tensor, as_tensor
from fns.v0.config import ConfigError
from fns.v0.elasticity import LinearSystem
from fns.v0.mesh import MeshTopology
from fns.v0.networks import CoordinateMap, MetaNet, MetaNetConfig, Module, gcn_normalization
from fns.v0.optim import (
    Adam,
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    restore_parameters,
    save_checkpoint,
)
from fns.v0.smoother import SystemOperator
from fns.v0.solver import HybridConfig, SpectralCorrector
from fns.v0.spectral import FourierBasis, FrequencyLattice, SpectralLevel, identity_kernel

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 5


@dataclass(frozen=True)
class ModelConfig:
    """Shape of a correction model."""

    d: int
    in_dim: int
    modes: Tuple[int, ...]
    use_coordinate_map: bool = True
    width: int = 16
    lambda_init: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
        if self.d not in (2, 3):
            raise ConfigError(f"model dimension must be 2 or 3, got {self.d}")
        if self.in_dim < 1 or self.width < 1:
            raise ConfigError(f"in_dim and width must be >= 1, got {self.in_dim}, {self.width}")
        if not self.modes:
            raise ConfigError("at least one correction level is required")

    @classmethod
    def from_hybrid(
        cls,
        hybrid: HybridConfig,
        d: int,
        in_dim: int,
        width: int = 16,
        seed: int = 0,
        lambda_init: float = 0.0,
    ) -> "ModelConfig":
        """Model matching the levels and variant of a hybrid configuration."""
        return cls(d, in_dim, hybrid.modes, hybrid.use_coordinate_map, width, lambda_init, seed)

    def to_dict(self) -> dict:
        """Return the config as a Python dictionary."""
        data = asdict(self)
        data["modes"] = list(self.modes)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        """Inverse of `to_dict`."""
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid model config: {e}") from e

    def __str__(self) -> str:
        """Return the config as a YAML string."""
        return yaml.safe_dump(self.to_dict())


@dataclass
class SystemContext:
    """Constant data of one system seen by the model and the solver."""

    operator: SystemOperator
    rhs: np.ndarray
    coordinates: np.ndarray
    node_inputs: np.ndarray
    propagation: sp.csr_matrix
    free_mask: np.ndarray
    diagonal_scale: float
    padding: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        """Number of mesh nodes."""
        return self.coordinates.shape[0]

    @classmethod
    def build(
        cls, mesh: MeshTopology, system: LinearSystem, node_inputs: np.ndarray
    ) -> "SystemContext":
        """Collect operator, graph normalisation, Dirichlet mask, diagonal scale and padding."""
        node_inputs = np.asarray(node_inputs, dtype=np.float64)
        if node_inputs.ndim != 2 or node_inputs.shape[0] != mesh.n_nodes:
            raise ConfigError(
                f"node inputs of shape {node_inputs.shape} for a mesh of {mesh.n_nodes} nodes"
            )
        operator = SystemOperator(system.matrix)
        free = np.ones(mesh.n_nodes, dtype=bool)
        free[np.asarray(system.dirichlet_nodes, dtype=np.int64)] = False
        diagonal = np.einsum("nii->ni", system.matrix.diagonal_blocks())
        entries = diagonal[free].ravel()
        entries = entries[entries > 0]
        scale = float(np.exp(np.mean(np.log(entries)))) if entries.size else 1.0
        span = mesh.nodes.max(axis=0) - mesh.nodes.min(axis=0)
        return cls(
            operator=operator,
            rhs=np.asarray(system.rhs, dtype=np.float64),
            coordinates=np.asarray(mesh.nodes, dtype=np.float64),
            node_inputs=node_inputs,
            propagation=gcn_normalization(mesh.adjacency()),
            free_mask=free.astype(np.float64)[:, None],
            diagonal_scale=scale,
            padding=np.divide(mesh.axis_spacing(), span, out=np.zeros(mesh.dim), where=span > 0),
        )


class LevelNetworks(Module):
    """Meta-lambda and Meta-T of one correction level."""

    def __init__(
        self,
        lattice: FrequencyLattice,
        in_dim: int,
        width: int,
        rng: np.random.Generator,
        lambda_init: float = 0.0,
    ):
        d = lattice.d
        self.meta_lambda = MetaNet(MetaNetConfig(in_dim, width, lattice.size * d), rng, True)
        self.meta_lambda.right_output.bias.value[...] = lambda_init
        self.meta_kernel = MetaNet(MetaNetConfig(in_dim, width, 2 * 3**d * d), rng, True)


class CorrectionModel(Module):
    """All learnable parts of a hybrid solver."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.lattices = [FrequencyLattice(config.d, m) for m in config.modes]
        self.levels = [
            LevelNetworks(lattice, config.in_dim, config.width, rng, config.lambda_init)
            for lattice in self.lattices
        ]
        self.coordinate_map: Optional[CoordinateMap] = (
            CoordinateMap(config.d, rng) if config.use_coordinate_map else None
        )

    def coordinates(self, context: SystemContext) -> Tensor:
        """Fourier coordinates xi of the system's nodes."""
        x = Tensor(context.coordinates)
        return x if self.coordinate_map is None else self.coordinate_map(x)

    def spectral_levels(self, context: SystemContext) -> List[SpectralLevel]:
        """Lambda and kernel of every level for one system."""
        d = self.config.d
        levels = []
        for lattice, networks in zip(self.lattices, self.levels):
            lam = networks.meta_lambda(context.node_inputs, context.propagation)
            offset = networks.meta_kernel(context.node_inputs, context.propagation)
            kernel = offset.reshape(2, 3**d, d) + identity_kernel(d)
            scale = lattice.size / (context.n_nodes * context.diagonal_scale)
            levels.append(SpectralLevel(lattice, lam.reshape(lattice.size, d), kernel, scale))
        return levels

    def realise(self, context: SystemContext, detach: bool = False) -> List[SpectralCorrector]:
        """One corrector per level, differentiable with respect to every parameter.

        With `detach` the correctors are cut from the autodiff graph, for solving only.
        """
        xi = self.coordinates(context)
        levels = self.spectral_levels(context)
        if detach:
            xi = xi.detach()
            levels = [detached(level) for level in levels]
        return [
            SpectralCorrector(
                level, FourierBasis(xi, level.lattice, padding=context.padding), context.free_mask
            )
            for level in levels
        ]


def detached(level: SpectralLevel) -> SpectralLevel:
    """Copy of a level cut from the autodiff graph."""
    lam, kernel = as_tensor(level.lam).detach(), as_tensor(level.kernel).detach()
    return SpectralLevel(level.lattice, lam, kernel, level.scale)


def checkpoint_config(model: CorrectionModel, hybrid: HybridConfig) -> dict:
    """Configuration header stored with the weights."""
    return {"model": model.config.to_dict(), "hybrid": hybrid.to_dict()}


def save_model(
    path: Union[str, Path],
    model: CorrectionModel,
    hybrid: HybridConfig,
    optimizer: Optional[Adam] = None,
    extra: Optional[dict] = None,
):
    """Write a model checkpoint."""
    save_checkpoint(path, checkpoint_config(model, hybrid), model.parameters(), optimizer, extra)


def load_model(
    path: Union[str, Path], expected: Optional[ModelConfig] = None
) -> Tuple[CorrectionModel, HybridConfig, Checkpoint]:
    """Rebuild a model and its hybrid settings from a checkpoint."""
    checkpoint = load_checkpoint(path)
    try:
        config = ModelConfig.from_dict(checkpoint.config["model"])
        hybrid = HybridConfig.from_dict(checkpoint.config["hybrid"])
    except (KeyError, ConfigError) as e:
        raise CheckpointError(f"checkpoint {path} has an invalid config header: {e}") from e
    if expected is not None and expected != config:
        differences = sorted(
            key for key, value in expected.to_dict().items() if config.to_dict()[key] != value
        )
        raise CheckpointError(f"checkpoint config differs in {', '.join(differences)}")
    model = CorrectionModel(config)
    restore_parameters(model.parameters(), checkpoint)
    logger.info("loaded %s model with %d levels from %s", hybrid.variant, hybrid.levels, path)
    return model, hybrid, checkpoint
