# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Network layers built on the autodiff library.

- `Linear`: fully connected layer x W + b;
- `GcnLayer`: graph convolution P (x W) + b with the symmetric normalisation
  P = D^{-1/2} (A + I) D^{-1/2} of the mesh adjacency;
- `MetaNet`: the parameter-to-operator generator. A Left MLP lifts node inputs to width d1,
  three blocks of (GcnLayer + Linear, summed, ReLU) widen the features to 2 d1, 3 d1 and 4 d1,
  a global mean pool gives one vector per graph and a Right MLP maps it to d5 outputs;
- `CoordinateMap`: the learnable map xi = x + x * f(x) with f a d -> 64 -> 64 -> d ReLU network
  whose output layer starts at zero, so training starts from the identity map.

Every module exposes its tensors through `parameters()`, a dictionary keyed by dotted names
that the optimizer and the checkpoint container use.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp
import yaml

from fns.v0.autodiff import ArrayLike, Tensor, as_tensor, mean_pool, relu, sparse_matmul
from fns.v0.config import ConfigError

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 4

COORDINATE_WIDTH = 64


class Module:
    """Container of named parameter tensors and sub-modules."""

    def parameters(self) -> Dict[str, Tensor]:
        """All parameters, keyed by dotted name in a fixed order."""
        params: Dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                params[name] = value
            elif isinstance(value, Module):
                for sub, tensor in value.parameters().items():
                    params[f"{name}.{sub}"] = tensor
            elif isinstance(value, list):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        for sub, tensor in item.parameters().items():
                            params[f"{name}.{index}.{sub}"] = tensor
        return params

    def zero_grad(self):
        """Forget the gradients of every parameter."""
        for tensor in self.parameters().values():
            tensor.zero_grad()


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Fully connected layer."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, zero: bool = False):
        if zero:
            weight, bias = np.zeros((in_dim, out_dim)), np.zeros(out_dim)
        else:
            weight = uniform_init(rng, in_dim, (in_dim, out_dim))
            bias = uniform_init(rng, in_dim, (out_dim,))
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x: ArrayLike) -> Tensor:
        """x W + b."""
        return as_tensor(x) @ self.weight + self.bias


def gcn_normalization(adjacency: sp.spmatrix) -> sp.csr_matrix:
    """D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I."""
    n = adjacency.shape[0]
    augmented = (sp.csr_matrix(adjacency, dtype=np.float64) != 0).astype(np.float64)
    augmented = augmented.tolil()
    augmented.setdiag(0.0)
    augmented = augmented.tocsr() + sp.identity(n, format="csr")
    degree = np.asarray(augmented.sum(axis=1)).ravel()
    inverse_sqrt = sp.diags(1.0 / np.sqrt(degree))
    return (inverse_sqrt @ augmented @ inverse_sqrt).tocsr()


class GcnLayer(Module):
    """Graph convolution over a fixed normalised propagation matrix."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(uniform_init(rng, in_dim, (in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: ArrayLike, propagation: sp.spmatrix) -> Tensor:
        """P (x W) + b."""
        x = as_tensor(x)
        if propagation.shape != (x.shape[0], x.shape[0]):
            raise ConfigError(
                f"propagation matrix {propagation.shape} for a graph of {x.shape[0]} nodes"
            )
        return sparse_matmul(propagation, x @ self.weight) + self.bias


@dataclass(frozen=True)
class MetaNetConfig:
    """Widths of a meta network: input in_dim, base width d1 and output d5."""

    in_dim: int
    d1: int
    d5: int

    def __post_init__(self):
        if self.in_dim < 1 or self.d1 < 1 or self.d5 < 1:
            raise ConfigError(f"meta network widths must be >= 1, got {self.to_dict()}")

    @property
    def widths(self) -> List[int]:
        """d_l = l d1 for l = 1..4."""
        return [level * self.d1 for level in range(1, 5)]

    def to_dict(self) -> dict:
        """Return the config as a Python dictionary."""
        return asdict(self)

    def __str__(self) -> str:
        """Return the config as a YAML string."""
        return yaml.safe_dump(self.to_dict())


class MetaNet(Module):
    """Left MLP, three GcnLayer + Linear blocks, global mean pool and Right MLP."""

    def __init__(self, config: MetaNetConfig, rng: np.random.Generator, zero_output: bool = False):
        self.config = config
        widths = config.widths
        self.left = Linear(config.in_dim, widths[0], rng)
        self.convolutions = [GcnLayer(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.linears = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.right_hidden = Linear(widths[-1], widths[-1], rng)
        self.right_output = Linear(widths[-1], config.d5, rng, zero=zero_output)

    def __call__(self, node_inputs: ArrayLike, propagation: sp.spmatrix) -> Tensor:
        """Flat output of length d5 for one graph."""
        x = as_tensor(node_inputs)
        if x.ndim != 2 or x.shape[1] != self.config.in_dim:
            raise ConfigError(
                f"node inputs of shape {x.shape}, expected (N, {self.config.in_dim})"
            )
        h = relu(self.left(x))
        for convolution, linear in zip(self.convolutions, self.linears):
            h = relu(convolution(h, propagation) + linear(h))
        pooled = mean_pool(h)
        out = self.right_output(relu(self.right_hidden(pooled)))
        return out.reshape(self.config.d5)


class CoordinateMap(Module):
    """xi = x + x * f(x) with f a two hidden layer ReLU network."""

    def __init__(self, d: int, rng: np.random.Generator, width: int = COORDINATE_WIDTH):
        self.hidden = Linear(d, width, rng)
        self.inner = Linear(width, width, rng)
        self.output = Linear(width, d, rng, zero=True)

    def offset(self, x: ArrayLike) -> Tensor:
        """f(x)."""
        return self.output(relu(self.inner(relu(self.hidden(x)))))

    def __call__(self, x: ArrayLike) -> Tensor:
        """The mapped coordinates xi."""
        x = as_tensor(x)
        return x + x * self.offset(x)


def parameter_count(module: Module, names: Optional[List[str]] = None) -> int:
    """Number of scalar parameters."""
    params = module.parameters()
    return int(sum(t.size for n, t in params.items() if names is None or n in names))
