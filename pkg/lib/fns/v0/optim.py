# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Adam optimizer, gradient clipping and the checkpoint container.

A checkpoint is a single YAML document written with sorted keys:

```yaml
format: fns-checkpoint
libapi: 0
config: {...}            # the model configuration that produced the weights
extra: {...}             # e.g. epoch, best loss
optimizer: {beta1: 0.9, beta2: 0.999, eps: 1.0e-08, lr: 0.0001, step: 12, m: {...}, v: {...}}
parameters:
  levels.0.meta_lambda.left.weight: {dtype: float64, shape: [3, 8], data: <base64>}
```

Arrays are stored as base64 encoded little-endian float64 bytes, so values survive a round trip
bit for bit and rewriting a loaded checkpoint produces the same bytes.

You can use this library as follows:

```python
from fns.v0.optim import Adam, clip_grad_norm, load_checkpoint, save_checkpoint

optimizer = Adam(model.parameters(), lr=1e-4)
loss.backward()
clip_grad_norm(model.parameters(), 10.0)
optimizer.step()
save_checkpoint("model.ckpt", model.config.to_dict(), model.parameters(), optimizer)
```
"""

import base64
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import yaml

from fns.v0.autodiff import GradientError, Tensor
from fns.v0.config import ConfigError, Error

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 3

CHECKPOINT_FORMAT = "fns-checkpoint"


class CheckpointError(Error):
    """Raised when a checkpoint cannot be read or does not fit the model."""


class Adam:
    """Bias-corrected Adam over a dictionary of named parameters."""

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}

    def step(self):
        """Update every parameter from its accumulated gradient (missing gradients count as 0)."""
        grads = {}
        for name, param in self.params.items():
            grad = np.zeros_like(param.value) if param.grad is None else param.grad
            if not np.all(np.isfinite(grad)):
                raise GradientError(f"non-finite gradient for parameter {name}")
            grads[name] = grad

        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for name, param in self.params.items():
            grad = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            param.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        """Forget all parameter gradients."""
        for param in self.params.values():
            param.zero_grad()

    def state_dict(self) -> Dict[str, Any]:
        """Hyperparameters, step count and moments."""
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step_count,
            "m": {name: value.copy() for name, value in self.m.items()},
            "v": {name: value.copy() for name, value in self.v.items()},
        }

    def load_state_dict(self, state: Dict[str, Any]):
        """Restore moments and step count saved by `state_dict`."""
        for key in ("m", "v"):
            if set(state[key]) != set(self.params):
                raise CheckpointError(f"optimizer moments {key} do not match the parameters")
            for name, value in state[key].items():
                if np.shape(value) != self.params[name].shape:
                    raise CheckpointError(
                        f"optimizer moment {key} of {name} has shape {np.shape(value)}, "
                        f"expected {self.params[name].shape}"
                    )
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.step_count = int(state["step"])
        self.m = {name: np.array(value, dtype=np.float64) for name, value in state["m"].items()}
        self.v = {name: np.array(value, dtype=np.float64) for name, value in state["v"].items()}


def global_grad_norm(params: Dict[str, Tensor]) -> float:
    """Euclidean norm of all gradients together."""
    total = 0.0
    for param in params.values():
        if param.grad is not None:
            total += float(np.sum(param.grad * param.grad))
    return float(np.sqrt(total))


def clip_grad_norm(params: Dict[str, Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global norm is at most `max_norm`.

    Returns:
        the global norm before clipping.
    """
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for param in params.values():
            if param.grad is not None:
                param.grad = param.grad * factor
        logger.debug("gradient norm %.4e clipped to %.4e", norm, max_norm)
    return norm


def encode_array(array: np.ndarray) -> Dict[str, Any]:
    """Shape and base64 little-endian float64 bytes of an array."""
    array = np.ascontiguousarray(array, dtype="<f8")
    return {
        "dtype": "float64",
        "shape": list(array.shape),
        "data": base64.b64encode(array.tobytes()).decode("ascii"),
    }


def decode_array(entry: Dict[str, Any]) -> np.ndarray:
    """Inverse of `encode_array`."""
    try:
        raw = base64.b64decode(entry["data"].encode("ascii"), validate=True)
        shape = tuple(int(s) for s in entry["shape"])
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    except (KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"corrupt array entry: {e}") from e


@dataclass
class Checkpoint:
    """Contents of a checkpoint file."""

    config: Dict[str, Any]
    parameters: Dict[str, np.ndarray]
    optimizer: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def checkpoint_document(
    config: Dict[str, Any],
    params: Dict[str, Union[Tensor, np.ndarray]],
    optimizer: Optional[Adam] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    """Serialise a checkpoint to its YAML text."""
    values = {
        name: p.value if isinstance(p, Tensor) else np.asarray(p) for name, p in params.items()
    }
    document: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "libapi": LIBAPI,
        "config": config,
        "extra": extra or {},
        "parameters": {name: encode_array(value) for name, value in values.items()},
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        for key in ("m", "v"):
            state[key] = {name: encode_array(value) for name, value in state[key].items()}
        document["optimizer"] = state
    return yaml.safe_dump(document, sort_keys=True)


def save_checkpoint(
    path: Union[str, Path],
    config: Dict[str, Any],
    params: Dict[str, Union[Tensor, np.ndarray]],
    optimizer: Optional[Adam] = None,
    extra: Optional[Dict[str, Any]] = None,
):
    """Write weights, optimizer state and model configuration to `path`."""
    Path(path).write_text(checkpoint_document(config, params, optimizer, extra))
    logger.info("checkpoint written to %s", path)


def load_checkpoint(
    path: Union[str, Path], expected_config: Optional[Dict[str, Any]] = None
) -> Checkpoint:
    """Read a checkpoint, optionally refusing one written for a different configuration."""
    try:
        document = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint")
    if document.get("libapi") != LIBAPI:
        raise CheckpointError(
            f"checkpoint API version {document.get('libapi')} does not match {LIBAPI}"
        )
    config = document.get("config") or {}
    if expected_config is not None:
        mismatched = sorted(
            key
            for key in set(config) | set(expected_config)
            if config.get(key) != expected_config.get(key)
        )
        if mismatched:
            raise CheckpointError(f"checkpoint config differs in {', '.join(mismatched)}")

    parameters = {name: decode_array(entry) for name, entry in document["parameters"].items()}
    optimizer = document.get("optimizer")
    if optimizer is not None:
        for key in ("m", "v"):
            optimizer[key] = {name: decode_array(e) for name, e in optimizer[key].items()}
    return Checkpoint(config, parameters, optimizer, document.get("extra") or {})


def restore_parameters(params: Dict[str, Tensor], checkpoint: Checkpoint):
    """Copy checkpoint weights into live parameters, checking names and shapes."""
    missing = sorted(set(params) - set(checkpoint.parameters))
    unexpected = sorted(set(checkpoint.parameters) - set(params))
    if missing or unexpected:
        raise CheckpointError(
            f"parameter names differ: missing {missing}, unexpected {unexpected}"
        )
    for name, tensor in params.items():
        value = checkpoint.parameters[name]
        if value.shape != tensor.shape:
            raise CheckpointError(
                f"parameter {name} has shape {value.shape}, expected {tensor.shape}"
            )
        tensor.value[...] = value
