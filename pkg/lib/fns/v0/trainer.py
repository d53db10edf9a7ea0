# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Unsupervised training of the correction model through unrolled hybrid iterations.

The loss of a batch is the mean relative residual after K hybrid cycles started from zero:

    loss = 1/N_b sum_i ||f_i - A_i u_i^(K)|| / ||f_i||

Every cycle stays on the autodiff graph, so the gradient reaches the meta networks and the
coordinate map through the smoother sweeps, the spectral corrections and the post-smoothing.
No reference solutions are needed.

You can use this library as follows:

```python
from fns.v0.trainer import TrainConfig, build_contexts, create_model, train

config = TrainConfig(k=5, batch=64, epochs=200, lr=1e-4, seed=0)
hybrid = HybridConfig.preset("Data1")
contexts = build_contexts(train_samples)
model = create_model(hybrid, contexts[0], config)
result = train(contexts, model, hybrid, config, checkpoint="model.ckpt", log="loss.csv")
result.best_loss
```
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from fns.v0.autodiff import GradientError, Tensor, norm2
from fns.v0.blocks import l2
from fns.v0.config import ConfigError, Error
from fns.v0.datasets import Sample
from fns.v0.model import (
    CorrectionModel,
    ModelConfig,
    SystemContext,
    checkpoint_config,
    save_model,
)
from fns.v0.optim import Adam, clip_grad_norm, load_checkpoint, restore_parameters
from fns.v0.solver import Corrector, HybridConfig, SolverDivergedError, hybrid_cycle

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 3

LOG_COLUMNS = ["epoch", "mean_loss", "wall_seconds"]


class TrainingError(Error):
    """Raised when training cannot start."""


class TrainingDivergedError(TrainingError):
    """Raised when the loss or a gradient stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings."""

    k: int = 5
    batch: int = 64
    epochs: int = 200
    lr: float = 1e-4
    seed: int = 0
    clip: float = 10.0
    width: int = 16
    lambda_init: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"unrolled iterations K must be >= 1, got {self.k}")
        if self.batch < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.clip <= 0:
            raise ConfigError(f"gradient clipping norm must be positive, got {self.clip}")

    def to_dict(self) -> dict:
        """Return the config as a Python dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        """Inverse of `to_dict`."""
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid training config: {e}") from e

    def __str__(self) -> str:
        """Return the config as a YAML string."""
        return yaml.safe_dump(self.to_dict())


@dataclass
class EpochRecord:
    """One row of the training log."""

    epoch: int
    mean_loss: float
    wall_seconds: float


@dataclass
class TrainResult:
    """Loss trajectory and best epoch of a training run."""

    history: List[EpochRecord] = field(default_factory=list)
    best_loss: float = float("inf")
    best_epoch: int = 0

    @property
    def losses(self) -> List[float]:
        """Per-epoch mean losses."""
        return [record.mean_loss for record in self.history]

    def best_so_far(self) -> List[float]:
        """Running minimum of the per-epoch losses."""
        return np.minimum.accumulate(self.losses).tolist() if self.history else []

    def to_frame(self) -> pd.DataFrame:
        """The training log as a data frame."""
        return pd.DataFrame([asdict(r) for r in self.history], columns=LOG_COLUMNS)


def build_contexts(samples: Sequence[Sample]) -> List[SystemContext]:
    """Model inputs of every sample."""
    return [SystemContext.build(s.mesh, s.system, s.features) for s in samples]


def usable_contexts(contexts: Sequence[SystemContext]) -> List[SystemContext]:
    """Drop systems with a zero right-hand side, whose relative residual is undefined."""
    kept = [context for context in contexts if l2(context.rhs) > 0.0]
    if len(kept) < len(contexts):
        logger.warning(
            "excluded %d samples with a zero right-hand side", len(contexts) - len(kept)
        )
    return kept


def create_model(
    hybrid: HybridConfig, context: SystemContext, config: TrainConfig
) -> CorrectionModel:
    """Untrained model sized for the systems of a dataset."""
    model_config = ModelConfig.from_hybrid(
        hybrid,
        d=context.operator.d,
        in_dim=context.node_inputs.shape[1],
        width=config.width,
        seed=config.seed,
        lambda_init=config.lambda_init,
    )
    return CorrectionModel(model_config)


def unrolled_solution(
    context: SystemContext, correctors: Sequence[Corrector], hybrid: HybridConfig, k: int
) -> Tensor:
    """K hybrid cycles from a zero initial guess, kept on the autodiff graph."""
    u = Tensor(np.zeros_like(context.rhs))
    for _ in range(k):
        u = hybrid_cycle(context.operator, None, context.rhs, u, correctors, hybrid)
    return u


def relative_residual(
    context: SystemContext, model: CorrectionModel, hybrid: HybridConfig, k: int
) -> Tensor:
    """||f - A u^(K)|| / ||f|| of one system as a differentiable scalar."""
    u = unrolled_solution(context, model.realise(context), hybrid, k)
    return norm2(context.operator.residual(context.rhs, u)) / l2(context.rhs)


def loss(
    contexts: Sequence[SystemContext], model: CorrectionModel, hybrid: HybridConfig, k: int
) -> Tensor:
    """Mean relative residual of a batch after `k` unrolled cycles."""
    if k < 1:
        raise ConfigError(f"unrolled iterations K must be >= 1, got {k}")
    batch = usable_contexts(contexts)
    if not batch:
        raise TrainingError("no sample of the batch has a non-zero right-hand side")
    total: Optional[Tensor] = None
    for context in batch:
        value = relative_residual(context, model, hybrid, k)
        total = value if total is None else total + value
    assert total is not None
    return total / float(len(batch))


def evaluate(
    contexts: Sequence[SystemContext], model: CorrectionModel, hybrid: HybridConfig, k: int
) -> float:
    """Mean relative residual after `k` cycles, computed off the autodiff graph."""
    batch = usable_contexts(contexts)
    if not batch:
        raise TrainingError("no sample has a non-zero right-hand side")
    values = []
    for context in batch:
        correctors = model.realise(context, detach=True)
        u = np.zeros_like(context.rhs)
        for _ in range(k):
            u = hybrid_cycle(context.operator, None, context.rhs, u, correctors, hybrid)
        values.append(l2(context.operator.residual(context.rhs, u).value) / l2(context.rhs))
    return float(np.mean(values))


def _snapshot(params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
    return {name: p.value.copy() for name, p in params.items()}


def _restore(params: Dict[str, Tensor], snapshot: Dict[str, np.ndarray]):
    for name, value in snapshot.items():
        params[name].value[...] = value


def write_loss_log(
    result: TrainResult, path: Union[str, Path], header: Optional[Dict[str, str]] = None
):
    """Write the per-epoch loss log as CSV, below `# key: value` header lines."""
    with open(path, "w", newline="") as f:
        for key, value in (header or {}).items():
            f.write(f"# {key}: {value}\n")
        result.to_frame().to_csv(f, index=False, float_format="%.10e")
    logger.info("loss log written to %s", path)


def resume_from(
    path: Union[str, Path], model: CorrectionModel, hybrid: HybridConfig, optimizer: Adam
) -> Tuple[int, float]:
    """Load weights and optimizer state of a checkpoint; return its epoch and loss.

    The checkpoint must have been written for the same model and hybrid settings. The
    learning rate stays the one the optimizer was built with.
    """
    stored = load_checkpoint(path, checkpoint_config(model, hybrid))
    if stored.optimizer is None:
        raise TrainingError(f"checkpoint {path} holds no optimizer state")
    restore_parameters(model.parameters(), stored)
    lr = optimizer.lr
    optimizer.load_state_dict(stored.optimizer)
    optimizer.lr = lr
    epoch = int(stored.extra.get("epoch", 0))
    best_loss = float(stored.extra.get("loss", float("inf")))
    logger.info("resuming from %s after epoch %d (loss %.6e)", path, epoch, best_loss)
    return epoch, best_loss


def train(
    contexts: Sequence[SystemContext],
    model: CorrectionModel,
    hybrid: HybridConfig,
    config: TrainConfig,
    checkpoint: Optional[Union[str, Path]] = None,
    log: Optional[Union[str, Path]] = None,
    extra: Optional[Dict[str, Any]] = None,
    header: Optional[Dict[str, str]] = None,
    resume: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Minimise the unrolled loss with Adam over shuffled mini-batches.

    Every epoch draws its batches from a permutation seeded by `config.seed` and the epoch
    number, so equal seeds give equal loss trajectories and a resumed run repeats the epochs an
    uninterrupted run would have taken. The epoch loss is measured on all training systems after
    the epoch's updates. The parameters with the lowest epoch loss are written to `checkpoint`
    whenever they improve and are loaded back into `model` when training ends.

    Args:
        contexts: training systems.
        model: the correction model, updated in place.
        hybrid: hybrid settings unrolled in the loss.
        config: optimisation settings; `config.epochs` counts resumed epochs too.
        checkpoint: where to keep the best parameters.
        log: CSV file receiving epoch, mean_loss, wall_seconds.
        extra: additional metadata stored in the checkpoint.
        header: provenance lines written at the top of the log.
        resume: checkpoint to continue from, with its weights and optimizer state.

    Raises:
        TrainingDivergedError: the loss or a gradient became non-finite; the model holds the
            last good parameters and the checkpoint is left at the best epoch.
        CheckpointError: `resume` does not fit the model.
    """
    contexts = usable_contexts(contexts)
    if not contexts:
        raise TrainingError("no training sample has a non-zero right-hand side")
    params = model.parameters()
    optimizer = Adam(params, lr=config.lr)
    result = TrainResult()
    done = 0
    if resume is not None:
        done, result.best_loss = resume_from(resume, model, hybrid, optimizer)
        result.best_epoch = done
    best = _snapshot(params)
    start = time.perf_counter()
    logger.info(
        "training %s on %d samples: epochs %d to %d, batch %d, K=%d",
        hybrid.variant,
        len(contexts),
        done + 1,
        config.epochs,
        config.batch,
        config.k,
    )

    for epoch in range(done + 1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(contexts))
        try:
            for first in range(0, len(contexts), config.batch):
                batch = [contexts[i] for i in order[first : first + config.batch]]
                optimizer.zero_grad()
                value = loss(batch, model, hybrid, config.k)
                if not np.isfinite(value.value):
                    raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
                value.backward()
                clip_grad_norm(params, config.clip)
                optimizer.step()
            mean_loss = evaluate(contexts, model, hybrid, config.k)
            if not np.isfinite(mean_loss):
                raise TrainingDivergedError(f"non-finite epoch loss in epoch {epoch}")
        except (SolverDivergedError, GradientError, TrainingDivergedError) as e:
            _restore(params, best)
            logger.error("training diverged in epoch %d: %s", epoch, e)
            logger.debug(e, exc_info=True)
            if log is not None:
                write_loss_log(result, log, header)
            raise TrainingDivergedError(f"training diverged in epoch {epoch}: {e}") from e

        result.history.append(EpochRecord(epoch, mean_loss, time.perf_counter() - start))
        logger.info("epoch %d mean loss %.6e", epoch, mean_loss)
        if mean_loss < result.best_loss:
            result.best_loss = mean_loss
            result.best_epoch = epoch
            best = _snapshot(params)
            if checkpoint is not None:
                metadata = {"epoch": epoch, "loss": mean_loss, "train": config.to_dict()}
                save_model(checkpoint, model, hybrid, optimizer, {**(extra or {}), **metadata})

    _restore(params, best)
    if log is not None:
        write_loss_log(result, log, header)
    logger.info("best mean loss %.6e in epoch %d", result.best_loss, result.best_epoch)
    return result
