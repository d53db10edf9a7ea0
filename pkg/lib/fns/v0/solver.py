# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Hybrid smoother / spectral-correction iteration and flexible GMRES.

One hybrid cycle is

    u_half = smooth(u)
    for each correction level i:
        r_i = f - A (u_half + e_1 + ... + e_{i-1})
        e_i = H_i(r_i)
        e_i = e_i + omega D^{-1} (r_i - A e_i)        # one post-smoothing sweep
    u' = u_half + e_1 + ... + e_L

where each corrector H_i is any callable mapping a residual block vector to a correction. The
learned spectral correctors come from `fns.v0.model`; `ExactCorrector` applies A^{-1} and is
used to check the iteration.

`fgmres` is right-preconditioned flexible GMRES without restart (modified Gram-Schmidt Arnoldi,
Givens rotations on the Hessenberg matrix). The preconditioner may change from call to call.

You can use this library as follows:

```python
from fns.v0.solver import HybridConfig, fgmres, hybrid_preconditioner, solve

config = HybridConfig.preset("Data1")
u, report = solve(A, f, correctors, config)
u, report = fgmres(A, f, hybrid_preconditioner(A, correctors, config), tol=1e-6)
report.iterations, report.converged
```
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as splinalg
import yaml

from fns.v0.autodiff import ArrayLike, Tensor, as_tensor
from fns.v0.blocks import BlockCsrMatrix, energy, l2
from fns.v0.config import ConfigError, Error
from fns.v0.smoother import JacobiConfig, Operator, SystemOperator, as_operator, smooth
from fns.v0.spectral import FourierBasis, SpectralLevel, apply_level

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 7

VARIANTS = ("gfns", "agfns", "mlagfns")
DIVERGENCE_LIMIT = 1e6

Corrector = Callable[[Tensor], Tensor]
Preconditioner = Callable[[np.ndarray], np.ndarray]


class SolverError(Error):
    """Raised when a solve cannot be set up."""


class SolverDivergedError(SolverError):
    """Raised when an iterate stops being finite."""


@dataclass(frozen=True)
class HybridConfig:
    """Variant, correction levels, smoother and stopping rule of the hybrid iteration."""

    variant: str = "agfns"
    modes: Tuple[int, ...] = (4,)
    smoother: JacobiConfig = field(default_factory=JacobiConfig)
    max_iters: int = 200
    tol: float = 1e-6
    post_smoothing: bool = True

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        if not self.modes:
            raise ConfigError("at least one correction level is required")
        if any(m < 1 for m in self.modes):
            raise ConfigError(f"frequency bandwidths must be >= 1, got {self.modes}")
        if any(a <= b for a, b in zip(self.modes, self.modes[1:])):
            raise ConfigError(f"frequency bandwidths must strictly decrease, got {self.modes}")
        if self.variant != "mlagfns" and len(self.modes) != 1:
            raise ConfigError(f"variant {self.variant} uses exactly one level, got {self.modes}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")

    @property
    def levels(self) -> int:
        """Number of correction levels L."""
        return len(self.modes)

    @property
    def use_coordinate_map(self) -> bool:
        """Whether Fourier coordinates are learned (all variants but G-FNS)."""
        return self.variant != "gfns"

    @classmethod
    def preset(
        cls,
        family: str,
        scale: str = "desk",
        variant: Optional[str] = None,
        mesh: str = "structured",
    ) -> "HybridConfig":
        """Settings used for each dataset family.

        Args:
            family: Data1, Data2, Data3 or Data4.
            scale: "desk" for the reduced meshes, "full" for the full-size experiments.
            variant: override the family's variant; single-level variants keep the first mode.
            mesh: "unstructured" selects the wider Data1 bandwidth at full scale.
        """
        if scale not in ("desk", "full"):
            raise ConfigError(f"unknown scale '{scale}', expected desk or full")
        full = scale == "full"
        if family == "Data1":
            default_variant = "agfns"
            modes: Sequence[int] = ((20 if mesh == "unstructured" else 15),) if full else (4,)
            sweeps, max_iters = 10, 200
        elif family in ("Data2", "Data4"):
            default_variant = "mlagfns"
            modes = tuple(7 - i for i in range(1, 5)) if full else (4, 3, 2)
            sweeps, max_iters = 50, 1000
        elif family == "Data3":
            default_variant = "mlagfns"
            modes = tuple(21 - i for i in range(1, 5)) if full else (6, 5, 4, 3)
            sweeps, max_iters = 50, 200
        else:
            raise ConfigError(f"unknown dataset family '{family}'")
        variant = variant or default_variant
        if variant != "mlagfns":
            modes = modes[:1]
        return cls(variant, tuple(modes), JacobiConfig(sweeps=sweeps), max_iters)

    def to_dict(self) -> dict:
        """Return the config as a Python dictionary."""
        data = asdict(self)
        data["modes"] = list(self.modes)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "HybridConfig":
        """Inverse of `to_dict`."""
        data = dict(data)
        data["smoother"] = JacobiConfig(**data.get("smoother", {}))
        data["modes"] = tuple(data.get("modes", (4,)))
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid hybrid config: {e}") from e

    def __str__(self) -> str:
        """Return the config as a YAML string."""
        return yaml.safe_dump(self.to_dict())


@dataclass
class SolveReport:
    """Outcome of one solve."""

    method: str
    iterations: int = 0
    history: List[float] = field(default_factory=lambda: [1.0])
    converged: bool = False
    diverged: bool = False
    contraction: Optional[float] = None
    wall_seconds: float = 0.0
    true_residual: Optional[float] = None

    @property
    def final_residual(self) -> float:
        """Last relative residual."""
        return self.history[-1]

    def to_dict(self) -> dict:
        """Return the report as a Python dictionary."""
        return asdict(self)

    def to_json(self) -> str:
        """Return the report as indented JSON."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class SpectralCorrector:
    """Apply one spectral correction level, zeroed on constrained nodes."""

    def __init__(
        self, level: SpectralLevel, basis: FourierBasis, free_mask: Optional[np.ndarray] = None
    ):
        self.level = level
        self.basis = basis
        self.free_mask = free_mask

    def __call__(self, r: ArrayLike) -> Tensor:
        """Correction for the residual r."""
        e = apply_level(r, self.basis, self.level)
        return e * self.free_mask if self.free_mask is not None else e


class ExactCorrector:
    """Apply A^{-1} through a sparse LU factorisation."""

    def __init__(self, A: BlockCsrMatrix):
        self._solve = splinalg.factorized(A.to_scipy().tocsc())

    def __call__(self, r: ArrayLike) -> Tensor:
        """A^{-1} r, cut from the autodiff graph."""
        r = as_tensor(r)
        return Tensor(self._solve(r.value.ravel()).reshape(r.shape))


def _check_finite(u: Tensor):
    if not np.all(np.isfinite(u.value)):
        raise SolverDivergedError("hybrid iterate is not finite")


def hybrid_cycle(
    A: Operator,
    D_inv: Optional[np.ndarray],
    f: ArrayLike,
    u: ArrayLike,
    correctors: Sequence[Corrector],
    config: HybridConfig,
):
    """One smoothing step followed by the cascade of correction levels.

    Returns an array for array inputs and a tensor when f or u is a tensor.
    """
    if len(correctors) != config.levels:
        raise ConfigError(f"{len(correctors)} correctors for {config.levels} levels")
    operator = as_operator(A, D_inv)
    omega = config.smoother.omega
    half = as_tensor(smooth(operator, None, f, u, config.smoother))
    total: Optional[Tensor] = None
    for corrector in correctors:
        current = half if total is None else half + total
        r = operator.residual(f, current)
        e = corrector(r)
        if config.post_smoothing:
            e = e + omega * operator.apply_inverse_diagonal(r - operator.apply(e))
        total = e if total is None else total + e
    result = half if total is None else half + total
    _check_finite(result)
    if isinstance(f, Tensor) or isinstance(u, Tensor):
        return result
    return result.value


def solve(
    A: Operator,
    f: np.ndarray,
    correctors: Sequence[Corrector],
    config: HybridConfig,
    reference: Optional[np.ndarray] = None,
    method: Optional[str] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Iterate hybrid cycles from a zero initial guess.

    Stops when the relative residual reaches `config.tol`, after `config.max_iters` cycles, or
    when the residual grows past 1e6 (reported as diverged).

    Args:
        A: system matrix or operator.
        f: right-hand side of shape (N, d).
        correctors: one corrector per level.
        config: hybrid settings.
        reference: exact solution; when given the report carries the energy-norm contraction.
        method: label of the report.
    """
    operator = as_operator(A)

    def step(f: np.ndarray, u: np.ndarray) -> np.ndarray:
        return hybrid_cycle(operator, None, f, u, correctors, config)

    return stationary_solve(
        operator, f, step, config.tol, config.max_iters, method or config.variant, reference
    )


def jacobi_solve(
    A: Operator,
    f: np.ndarray,
    smoother: JacobiConfig,
    tol: float = 1e-6,
    max_iters: int = 200,
    reference: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Smoother-only baseline; one iteration is one smoothing application."""
    operator = as_operator(A)

    def step(f: np.ndarray, u: np.ndarray) -> np.ndarray:
        return smooth(operator, None, f, u, smoother)

    return stationary_solve(operator, f, step, tol, max_iters, "jacobi-solver", reference)


def stationary_solve(
    A: Operator,
    f: np.ndarray,
    step: Callable[[np.ndarray, np.ndarray], np.ndarray],
    tol: float,
    max_iters: int,
    method: str,
    reference: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Iterate u <- step(f, u) from zero until the relative residual reaches `tol`."""
    operator = as_operator(A)
    report = SolveReport(method)
    start = time.perf_counter()
    f = np.asarray(f, dtype=np.float64)
    u = np.zeros_like(f)
    norm_f = l2(f)
    if norm_f == 0.0:
        report.converged = True
        report.wall_seconds = time.perf_counter() - start
        return u, report

    initial_error = None if reference is None else energy(operator.A, reference)
    for iteration in range(1, max_iters + 1):
        try:
            u = np.asarray(step(f, u))
        except SolverDivergedError:
            report.diverged = True
            break
        relative = l2(operator.residual(f, u).value) / norm_f
        report.history.append(relative)
        report.iterations = iteration
        logger.debug("%s iteration %d: relative residual %.6e", report.method, iteration, relative)
        if not np.isfinite(relative) or relative > DIVERGENCE_LIMIT:
            report.diverged = True
            break
        if relative <= tol:
            report.converged = True
            break

    if reference is not None and report.iterations > 0 and initial_error:
        final_error = energy(operator.A, reference - u)
        report.contraction = float((final_error / initial_error) ** (1.0 / report.iterations))
    report.wall_seconds = time.perf_counter() - start
    if report.diverged:
        logger.warning("%s diverged after %d iterations", report.method, report.iterations)
    else:
        logger.info(
            "%s %s after %d iterations (relative residual %.3e)",
            report.method,
            "converged" if report.converged else "stopped",
            report.iterations,
            report.final_residual,
        )
    return u, report


def hybrid_preconditioner(
    A: Operator, correctors: Sequence[Corrector], config: HybridConfig
) -> Preconditioner:
    """M(v): one hybrid cycle on right-hand side v from a zero initial guess."""
    operator = as_operator(A)

    def apply(v: np.ndarray) -> np.ndarray:
        return hybrid_cycle(operator, None, v, np.zeros_like(v), correctors, config)

    return apply


def jacobi_preconditioner(A: Operator, config: JacobiConfig) -> Preconditioner:
    """M(v): `config.sweeps` block Jacobi sweeps on right-hand side v from zero."""
    operator = as_operator(A)

    def apply(v: np.ndarray) -> np.ndarray:
        return smooth(operator, None, v, np.zeros_like(v), config)

    return apply


def fgmres(
    A: Operator,
    f: np.ndarray,
    preconditioner: Optional[Preconditioner] = None,
    tol: float = 1e-6,
    max_iters: int = 200,
    method: str = "fgmres",
) -> Tuple[np.ndarray, SolveReport]:
    """Flexible right-preconditioned GMRES without restart from a zero initial guess.

    A happy breakdown of the Arnoldi process ends the iteration as converged.
    """
    if tol <= 0 or max_iters < 1:
        raise ConfigError(f"invalid FGMRES settings tol={tol}, max_iters={max_iters}")
    operator = as_operator(A)
    report = SolveReport(method)
    start = time.perf_counter()
    f = np.asarray(f, dtype=np.float64)
    shape = f.shape
    b = f.ravel()
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        report.converged = True
        return np.zeros(shape), report

    def matvec(v: np.ndarray) -> np.ndarray:
        return operator.apply(v.reshape(shape)).value.ravel()

    def precondition(v: np.ndarray) -> np.ndarray:
        if preconditioner is None:
            return v
        return np.asarray(preconditioner(v.reshape(shape)), dtype=np.float64).ravel()

    V = np.zeros((max_iters + 1, b.size))
    Z = np.zeros((max_iters, b.size))
    H = np.zeros((max_iters + 1, max_iters))
    cs = np.zeros(max_iters)
    sn = np.zeros(max_iters)
    g = np.zeros(max_iters + 1)
    V[0] = b / beta
    g[0] = beta
    steps = 0
    for j in range(max_iters):
        Z[j] = precondition(V[j])
        w = matvec(Z[j])
        for i in range(j + 1):
            H[i, j] = np.dot(w, V[i])
            w = w - H[i, j] * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        breakdown = H[j + 1, j] <= 1e-14 * beta
        if not breakdown:
            V[j + 1] = w / H[j + 1, j]

        for i in range(j):
            upper = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = upper
        denominator = np.hypot(H[j, j], H[j + 1, j])
        if denominator == 0.0:
            logger.warning("%s: singular Hessenberg matrix at iteration %d", method, j + 1)
            break
        cs[j] = H[j, j] / denominator
        sn[j] = H[j + 1, j] / denominator
        H[j, j] = denominator
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]

        steps = j + 1
        relative = abs(g[j + 1]) / beta
        report.history.append(float(relative))
        logger.debug("%s iteration %d: relative residual %.6e", method, steps, relative)
        if relative <= tol or breakdown:
            report.converged = True
            break

    report.iterations = steps
    x = np.zeros(b.size)
    if steps:
        y = scipy.linalg.solve_triangular(H[:steps, :steps], g[:steps])
        x = y @ Z[:steps]
    report.true_residual = float(np.linalg.norm(b - matvec(x)) / beta)
    if abs(report.true_residual - report.final_residual) > 1e-8 * max(1.0, report.true_residual):
        logger.warning(
            "%s: true residual %.3e differs from recursive %.3e",
            method,
            report.true_residual,
            report.final_residual,
        )
    report.wall_seconds = time.perf_counter() - start
    logger.info(
        "%s %s after %d iterations (relative residual %.3e)",
        method,
        "converged" if report.converged else "stopped",
        steps,
        report.final_residual,
    )
    return x.reshape(shape), report


def estimate_contraction(
    A: Operator,
    f: np.ndarray,
    u_ref: np.ndarray,
    cycle: Callable[[np.ndarray, np.ndarray], np.ndarray],
    iterations: int = 10,
) -> float:
    """Empirical contraction (|e_k|_A / |e_0|_A)^(1/k) of `cycle(f, u)` from u = 0.

    Stops early if the error vanishes.
    """
    operator = as_operator(A)
    u = np.zeros_like(np.asarray(f, dtype=np.float64))
    initial = energy(operator.A, u_ref - u)
    if initial == 0.0:
        raise SolverError("initial error is zero, contraction is undefined")
    current = initial
    k = 0
    for k in range(1, iterations + 1):
        u = np.asarray(cycle(f, u))
        current = energy(operator.A, u_ref - u)
        if current == 0.0 or current <= 1e-14 * initial:
            return 0.0
    return float((current / initial) ** (1.0 / k))


def direct_solve(A: Union[BlockCsrMatrix, SystemOperator], f: np.ndarray) -> np.ndarray:
    """Reference solution by sparse direct factorisation."""
    matrix = A.A if isinstance(A, SystemOperator) else A
    f = np.asarray(f, dtype=np.float64)
    return splinalg.spsolve(matrix.to_scipy().tocsc(), f.ravel()).reshape(f.shape)


def cycle_function(
    A: Operator, correctors: Sequence[Corrector], config: HybridConfig
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """cycle(f, u) with fixed correctors, for `estimate_contraction`."""
    operator = as_operator(A)

    def cycle(f: np.ndarray, u: np.ndarray) -> np.ndarray:
        return hybrid_cycle(operator, None, f, u, correctors, config)

    return cycle


def zero_correctors(config: HybridConfig) -> List[Corrector]:
    """Correctors returning zero, leaving only smoothing (and post-smoothing) in the cycle."""

    def zero(r: Tensor) -> Tensor:
        return Tensor(np.zeros(r.shape))

    return [zero] * config.levels

