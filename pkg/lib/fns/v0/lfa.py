# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Local Fourier analysis of weighted block Jacobi for 2D isotropic elasticity.

The nine-point elasticity stencil on a uniform grid of spacing h acts on the Fourier mode
exp(i theta . x / h) through the 2 x 2 symbol

    L(theta) = 4 / h^2 [[(l + 2m) s1^2 + m s2^2,  (l + m) s1 s2 c1 c2],
                        [(l + m) s1 s2 c1 c2,     m s1^2 + (l + 2m) s2^2]]

with s_k = sin(theta_k / 2), c_k = cos(theta_k / 2) and Lamé constants l, m. The smoother's
error propagation symbol is M(theta) = I - omega D^{-1} L(theta), where D is the theta
independent diagonal of the stencil, i.e. the mean of diag L(theta) over all frequencies,
2 (l + 3m) / h^2 times the identity.

The high-frequency region is max(|theta_1|, |theta_2|) >= pi / 2; the smoothing factor is the
largest spectral radius of M over it.

You can use this library as follows:

```python
from fns.v0.lfa import LfaConfig, smoothing_factor_sweep, shear_factor

result = smoothing_factor_sweep(LfaConfig(nu=0.4, omega=2 / 3, resolution=64))
result.smoothing_factor       # >= shear_factor(0.4, 2 / 3) = 0.888...
result.to_csv("lfa.csv")
```
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from fns.v0.config import ConfigError
from fns.v0.elasticity import lame

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 2


@dataclass(frozen=True)
class LfaConfig:
    """Material, grid and smoother parameters of one analysis."""

    nu: float = 0.3
    E: float = 1.0
    h: float = 1.0
    omega: float = 2.0 / 3.0
    resolution: int = 64

    def __post_init__(self):
        if not 0.0 <= self.nu < 0.5:
            raise ConfigError(f"nu must lie in [0, 0.5), got {self.nu}")
        if self.E <= 0 or self.h <= 0:
            raise ConfigError("E and h must be positive")
        if self.resolution < 16:
            raise ConfigError(f"resolution must be >= 16, got {self.resolution}")

    @property
    def lame(self) -> Tuple[float, float]:
        """Lamé constants (lambda, mu)."""
        lam, mu = lame(self.E, self.nu)
        return float(lam), float(mu)

    def to_dict(self) -> dict:
        """Return the config as a Python dictionary."""
        return asdict(self)

    def __str__(self) -> str:
        """Return the config as a YAML string."""
        return yaml.safe_dump(self.to_dict())


def symbol_matrix(theta, lam: float, mu: float, h: float = 1.0) -> np.ndarray:
    """Symbol of the stencil at frequencies `theta` (..., 2), shape (..., 2, 2)."""
    theta = np.asarray(theta, dtype=np.float64)
    s1, s2 = np.sin(theta[..., 0] / 2), np.sin(theta[..., 1] / 2)
    c1, c2 = np.cos(theta[..., 0] / 2), np.cos(theta[..., 1] / 2)
    off = (lam + mu) * s1 * s2 * c1 * c2
    symbol = np.empty(theta.shape[:-1] + (2, 2))
    symbol[..., 0, 0] = (lam + 2 * mu) * s1**2 + mu * s2**2
    symbol[..., 1, 1] = mu * s1**2 + (lam + 2 * mu) * s2**2
    symbol[..., 0, 1] = off
    symbol[..., 1, 0] = off
    return 4.0 / h**2 * symbol


def diagonal_symbol(lam: float, mu: float, h: float = 1.0) -> float:
    """Mean of the symbol's diagonal over all frequencies, 2 (lambda + 3 mu) / h^2."""
    return 2.0 * (lam + 3.0 * mu) / h**2


def eigen_split(theta, lam: float, mu: float, h: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenvalues (eta_vol, eta_shear) of the symbol, larger one first."""
    symbol = symbol_matrix(theta, lam, mu, h)
    return _symmetric_eigenvalues(symbol)


def _symmetric_eigenvalues(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b, d = matrix[..., 0, 0], matrix[..., 0, 1], matrix[..., 1, 1]
    mean = 0.5 * (a + d)
    radius = np.sqrt((0.5 * (a - d)) ** 2 + b * b)
    return mean + radius, mean - radius


def jacobi_symbol(
    theta,
    lam: float,
    mu: float,
    h: float = 1.0,
    omega: float = 2.0 / 3.0,
    D: Optional[float] = None,
) -> np.ndarray:
    """Error propagation symbol I - omega D^{-1} L(theta), shape (..., 2, 2)."""
    if D is None:
        D = diagonal_symbol(lam, mu, h)
    symbol = symbol_matrix(theta, lam, mu, h)
    return np.eye(2) - omega / D * symbol


def spectral_radius(matrix: np.ndarray) -> np.ndarray:
    """Spectral radius of symmetric 2 x 2 matrices, closed form."""
    high, low = _symmetric_eigenvalues(matrix)
    return np.maximum(np.abs(high), np.abs(low))


def shear_factor(nu: float, omega: float) -> float:
    """Approximate shear-mode damping |1 - omega mu / (lambda + 2 mu)|, independent of E."""
    ratio = (1.0 - 2.0 * nu) / (2.0 * (1.0 - nu))
    return abs(1.0 - omega * ratio)


def frequency_grid(resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """theta_k = -pi + 2 pi j / n on both axes, as two (n, n) arrays indexed [theta_2, theta_1]."""
    ticks = -np.pi + 2.0 * np.pi * np.arange(resolution) / resolution
    theta1, theta2 = np.meshgrid(ticks, ticks, indexing="xy")
    return theta1, theta2


def high_frequency_mask(theta1: np.ndarray, theta2: np.ndarray) -> np.ndarray:
    """max(|theta_1|, |theta_2|) >= pi / 2."""
    return np.maximum(np.abs(theta1), np.abs(theta2)) >= np.pi / 2 - 1e-12


@dataclass
class LfaResult:
    """Spectral radius and symbol eigenvalues over the frequency grid."""

    config: LfaConfig
    theta1: np.ndarray
    theta2: np.ndarray
    rho: np.ndarray
    eta_vol: np.ndarray
    eta_shear: np.ndarray

    @property
    def high_frequency(self) -> np.ndarray:
        """Mask of the high-frequency region."""
        return high_frequency_mask(self.theta1, self.theta2)

    @property
    def smoothing_factor(self) -> float:
        """Largest spectral radius over the high-frequency region."""
        return float(self.rho[self.high_frequency].max())

    def to_frame(self) -> pd.DataFrame:
        """One row per frequency: theta1, theta2, rho, eta_vol, eta_shear."""
        return pd.DataFrame(
            {
                "theta1": self.theta1.ravel(),
                "theta2": self.theta2.ravel(),
                "rho": self.rho.ravel(),
                "eta_vol": self.eta_vol.ravel(),
                "eta_shear": self.eta_shear.ravel(),
            }
        )

    def to_csv(self, path: Union[str, Path]):
        """Write the grid as CSV with a header row."""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def smoothing_factor_sweep(config: LfaConfig) -> LfaResult:
    """Evaluate rho(M(theta)) over the full frequency grid."""
    lam, mu = config.lame
    theta1, theta2 = frequency_grid(config.resolution)
    theta = np.stack([theta1, theta2], axis=-1)
    rho = spectral_radius(jacobi_symbol(theta, lam, mu, config.h, config.omega))
    eta_vol, eta_shear = eigen_split(theta, lam, mu, config.h)
    result = LfaResult(config, theta1, theta2, rho, eta_vol, eta_shear)
    logger.info(
        "LFA nu=%.3f omega=%.4f: smoothing factor %.6f",
        config.nu,
        config.omega,
        result.smoothing_factor,
    )
    return result


def shear_damping(config: LfaConfig) -> float:
    """Worst high-frequency damping |1 - omega eta_shear / D| of the shear eigenvector."""
    lam, mu = config.lame
    theta1, theta2 = frequency_grid(config.resolution)
    theta = np.stack([theta1, theta2], axis=-1)
    _, eta_shear = eigen_split(theta, lam, mu, config.h)
    factor = np.abs(1.0 - config.omega * eta_shear / diagonal_symbol(lam, mu, config.h))
    return float(factor[high_frequency_mask(theta1, theta2)].max())
