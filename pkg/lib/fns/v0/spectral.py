# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Frequency-domain correction operators on (possibly non-uniform) node coordinates.

A correction level maps a residual r to a correction

    e = F^{-1} C* diag(lambda) C F r

where F is the discrete Fourier sum over the integer lattice [-m, m]^d evaluated at node
coordinates xi, C is a 3^d convolution over that lattice (C* its adjoint) and lambda a real
per-frequency, per-component scaling.

Coordinates are rescaled to [0, 2 pi) over their bounding box before exponentiation. The box is
stretched by one nominal node spacing, so the n nodes per axis of a uniform grid land on the
classical DFT sample points 2 pi j / n.

Complex spectra are carried as `Spectrum(real, imag)` pairs of tensors so every operation here
is differentiable with respect to xi, lambda and the kernel.

You can use this library as follows:

```python
from fns.v0.spectral import FrequencyLattice, FourierBasis, SpectralLevel, apply_level

lattice = FrequencyLattice(d=2, m=4)
basis = FourierBasis(mesh.nodes, lattice)
level = SpectralLevel(lattice, lam=np.ones((lattice.size, 2)), kernel=identity_kernel(2))
e = apply_level(r, basis, level)
```
"""

import functools
import itertools
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
import scipy.sparse as sp

from fns.v0.autodiff import (
    ArrayLike,
    Tensor,
    as_tensor,
    complex_exp,
    gather,
    matmul,
    sparse_matmul,
    tensor_sum,
    transpose,
)
from fns.v0.config import Error

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 7

TWO_PI = 2.0 * np.pi


class SpectralError(Error):
    """Raised on inconsistent spectral shapes."""


@dataclass(frozen=True)
class FrequencyLattice:
    """All integer frequencies k in [-m, m]^d in lexicographic order."""

    d: int
    m: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise SpectralError(f"lattice dimension must be 1, 2 or 3, got {self.d}")
        if self.m < 0:
            raise SpectralError(f"bandwidth must be >= 0, got {self.m}")

    @property
    def width(self) -> int:
        """Frequencies per axis, 2m + 1."""
        return 2 * self.m + 1

    @property
    def size(self) -> int:
        """Number of frequencies, (2m + 1)^d."""
        return self.width**self.d

    @property
    def frequencies(self) -> np.ndarray:
        """(size, d) integer frequency vectors."""
        return _frequencies(self.d, self.m)

    def index(self, k) -> int:
        """Position of frequency `k` in the lattice order."""
        shifted = np.asarray(k, dtype=np.int64) + self.m
        if np.any(shifted < 0) or np.any(shifted >= self.width):
            raise SpectralError(f"frequency {tuple(k)} lies outside the lattice")
        return int(np.ravel_multi_index(tuple(shifted), (self.width,) * self.d))

    def magnitudes(self) -> np.ndarray:
        """Euclidean norm |k| of every frequency."""
        return np.linalg.norm(self.frequencies, axis=1)

    def shift_operator(self) -> sp.csr_matrix:
        """Stacked zero-padded shifts S_s for s in {-1, 0, 1}^d, shape (3^d size, size)."""
        return _shift_operator(self.d, self.m)


@functools.lru_cache(maxsize=None)
def _frequencies(d: int, m: int) -> np.ndarray:
    frequencies = np.array(list(itertools.product(range(-m, m + 1), repeat=d)), dtype=np.int64)
    frequencies.setflags(write=False)
    return frequencies


@functools.lru_cache(maxsize=None)
def _shift_operator(d: int, m: int) -> sp.csr_matrix:
    width = 2 * m + 1
    frequencies = _frequencies(d, m)
    size = len(frequencies)
    rows, cols = [], []
    for block, offset in enumerate(itertools.product((-1, 0, 1), repeat=d)):
        source = frequencies - np.array(offset)
        inside = np.all(np.abs(source) <= m, axis=1)
        target = np.nonzero(inside)[0]
        origin = np.ravel_multi_index(tuple((source[inside] + m).T), (width,) * d)
        rows.append(block * size + target)
        cols.append(origin)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(3**d * size, size)
    )


def identity_kernel(d: int) -> np.ndarray:
    """Centred delta kernel (C = identity), shape (2, 3^d, d) as (real, imag)."""
    kernel = np.zeros((2, 3**d, d))
    kernel[0, (3**d) // 2, :] = 1.0
    return kernel


def kernel_size(d: int) -> int:
    """Number of real parameters of a convolution kernel."""
    return 2 * 3**d * d


def normalize_coordinates(xi: ArrayLike, padding: Optional[ArrayLike] = None) -> Tensor:
    """Affinely map coordinates to [0, 2 pi)^d over their padded bounding box.

    Each axis of the box is lengthened by `padding` times its span, one node spacing over the
    span for a grid, so grid nodes land on the DFT sample points 2 pi j / n. Without `padding`
    the nodes are taken to form a cubic grid of N^{1/d} nodes per axis.

    The box corners come from a gather of the extremal nodes, so the map is differentiable with
    respect to xi.
    """
    xi = as_tensor(xi)
    n, d = xi.shape
    axes = np.arange(d)
    lower = gather(xi, (np.argmin(xi.value, axis=0), axes))
    upper = gather(xi, (np.argmax(xi.value, axis=0), axes))
    span = upper - lower
    if padding is None:
        padding = np.full(d, 1.0 / max(round(n ** (1.0 / d)) - 1, 1))
    padding = np.asarray(padding, dtype=np.float64)
    if padding.shape != (d,) or np.any(padding < 0):
        raise SpectralError(f"padding must be {d} non-negative fractions, got {padding}")
    length = span * (1.0 + padding)
    # a flat axis maps to 0
    length = length + (span.value <= 0).astype(np.float64)
    return (xi - lower) * (TWO_PI / length)


class FourierBasis:
    """cos(k . xi_l) and sin(k . xi_l) for every node l and lattice frequency k."""

    def __init__(
        self,
        xi: ArrayLike,
        lattice: FrequencyLattice,
        normalize: bool = True,
        padding: Optional[ArrayLike] = None,
    ):
        xi = as_tensor(xi)
        if xi.ndim != 2 or xi.shape[1] != lattice.d:
            raise SpectralError(f"coordinates of shape {xi.shape} for a {lattice.d}D lattice")
        self.lattice = lattice
        self.xi = normalize_coordinates(xi, padding) if normalize else xi
        phase = matmul(self.xi, lattice.frequencies.T.astype(np.float64))
        self.cos, self.sin = complex_exp(phase)

    @property
    def n_nodes(self) -> int:
        """Number of sample nodes."""
        return self.cos.shape[0]


class Spectrum(NamedTuple):
    """Complex spectrum of shape (lattice size, d) as real and imaginary tensors."""

    real: Tensor
    imag: Tensor

    def magnitude(self) -> np.ndarray:
        """|r_hat(k)| per frequency and component."""
        return np.hypot(self.real.value, self.imag.value)

    def to_complex(self) -> np.ndarray:
        """The spectrum as a complex NumPy array."""
        return self.real.value + 1j * self.imag.value

    def norm(self) -> float:
        """l2 norm of the complex spectrum."""
        return float(np.sqrt(np.sum(self.real.value**2 + self.imag.value**2)))


def _basis(xi_or_basis: Union[FourierBasis, ArrayLike], lattice: FrequencyLattice) -> FourierBasis:
    if isinstance(xi_or_basis, FourierBasis):
        if xi_or_basis.lattice != lattice:
            raise SpectralError("basis was built for a different lattice")
        return xi_or_basis
    return FourierBasis(xi_or_basis, lattice)


def forward_nudft(
    r: ArrayLike, xi: Union[FourierBasis, ArrayLike], lattice: FrequencyLattice
) -> Spectrum:
    """r_hat(k) = sum_l r_l exp(i k . xi_l), per frequency and component."""
    basis = _basis(xi, lattice)
    r = as_tensor(r)
    if r.shape[0] != basis.n_nodes:
        raise SpectralError(f"{r.shape[0]} residual nodes for {basis.n_nodes} coordinates")
    return Spectrum(matmul(transpose(basis.cos), r), matmul(transpose(basis.sin), r))


def inverse_nudft(
    spectrum: Spectrum, xi: Union[FourierBasis, ArrayLike], lattice: FrequencyLattice
) -> Tensor:
    """e_l = Re(sum_k h(k) exp(-i k . xi_l)) / |lattice|."""
    basis = _basis(xi, lattice)
    real, imag = as_tensor(spectrum.real), as_tensor(spectrum.imag)
    if real.shape[0] != lattice.size or imag.shape != real.shape:
        raise SpectralError(f"spectrum of shape {real.shape} for a lattice of {lattice.size}")
    return (matmul(basis.cos, real) + matmul(basis.sin, imag)) * (1.0 / lattice.size)


def lattice_convolution(
    spectrum: Spectrum, kernel: ArrayLike, lattice: FrequencyLattice, adjoint: bool = False
) -> Spectrum:
    """Apply the zero-padded 3^d lattice convolution C (or its adjoint C*) per component.

    Args:
        spectrum: input spectrum of shape (lattice size, d).
        kernel: (2, 3^d, d) real and imaginary kernel weights per offset and component.
        lattice: the frequency lattice.
        adjoint: apply C* instead of C.
    """
    kernel = as_tensor(kernel)
    d = lattice.d
    offsets = 3**d
    if kernel.shape != (2, offsets, d):
        raise SpectralError(f"kernel of shape {kernel.shape}, expected {(2, offsets, d)}")
    size = lattice.size
    real, imag = as_tensor(spectrum.real), as_tensor(spectrum.imag)
    w_real = kernel[0].reshape(offsets, 1, d)
    w_imag = kernel[1].reshape(offsets, 1, d)
    shifts = lattice.shift_operator()

    if not adjoint:
        shifted_real = sparse_matmul(shifts, real).reshape(offsets, size, d)
        shifted_imag = sparse_matmul(shifts, imag).reshape(offsets, size, d)
        return Spectrum(
            tensor_sum(w_real * shifted_real - w_imag * shifted_imag, axis=0),
            tensor_sum(w_real * shifted_imag + w_imag * shifted_real, axis=0),
        )

    # conj(w) applied before the transposed shifts
    y_real = real.reshape(1, size, d)
    y_imag = imag.reshape(1, size, d)
    weighted_real = (w_real * y_real + w_imag * y_imag).reshape(offsets * size, d)
    weighted_imag = (w_real * y_imag - w_imag * y_real).reshape(offsets * size, d)
    transposed = shifts.T.tocsr()
    return Spectrum(
        sparse_matmul(transposed, weighted_real), sparse_matmul(transposed, weighted_imag)
    )


@dataclass
class SpectralLevel:
    """One correction level: lattice, real scaling lambda (size, d) and kernel (2, 3^d, d)."""

    lattice: FrequencyLattice
    lam: ArrayLike
    kernel: ArrayLike
    scale: float = 1.0

    def __post_init__(self):
        self.lam = as_tensor(self.lam)
        self.kernel = as_tensor(self.kernel)
        if self.lam.shape != (self.lattice.size, self.lattice.d):
            raise SpectralError(
                f"lambda of shape {self.lam.shape}, expected {(self.lattice.size, self.lattice.d)}"
            )
        if not np.all(np.isfinite(self.lam.value)):
            raise SpectralError("lambda must be finite")


def apply_level(r: ArrayLike, xi: Union[FourierBasis, ArrayLike], level: SpectralLevel) -> Tensor:
    """Correction F^{-1} C* (scale lambda) C F r of one level."""
    lattice = level.lattice
    basis = _basis(xi, lattice)
    spectrum = lattice_convolution(forward_nudft(r, basis, lattice), level.kernel, lattice)
    lam = level.lam * level.scale if level.scale != 1.0 else level.lam
    scaled = Spectrum(spectrum.real * lam, spectrum.imag * lam)
    back = lattice_convolution(scaled, level.kernel, lattice, adjoint=True)
    return inverse_nudft(back, basis, lattice)


def quartile_masks(lattice: FrequencyLattice):
    """Masks of the lowest and highest quarter of the lattice by |k|."""
    magnitudes = lattice.magnitudes()
    order = np.argsort(magnitudes, kind="stable")
    quarter = max(lattice.size // 4, 1)
    low = np.zeros(lattice.size, dtype=bool)
    high = np.zeros(lattice.size, dtype=bool)
    low[order[:quarter]] = True
    high[order[-quarter:]] = True
    return low, high
