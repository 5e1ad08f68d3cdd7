"""Periodic-torus discretization and Fourier-side operators.

Position nodes are ``x_j = -L/2 + j*h`` along each axis.  The frequency
representation approximates the continuous unitary Fourier transform,

    psi_hat(xi_k) = (2*pi)**(-n/2) * sum_j psi(x_j) exp(-i xi_k . x_j) h**n,

stored in FFT ordering.  Quadrature weights are ``h**n`` in position and
``(2*pi/L)**n`` in frequency, which makes Parseval exact on the lattice.

Inner products are conjugate-linear in the first slot.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft

POSITION = "position"
FREQUENCY = "frequency"
_REPRESENTATIONS = (POSITION, FREQUENCY)

# relative slack on band edges so that edges landing on lattice points are kept
_EDGE_RTOL = 1e-12


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralGrid:
    dim: int
    points_per_dim: int
    box_length: float

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim**self.dim

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def dual_cell_volume(self) -> float:
        return (2.0 * np.pi / self.box_length) ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -0.5 * self.box_length + self.spacing * np.arange(self.points_per_dim)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def mode_integers(self) -> np.ndarray:
        """Signed integer mode index k per FFT slot along one axis."""
        n = self.points_per_dim
        return np.fft.fftfreq(n, d=1.0 / n).astype(int)

    @cached_property
    def axis_frequencies(self) -> np.ndarray:
        return 2.0 * np.pi * self.mode_integers / self.box_length

    @cached_property
    def wavevectors(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis_frequencies] * self.dim), indexing="ij"))

    @cached_property
    def frequency_magnitude(self) -> np.ndarray:
        return np.sqrt(sum(k**2 for k in self.wavevectors))

    @cached_property
    def lattice(self) -> np.ndarray:
        """Sorted one-axis frequency lattice 2*pi*k/L, k in [-N/2, N/2)."""
        return np.sort(self.axis_frequencies)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on every mode that carries the unpaired index -N/2 on some axis."""
        ny = self.mode_integers == -(self.points_per_dim // 2)
        masks = np.meshgrid(*([ny] * self.dim), indexing="ij")
        return np.logical_or.reduce(masks)

    @cached_property
    def max_frequency(self) -> float:
        return float(self.frequency_magnitude.max())

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(-i xi_k x_0) with x_0 = -L/2 reduces to (-1)**k per axis
        sign = np.where(self.mode_integers % 2 == 0, 1.0, -1.0)
        grids = np.meshgrid(*([sign] * self.dim), indexing="ij")
        return np.prod(grids, axis=0)

    @property
    def _forward_scale(self) -> float:
        return self.cell_volume / (2.0 * np.pi) ** (self.dim / 2)


def make_grid(dim: int, points_per_dim: int, box_length: float) -> SpectralGrid:
    if dim not in (1, 2):
        raise ValueError(f"unsupported dimension {dim}; expected 1 or 2")
    n = int(points_per_dim)
    if n != points_per_dim or n < 8 or n & (n - 1):
        raise ValueError(f"points_per_dim must be a power of two >= 8, got {points_per_dim}")
    if not box_length > 0:
        raise ValueError(f"box_length must be positive, got {box_length}")
    return SpectralGrid(dim, n, float(box_length))


@dataclass
class WaveFunction:
    grid: SpectralGrid
    amplitudes: np.ndarray
    representation: str = POSITION

    def __post_init__(self):
        if self.representation not in _REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != self.grid.shape:
            amps = amps.reshape(self.grid.shape)
        self.amplitudes = amps

    @property
    def weight(self) -> float:
        if self.representation == POSITION:
            return self.grid.cell_volume
        return self.grid.dual_cell_volume

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.amplitudes)))

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes.copy(), self.representation)

    def in_position(self) -> "WaveFunction":
        return transform(self, POSITION)

    def in_frequency(self) -> "WaveFunction":
        return transform(self, FREQUENCY)

    def scaled(self, factor: complex) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes * factor, self.representation)


def transform(psi: WaveFunction, target: str, workers: int | None = None) -> WaveFunction:
    if target not in _REPRESENTATIONS:
        raise ValueError(f"unknown representation {target!r}")
    if psi.representation == target:
        return psi
    g = psi.grid
    if target == FREQUENCY:
        out = scipy.fft.fftn(psi.amplitudes, workers=workers) * (g._phase * g._forward_scale)
    else:
        out = scipy.fft.ifftn(psi.amplitudes * g._phase, workers=workers) / g._forward_scale
    return WaveFunction(g, out, target)


def _check_pair(psi: WaveFunction, chi: WaveFunction) -> None:
    if psi.grid != chi.grid:
        raise GridMismatchError("wave functions live on different grids")
    if psi.representation != chi.representation:
        raise GridMismatchError(
            f"representation mismatch: {psi.representation} vs {chi.representation}"
        )


def inner(psi: WaveFunction, chi: WaveFunction) -> complex:
    """Discrete L2 inner product, conjugate-linear in ``psi``."""
    _check_pair(psi, chi)
    return complex(np.vdot(psi.amplitudes, chi.amplitudes) * psi.weight)


def norm_l2(psi: WaveFunction) -> float:
    a = psi.amplitudes.ravel()
    return float(np.sqrt(np.vdot(a, a).real * psi.weight))


def _weighted_frequency_norm(psi: WaveFunction, multiplier: np.ndarray) -> float:
    hat = transform(psi, FREQUENCY).amplitudes
    return float(np.sqrt(np.sum(multiplier * np.abs(hat) ** 2) * psi.grid.dual_cell_volume))


def norm_sobolev(psi: WaveFunction, sigma: float) -> float:
    """Inhomogeneous H^sigma norm with the bracket weight (1 + |xi|^2)^(sigma/2)."""
    if sigma < 0:
        raise ValueError(f"Sobolev order must be nonnegative, got {sigma}")
    if sigma == 0:
        return norm_l2(psi)
    weight = (1.0 + psi.grid.frequency_magnitude**2) ** sigma
    return _weighted_frequency_norm(psi, weight)


def norm_lp(psi: WaveFunction, p: float) -> float:
    if not (p >= 2 and np.isfinite(p)):
        raise ValueError(f"L^p exponent must be finite and >= 2, got {p}")
    u = transform(psi, POSITION).amplitudes
    if p == 2:
        return norm_l2(WaveFunction(psi.grid, u, POSITION))
    return float((np.sum(np.abs(u) ** p) * psi.grid.cell_volume) ** (1.0 / p))


@dataclass(frozen=True)
class KineticOperator:
    """Fractional kinetic term with symbol |xi|^(2 theta); the Hamiltonian part is that over 2m."""

    grid: SpectralGrid
    theta: float
    mass: float

    def __post_init__(self):
        if not self.theta >= 0.5:
            raise ValueError(f"theta must be >= 1/2, got {self.theta}")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")

    @cached_property
    def multiplier(self) -> np.ndarray:
        return self.grid.frequency_magnitude ** (2.0 * self.theta)

    @cached_property
    def hamiltonian_multiplier(self) -> np.ndarray:
        return self.multiplier / (2.0 * self.mass)


def apply_kinetic(K: KineticOperator, psi: WaveFunction) -> WaveFunction:
    if psi.grid != K.grid:
        raise GridMismatchError("kinetic operator and state use different grids")
    hat = transform(psi, FREQUENCY)
    out = WaveFunction(psi.grid, hat.amplitudes * K.multiplier, FREQUENCY)
    return transform(out, psi.representation)


def kinetic_expectation(K: KineticOperator, psi: WaveFunction) -> float:
    """(p^{2 theta} psi, psi), not normalized by the state norm."""
    if psi.grid != K.grid:
        raise GridMismatchError("kinetic operator and state use different grids")
    hat = transform(psi, FREQUENCY).amplitudes
    return float(np.sum(K.multiplier * np.abs(hat) ** 2) * psi.grid.dual_cell_volume)


@dataclass(frozen=True)
class BandWindow:
    a: float
    R: float

    def __post_init__(self):
        if not (0 < self.a < self.R):
            raise ValueError(f"band needs 0 < a < R, got a={self.a}, R={self.R}")

    def mask(self, grid: SpectralGrid) -> np.ndarray:
        """Eligible modes a <= |xi| <= R, Nyquist modes excluded."""
        if self.R > grid.max_frequency * (1 + _EDGE_RTOL):
            raise ValueError(
                f"band upper edge R={self.R} exceeds the largest lattice frequency "
                f"{grid.max_frequency:.6g}"
            )
        mag = grid.frequency_magnitude
        m = (mag >= self.a * (1 - _EDGE_RTOL)) & (mag <= self.R * (1 + _EDGE_RTOL))
        m &= ~grid.nyquist_mask
        if not m.any():
            raise ValueError(f"band [{self.a}, {self.R}] contains no lattice mode on this grid")
        return m


def band_project(psi: WaveFunction, w: BandWindow) -> WaveFunction:
    mask = w.mask(psi.grid)
    hat = transform(psi, FREQUENCY)
    out = WaveFunction(psi.grid, np.where(mask, hat.amplitudes, 0.0), FREQUENCY)
    return transform(out, psi.representation)


def plane_wave(grid: SpectralGrid, mode: tuple[int, ...] | int) -> WaveFunction:
    """L2-normalized lattice mode with signed integer index ``mode`` (one per axis)."""
    mode = (mode,) if np.isscalar(mode) else tuple(mode)
    if len(mode) != grid.dim:
        raise ValueError("mode index must have one entry per dimension")
    phase = sum(2.0 * np.pi * k * x / grid.box_length for k, x in zip(mode, grid.coords))
    amps = np.exp(1j * phase) / np.sqrt(grid.box_length**grid.dim)
    return WaveFunction(grid, amps, POSITION)


def gaussian(
    grid: SpectralGrid,
    center: tuple[float, ...] | float = 0.0,
    width: float = 1.0,
    momentum: tuple[float, ...] | float = 0.0,
) -> WaveFunction:
    """Normalized Gaussian packet prod_d (pi w^2)^(-1/4) exp(-(x-c)^2/(2w^2) + i k x)."""
    center = np.broadcast_to(np.asarray(center, float), (grid.dim,))
    momentum = np.broadcast_to(np.asarray(momentum, float), (grid.dim,))
    amps = np.ones(grid.shape, dtype=complex)
    for x, c, k in zip(grid.coords, center, momentum):
        amps *= (np.pi * width**2) ** -0.25 * np.exp(-((x - c) ** 2) / (2 * width**2) + 1j * k * x)
    return WaveFunction(grid, amps, POSITION)


def normalized(psi: WaveFunction) -> WaveFunction:
    nrm = norm_l2(psi)
    if nrm == 0:
        raise ValueError("cannot normalize the zero state")
    return psi.scaled(1.0 / nrm)
