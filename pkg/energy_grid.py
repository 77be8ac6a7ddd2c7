"""Energy discretization shared by every model.

All tables live on one uniform energy axis whose bin width divides the photon
energy exactly, so a photon shift is an integer translation by ``k`` bins.
Probability tables use the integral convention: ``sum(values) * delta`` for
spectra and ``sum(values) * delta**2`` for maps.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from exceptions import InvalidArgumentError, UndefinedVisibilityError

NORMALIZATION_TOLERANCE = 1e-9
COMMENSURABILITY_TOLERANCE = 1e-9
BLUR_TRUNCATE = 6.0


@dataclass(frozen=True)
class EnergyGrid:
    e_min: float
    delta: float
    n_bins: int
    hbar_omega: float
    k: int

    def __post_init__(self):
        if not np.isfinite(self.e_min):
            raise InvalidArgumentError(f"e_min must be finite, got {self.e_min}")
        if self.delta <= 0 or self.hbar_omega <= 0:
            raise InvalidArgumentError(f"delta and hbar_omega must be positive, got delta={self.delta}, hbar_omega={self.hbar_omega}")
        if self.k < 1:
            raise InvalidArgumentError(f"k must be a positive integer, got {self.k}")
        if abs(self.k * self.delta - self.hbar_omega) > COMMENSURABILITY_TOLERANCE * self.hbar_omega:
            raise InvalidArgumentError(f"hbar_omega={self.hbar_omega} is not {self.k} bins of width {self.delta}")
        if self.n_bins < 2 * self.k + 1:
            raise InvalidArgumentError(f"n_bins={self.n_bins} is below the minimum 2k+1={2 * self.k + 1}")

    @classmethod
    def from_header(cls, e_min: float, delta: float, n_bins: int, hbar_omega: float) -> "EnergyGrid":
        """Rebuild a grid from the four values stored in a file header."""
        if delta <= 0:
            raise InvalidArgumentError(f"delta must be positive, got {delta}")
        k = int(round(hbar_omega / delta))
        return cls(e_min=float(e_min), delta=float(delta), n_bins=int(n_bins), hbar_omega=float(hbar_omega), k=k)

    @property
    def energies(self) -> np.ndarray:
        return self.e_min + self.delta * np.arange(self.n_bins)

    @property
    def e_max(self) -> float:
        return self.e_min + self.delta * (self.n_bins - 1)

    def in_photon_units(self) -> np.ndarray:
        """Bin energies measured in units of the photon energy."""
        return self.energies / self.hbar_omega

    def index_of(self, energy: float) -> int:
        index = int(round((energy - self.e_min) / self.delta))
        if not 0 <= index < self.n_bins:
            raise InvalidArgumentError(f"Energy {energy} eV lies outside [{self.e_min}, {self.e_max}]")
        return index

    def same_as(self, other: "EnergyGrid") -> bool:
        scale = max(abs(self.delta), 1.0)
        return (self.n_bins == other.n_bins and self.k == other.k
                and abs(self.e_min - other.e_min) <= 1e-9 * scale
                and abs(self.delta - other.delta) <= 1e-12 * scale
                and abs(self.hbar_omega - other.hbar_omega) <= 1e-12 * max(self.hbar_omega, 1.0))


def make_grid(e_min: float, hbar_omega: float, k: int, n_photons_span: int) -> EnergyGrid:
    if hbar_omega <= 0:
        raise InvalidArgumentError(f"hbar_omega must be positive, got {hbar_omega}")
    if k < 1:
        raise InvalidArgumentError(f"k must be at least 1, got {k}")
    if n_photons_span < 1:
        raise InvalidArgumentError(f"n_photons_span must be at least 1, got {n_photons_span}")
    grid = EnergyGrid(e_min=float(e_min), delta=hbar_omega / k, n_bins=k * n_photons_span + 1,
                      hbar_omega=float(hbar_omega), k=int(k))
    logging.debug(f"Created grid: {grid}")
    return grid


def _frozen_array(values, dtype, shape: Tuple[int, ...], name: str) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    if array.shape != shape:
        raise InvalidArgumentError(f"{name} has shape {array.shape}, expected {shape}")
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Spectrum1D:
    grid: EnergyGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen_array(self.values, float, (self.grid.n_bins,), 'Spectrum values'))

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.delta)

    @property
    def is_normalized(self) -> bool:
        return abs(self.mass() - 1.0) <= NORMALIZATION_TOLERANCE

    def normalized(self) -> "Spectrum1D":
        mass = self.mass()
        if mass <= 0:
            raise InvalidArgumentError("Cannot normalize a spectrum with nonpositive mass")
        return Spectrum1D(self.grid, self.values / mass)

    def mean(self) -> float:
        return float(np.sum(self.grid.energies * self.values) * self.grid.delta / self.mass())

    def variance(self) -> float:
        mean = self.mean()
        return float(np.sum((self.grid.energies - mean) ** 2 * self.values) * self.grid.delta / self.mass())


@dataclass(frozen=True)
class CoincidenceMap:
    """Joint probability density P(E1, E2); rows index E1, columns E2."""
    grid: EnergyGrid
    values: np.ndarray

    def __post_init__(self):
        shape = (self.grid.n_bins, self.grid.n_bins)
        object.__setattr__(self, 'values', _frozen_array(self.values, float, shape, 'Map values'))

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.delta ** 2)

    @property
    def is_normalized(self) -> bool:
        return abs(self.mass() - 1.0) <= NORMALIZATION_TOLERANCE

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))

    def normalized(self) -> "CoincidenceMap":
        mass = self.mass()
        if mass <= 0:
            raise InvalidArgumentError("Cannot normalize a map with nonpositive mass")
        return CoincidenceMap(self.grid, self.values / mass)

    def marginal(self, axis: int) -> Spectrum1D:
        """Spectrum of electron 1 (axis=0) or electron 2 (axis=1)."""
        if axis not in (0, 1):
            raise InvalidArgumentError(f"axis must be 0 or 1, got {axis}")
        return Spectrum1D(self.grid, np.sum(self.values, axis=1 - axis) * self.grid.delta)

    def effective_spectrum(self) -> Spectrum1D:
        """Histogram of individual electron energies within two-electron events."""
        return Spectrum1D(self.grid, 0.5 * (self.marginal(0).values + self.marginal(1).values))

    def transposed(self) -> "CoincidenceMap":
        return CoincidenceMap(self.grid, self.values.T)


@dataclass(frozen=True)
class PairWavefunction:
    grid: EnergyGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        shape = (self.grid.n_bins, self.grid.n_bins)
        object.__setattr__(self, 'amplitudes', _frozen_array(self.amplitudes, complex, shape, 'Amplitudes'))

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.delta ** 2)

    @property
    def is_normalized(self) -> bool:
        return abs(self.norm() - 1.0) <= NORMALIZATION_TOLERANCE

    def normalized(self) -> "PairWavefunction":
        norm = self.norm()
        if norm <= 0:
            raise InvalidArgumentError("Cannot normalize a zero wavefunction")
        return PairWavefunction(self.grid, self.amplitudes / np.sqrt(norm))

    def probability(self) -> CoincidenceMap:
        return CoincidenceMap(self.grid, np.abs(self.amplitudes) ** 2)


Table = Union[Spectrum1D, CoincidenceMap, PairWavefunction]


def shift_array(values: np.ndarray, shifts: Sequence[int]) -> np.ndarray:
    """Translate ``values`` by ``shifts`` bins per axis, filling vacated bins with zero."""
    out = np.zeros_like(values)
    add_shifted(out, values, shifts, 1.0)
    return out


def add_shifted(target: np.ndarray, values: np.ndarray, shifts: Sequence[int], weight) -> None:
    """In place: ``target += weight * shift_array(values, shifts)``."""
    source, destination = [], []
    for shift, n in zip(shifts, values.shape):
        if abs(shift) >= n:
            return
        if shift >= 0:
            destination.append(slice(shift, n))
            source.append(slice(0, n - shift))
        else:
            destination.append(slice(0, n + shift))
            source.append(slice(-shift, n))
    target[tuple(destination)] += weight * values[tuple(source)]


def shift_by_photons(table: Table, n1: int, n2: int = 0) -> Table:
    k = table.grid.k
    if isinstance(table, Spectrum1D):
        if n2 != 0:
            raise InvalidArgumentError("A spectrum has a single energy axis; n2 must be 0")
        return Spectrum1D(table.grid, shift_array(table.values, (n1 * k,)))
    if isinstance(table, CoincidenceMap):
        return CoincidenceMap(table.grid, shift_array(table.values, (n1 * k, n2 * k)))
    if isinstance(table, PairWavefunction):
        return PairWavefunction(table.grid, shift_array(table.amplitudes, (n1 * k, n2 * k)))
    raise InvalidArgumentError(f"Cannot shift an object of type {type(table).__name__}")


def blur(coincidence: CoincidenceMap, sigma: float) -> CoincidenceMap:
    """Isotropic Gaussian detector blur of standard deviation ``sigma`` (eV)."""
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return coincidence
    mass = coincidence.mass()
    blurred = gaussian_filter(np.asarray(coincidence.values), sigma / coincidence.grid.delta,
                              mode='reflect', truncate=BLUR_TRUNCATE)
    blurred_mass = np.sum(blurred) * coincidence.grid.delta ** 2
    if blurred_mass > 0:
        blurred *= mass / blurred_mass
    return CoincidenceMap(coincidence.grid, blurred)


def visibility(table: Union[Spectrum1D, CoincidenceMap], window: float) -> float:
    """Fringe visibility (Cmax - Cmin)/(Cmax + Cmin) over bins with |E| < window."""
    if window <= 0:
        raise InvalidArgumentError(f"window must be positive, got {window}")
    inside = np.abs(table.grid.energies) < window
    if isinstance(table, CoincidenceMap):
        region = table.values[np.ix_(inside, inside)]
    else:
        region = table.values[inside]
    if region.size == 0:
        raise UndefinedVisibilityError(f"No bins with |E| < {window} eV")
    c_max, c_min = float(np.max(region)), float(np.min(region))
    if c_max + c_min <= 0:
        raise UndefinedVisibilityError(f"All values vanish inside |E| < {window} eV")
    return (c_max - c_min) / (c_max + c_min)
