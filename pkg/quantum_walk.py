import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import convolve1d
from scipy.special import jv
from scipy.stats import norm

from energy_grid import CoincidenceMap, EnergyGrid, PairWavefunction, Spectrum1D, add_shifted
from exceptions import GridTooNarrowError, InvalidArgumentError, NegativeProbabilityError

DEFAULT_EPS = 1e-12
TRUNCATION_TOLERANCE = 1e-6
INPUT_TOLERANCE = 1e-6
NEGATIVE_CLIP = -1e-12
NEGATIVE_HARD_LIMIT = -1e-9
DEFAULT_NODES = 33


@dataclass(frozen=True)
class Coupling:
    magnitude: float
    phase: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.magnitude) or self.magnitude < 0:
            raise InvalidArgumentError(f"Coupling magnitude must be finite and nonnegative, got {self.magnitude}")
        if self.phase is not None and not np.isfinite(self.phase):
            raise InvalidArgumentError(f"Coupling phase must be finite, got {self.phase}")

    def without_phase(self) -> "Coupling":
        return Coupling(self.magnitude)


@dataclass(frozen=True)
class BesselTable:
    """J_n(2|g|) for orders -n_max..n_max."""
    argument: float
    n_max: int
    values: np.ndarray

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.n_max, self.n_max + 1)

    @property
    def weights(self) -> np.ndarray:
        return self.values ** 2

    def __getitem__(self, order: int) -> float:
        if abs(order) > self.n_max:
            return 0.0
        return float(self.values[order + self.n_max])

    def truncation_mass(self) -> float:
        return float(1.0 - np.sum(self.weights))


@dataclass(frozen=True)
class CouplingSpread:
    ratio: float
    nodes: int = DEFAULT_NODES

    def __post_init__(self):
        if not np.isfinite(self.ratio) or self.ratio < 0:
            raise InvalidArgumentError(f"Coupling spread ratio must be nonnegative, got {self.ratio}")
        if self.nodes < 1:
            raise InvalidArgumentError(f"Quadrature needs at least one node, got {self.nodes}")


def bessel_coeffs(g: Coupling, eps: float = DEFAULT_EPS) -> BesselTable:
    """Bessel amplitudes truncated where the discarded weight drops below ``eps``."""
    if not 0 < eps <= 1e-6:
        raise InvalidArgumentError(f"eps must lie in (0, 1e-6], got {eps}")
    x = 2.0 * g.magnitude
    if x == 0:
        return BesselTable(argument=0.0, n_max=0, values=np.array([1.0]))

    # J_n(x) decays faster than exponentially once n exceeds x
    n_search = int(np.ceil(x + 10.0 * np.cbrt(x) + 30))
    squares = jv(np.arange(n_search + 2), x) ** 2
    tail = 2.0 * np.cumsum(squares[::-1])[::-1]  # tail[m] = sum over |n| >= m
    n_max = int(np.argmax(tail[1:] < eps))
    orders = np.arange(-n_max, n_max + 1)
    values = jv(orders, x)
    values.setflags(write=False)
    logging.debug(f"Bessel table for x={x:.6f}: n_max={n_max}, tail={tail[n_max + 1]:.2e}")
    return BesselTable(argument=x, n_max=n_max, values=values)


def _require_normalized(mass: float, name: str) -> None:
    if abs(mass - 1.0) > INPUT_TOLERANCE:
        raise InvalidArgumentError(f"{name} must be normalized, mass is {mass:.12g}")


def _conserve(values: np.ndarray, input_mass: float, measure: float) -> np.ndarray:
    """Raise if too much probability left the grid, then renormalize to unit mass."""
    output_mass = float(np.sum(values) * measure)
    lost = (input_mass - output_mass) / input_mass
    if lost > TRUNCATION_TOLERANCE:
        raise GridTooNarrowError(lost, TRUNCATION_TOLERANCE)
    return values / output_mass


def _incoherent_walk(values: np.ndarray, table: BesselTable, k: int, axis: int) -> np.ndarray:
    out = np.zeros_like(values)
    shifts = [0] * values.ndim
    for order, weight in zip(table.orders, table.weights):
        shifts[axis] = int(order) * k
        add_shifted(out, values, shifts, weight)
    return out


def _coherent_walk(amplitudes: np.ndarray, table: BesselTable, phase: float, k: int, axis: int) -> np.ndarray:
    out = np.zeros_like(amplitudes)
    shifts = [0, 0]
    for order, value in zip(table.orders, table.values):
        shifts[axis] = int(order) * k
        add_shifted(out, amplitudes, shifts, value * np.exp(-1j * order * phase))
    return out


def walk_1e(spectrum: Spectrum1D, g: Coupling, eps: float = DEFAULT_EPS) -> Spectrum1D:
    mass = spectrum.mass()
    _require_normalized(mass, "Spectrum")
    if g.magnitude == 0:
        return spectrum
    table = bessel_coeffs(g, eps)
    out = _incoherent_walk(np.asarray(spectrum.values), table, spectrum.grid.k, axis=0)
    return Spectrum1D(spectrum.grid, _conserve(out, mass, spectrum.grid.delta))


def propagate_pure(psi: PairWavefunction, g: Coupling, eps: float = DEFAULT_EPS) -> PairWavefunction:
    """Wavefunction after both electrons scatter off the same laser field."""
    if g.phase is None:
        raise InvalidArgumentError("propagate_pure needs a coupling with a definite phase")
    norm_in = psi.norm()
    _require_normalized(norm_in, "Wavefunction")
    if g.magnitude == 0:
        return psi
    table = bessel_coeffs(g, eps)
    k = psi.grid.k
    amplitudes = _coherent_walk(np.asarray(psi.amplitudes), table, g.phase, k, axis=0)
    amplitudes = _coherent_walk(amplitudes, table, g.phase, k, axis=1)
    norm_out = float(np.sum(np.abs(amplitudes) ** 2) * psi.grid.delta ** 2)
    lost = (norm_in - norm_out) / norm_in
    if lost > TRUNCATION_TOLERANCE:
        raise GridTooNarrowError(lost, TRUNCATION_TOLERANCE)
    return PairWavefunction(psi.grid, amplitudes)


def coincidence_fixed_phase(psi: PairWavefunction, g: Coupling, eps: float = DEFAULT_EPS) -> CoincidenceMap:
    """Coincidence map for a laser phase locked to the emission (no phase average)."""
    return propagate_pure(psi, g, eps).probability()


def _clamp_negative(values: np.ndarray) -> np.ndarray:
    lowest = float(np.min(values))
    if lowest < NEGATIVE_HARD_LIMIT:
        raise NegativeProbabilityError(f"Phase-averaged map reached {lowest:.3e}")
    values[values < 0] = 0.0
    if lowest < NEGATIVE_CLIP:
        logging.warning(f"Clamped round-off negatives down to {lowest:.3e}")
    return values


def coincidence_pure(psi: PairWavefunction, g: Coupling, eps: float = DEFAULT_EPS) -> CoincidenceMap:
    """Phase-averaged coincidence map of a pure two-electron state.

    The average over the laser phase keeps only products whose total photon
    numbers agree, n1 + n2 = m1 + m2 = s, so the map is the sum over s of
    |Phi_s|^2 with Phi_s = sum_{n1+n2=s} J_n1 J_n2 psi(E1 - n1 hw, E2 - n2 hw).
    """
    norm_in = psi.norm()
    _require_normalized(norm_in, "Wavefunction")
    if g.magnitude == 0:
        return psi.probability()
    table = bessel_coeffs(g, eps)
    n_max, k = table.n_max, psi.grid.k
    amplitudes = np.asarray(psi.amplitudes)
    total = np.zeros(amplitudes.shape)
    partial = np.empty_like(amplitudes)
    for s in range(-2 * n_max, 2 * n_max + 1):
        partial[:] = 0
        for n1 in range(max(-n_max, s - n_max), min(n_max, s + n_max) + 1):
            n2 = s - n1
            add_shifted(partial, amplitudes, (n1 * k, n2 * k), table[n1] * table[n2])
        total += partial.real ** 2 + partial.imag ** 2
    total = _clamp_negative(total)
    return CoincidenceMap(psi.grid, _conserve(total, norm_in, psi.grid.delta ** 2))


def coincidence_separable(p0: CoincidenceMap, g: Coupling, eps: float = DEFAULT_EPS) -> CoincidenceMap:
    mass = p0.mass()
    _require_normalized(mass, "Reference map")
    if g.magnitude == 0:
        return p0
    table = bessel_coeffs(g, eps)
    k = p0.grid.k
    out = _incoherent_walk(np.asarray(p0.values), table, k, axis=0)
    out = _incoherent_walk(out, table, k, axis=1)
    return CoincidenceMap(p0.grid, _conserve(out, mass, p0.grid.delta ** 2))


def coincidence_mixed(components: Sequence[Tuple[float, PairWavefunction]], g: Coupling,
                      eps: float = DEFAULT_EPS) -> CoincidenceMap:
    if not components:
        raise InvalidArgumentError("A mixed state needs at least one component")
    weights = np.array([weight for weight, _ in components], dtype=float)
    if np.any(weights < 0) or abs(np.sum(weights) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"Mixture weights must be nonnegative and sum to 1, got sum {np.sum(weights):.12g}")
    grid = components[0][1].grid
    total = np.zeros((grid.n_bins, grid.n_bins))
    for weight, psi in components:
        if not psi.grid.same_as(grid):
            raise InvalidArgumentError("All mixture components must share one grid")
        if weight == 0:
            continue
        total += weight * coincidence_pure(psi, g, eps).values
    return CoincidenceMap(grid, total)


def phase_average_discrepancy(psi: PairWavefunction, g: Coupling, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Joint phase average minus independent per-electron averages for the same state.

    Vanishes for energy-eigenstate mixtures; for coherent product states it
    keeps the cross terms with n1 - m1 = m2 - n2 that the per-electron average drops.
    """
    joint = coincidence_pure(psi, g, eps)
    independent = coincidence_separable(psi.probability(), g, eps)
    return joint.values - independent.values


def classical_kernel(grid: EnergyGrid, g: Coupling) -> np.ndarray:
    """Bin-integrated point-particle response 1/(pi sqrt(A^2 - E^2)), A = 2|g| hw.

    Returned over bin offsets -r..r; each weight is the exact arcsine
    integral over its bin, so the sum is one.
    """
    amplitude = 2.0 * g.magnitude * grid.hbar_omega
    if amplitude == 0:
        return np.array([1.0])
    reach = int(np.ceil(amplitude / grid.delta + 0.5))
    offsets = np.arange(-reach, reach + 1)
    lower = np.clip((offsets - 0.5) * grid.delta, -amplitude, amplitude)
    upper = np.clip((offsets + 0.5) * grid.delta, -amplitude, amplitude)
    return (np.arcsin(upper / amplitude) - np.arcsin(lower / amplitude)) / np.pi


def _classical_convolve(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    reach = (len(kernel) - 1) // 2
    if reach >= values.shape[axis]:
        # the kernel is wider than the grid; pad so convolve1d sees every overlap
        pad = [(0, 0)] * values.ndim
        pad[axis] = (reach, reach)
        padded = convolve1d(np.pad(values, pad), kernel, axis=axis, mode='constant', cval=0.0)
        keep = [slice(None)] * values.ndim
        keep[axis] = slice(reach, reach + values.shape[axis])
        return padded[tuple(keep)]
    return convolve1d(values, kernel, axis=axis, mode='constant', cval=0.0)


def walk_1e_classical(spectrum: Spectrum1D, g: Coupling) -> Spectrum1D:
    mass = spectrum.mass()
    _require_normalized(mass, "Spectrum")
    if g.magnitude == 0:
        return spectrum
    kernel = classical_kernel(spectrum.grid, g)
    out = _classical_convolve(np.asarray(spectrum.values), kernel, axis=0)
    return Spectrum1D(spectrum.grid, _conserve(out, mass, spectrum.grid.delta))


def coincidence_classical(p0: CoincidenceMap, g: Coupling) -> CoincidenceMap:
    """Two point-particle electrons accelerated by the same laser field."""
    mass = p0.mass()
    _require_normalized(mass, "Reference map")
    if g.magnitude == 0:
        return p0
    kernel = classical_kernel(p0.grid, g)
    out = _classical_convolve(np.asarray(p0.values), kernel, axis=0)
    out = _classical_convolve(out, kernel, axis=1)
    return CoincidenceMap(p0.grid, _conserve(out, mass, p0.grid.delta ** 2))


def coupling_nodes(nominal_g: float, spread: CouplingSpread) -> np.ndarray:
    """Equal-probability nodes of g_eff = g exp(-t^2 / (2 sigma_laser^2)), t ~ N(0, sigma_el)."""
    if nominal_g <= 0:
        raise InvalidArgumentError(f"nominal_g must be positive, got {nominal_g}")
    if spread.ratio == 0:
        return np.array([float(nominal_g)])
    quantiles = (np.arange(spread.nodes) + 0.5) / spread.nodes
    z = norm.ppf(quantiles)
    return nominal_g * np.exp(-0.5 * (spread.ratio * z) ** 2)


def average_over_coupling(model: Callable[[float], CoincidenceMap], nominal_g: float,
                          spread: CouplingSpread, workers: int = 1) -> CoincidenceMap:
    """Average ``model(g_eff)`` over the arrival-time spread; both electrons share one g_eff."""
    if nominal_g <= 0:
        raise InvalidArgumentError(f"nominal_g must be positive, got {nominal_g}")
    if spread.ratio == 0:
        return model(float(nominal_g))
    nodes = [float(g_eff) for g_eff in coupling_nodes(nominal_g, spread)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            maps: List[CoincidenceMap] = list(executor.map(model, nodes))
    else:
        maps = [model(g_eff) for g_eff in nodes]
    total = np.zeros_like(np.asarray(maps[0].values))
    for coincidence in maps:
        total += coincidence.values
    return CoincidenceMap(maps[0].grid, total / len(maps))
