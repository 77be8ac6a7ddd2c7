# Units: nm, fs, eV, volts. The force on an electron is -E and its potential energy is -V.
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import constants, optimize, stats
from scipy.spatial import cKDTree

from energy_grid import EnergyGrid, Spectrum1D
from exceptions import InvalidArgumentError, StepRejectedError, UndefinedStatisticError

C_NM_PER_FS = constants.c * 1e-6
ELECTRON_MASS = constants.physical_constants['electron mass energy equivalent in MeV'][0] * 1e6 / C_NM_PER_FS ** 2
COULOMB_CONSTANT = constants.e / (4 * np.pi * constants.epsilon_0) * 1e9
FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))
DEFAULT_DT = 0.1
STEP_LIMIT_FRACTION = 0.1
SURFACE_TOLERANCE = 1e-9
MAX_KDE_POINTS = 200_000


@dataclass(frozen=True)
class NoField:
    tip_radius: float = 100.0

    @property
    def far_potential(self) -> float:
        return 0.0

    def potential(self, positions: np.ndarray) -> np.ndarray:
        return np.zeros(len(positions))

    def field(self, positions: np.ndarray) -> np.ndarray:
        return np.zeros_like(positions)


@dataclass(frozen=True)
class UniformField:
    """Field of ``strength`` V/nm pointing along -z between z=0 and z=length."""
    strength: float = 1.0
    length: float = 1e6
    tip_radius: float = 100.0

    @property
    def far_potential(self) -> float:
        return self.strength * self.length

    def potential(self, positions: np.ndarray) -> np.ndarray:
        return self.strength * np.clip(positions[:, 2], 0.0, self.length)

    def field(self, positions: np.ndarray) -> np.ndarray:
        out = np.zeros_like(positions)
        inside = (positions[:, 2] >= 0) & (positions[:, 2] <= self.length)
        out[inside, 2] = -self.strength
        return out


@dataclass(frozen=True)
class SphereTipField:
    """Spherical tip at 0 V inside a concentric extractor at ``extraction_voltage``.

    V(r) = V_ext (1 - R/r) / (1 - R/L) for R <= r <= L and V_ext beyond L.
    """
    tip_radius: float = 100.0
    extraction_voltage: float = 1750.0
    outer_radius: float = 1e6

    def __post_init__(self):
        if self.outer_radius <= self.tip_radius:
            raise InvalidArgumentError(f"outer_radius {self.outer_radius} must exceed tip_radius {self.tip_radius}")

    @property
    def far_potential(self) -> float:
        return self.extraction_voltage

    def _scale(self) -> float:
        return self.extraction_voltage / (1.0 - self.tip_radius / self.outer_radius)

    def potential(self, positions: np.ndarray) -> np.ndarray:
        r = np.clip(np.linalg.norm(positions, axis=1), self.tip_radius, self.outer_radius)
        return self._scale() * (1.0 - self.tip_radius / r)

    def field(self, positions: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(positions, axis=1)
        magnitude = np.where((r >= self.tip_radius) & (r <= self.outer_radius),
                             -self._scale() * self.tip_radius / np.maximum(r, self.tip_radius) ** 2, 0.0)
        return magnitude[:, None] * positions / np.maximum(r, 1e-300)[:, None]


@dataclass(frozen=True)
class TipField:
    """Hyperboloidal emitter facing a planar extractor, radially symmetric about the apex centre.

    V(r) = V_ext ln(2r/R - 1) / ln(2L/R - 1) for R <= r <= L and V_ext beyond L. The apex
    field is 2 V_ext / (R ln(2L/R - 1)), so most of the voltage drops far from the tip.
    """
    tip_radius: float = 100.0
    extraction_voltage: float = 1750.0
    outer_radius: float = 1e6

    def __post_init__(self):
        if self.outer_radius <= self.tip_radius:
            raise InvalidArgumentError(f"outer_radius {self.outer_radius} must exceed tip_radius {self.tip_radius}")

    @property
    def far_potential(self) -> float:
        return self.extraction_voltage

    @property
    def apex_field(self) -> float:
        return 2.0 * self.extraction_voltage / (self.tip_radius * self._log_span())

    def _log_span(self) -> float:
        return float(np.log(2.0 * self.outer_radius / self.tip_radius - 1.0))

    def potential(self, positions: np.ndarray) -> np.ndarray:
        r = np.clip(np.linalg.norm(positions, axis=1), self.tip_radius, self.outer_radius)
        return self.extraction_voltage * np.log(2.0 * r / self.tip_radius - 1.0) / self._log_span()

    def field(self, positions: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(positions, axis=1)
        inside = (r >= self.tip_radius) & (r <= self.outer_radius)
        slope = 2.0 * self.extraction_voltage / self._log_span() / (2.0 * np.maximum(r, self.tip_radius) - self.tip_radius)
        magnitude = np.where(inside, -slope, 0.0)
        return magnitude[:, None] * positions / np.maximum(r, 1e-300)[:, None]


FIELD_MODELS = {'none': NoField, 'uniform': UniformField, 'sphere': SphereTipField, 'tip': TipField}


def field_from_descriptor(kind: str, **parameters) -> object:
    if kind not in FIELD_MODELS:
        raise InvalidArgumentError(f"Unknown field model '{kind}', expected one of {sorted(FIELD_MODELS)}")
    return FIELD_MODELS[kind](**parameters)


@dataclass(frozen=True)
class EmitterConfig:
    n_electrons: int
    emission_fwhm: float = 200.0
    initial_ke: float = 1.0
    emission_half_angle: float = 45.0
    field_model: object = field(default_factory=TipField)
    tip_radius: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_electrons < 1:
            raise InvalidArgumentError(f"n_electrons must be at least 1, got {self.n_electrons}")
        if self.emission_fwhm <= 0 or self.initial_ke <= 0:
            raise InvalidArgumentError(f"emission_fwhm and initial_ke must be positive, got {self.emission_fwhm}, {self.initial_ke}")
        if not 0.0 <= self.emission_half_angle <= 180.0:
            raise InvalidArgumentError(f"emission_half_angle must lie in [0, 180], got {self.emission_half_angle}")
        if self.tip_radius is None:
            object.__setattr__(self, 'tip_radius', self.field_model.tip_radius)
        elif self.tip_radius != self.field_model.tip_radius:
            object.__setattr__(self, 'field_model', replace(self.field_model, tip_radius=self.tip_radius))
        if self.tip_radius <= 0:
            raise InvalidArgumentError(f"tip_radius must be positive, got {self.tip_radius}")


@dataclass
class GasState:
    """All electrons of one pulse; only ``active`` ones (emitted and not re-absorbed) take part."""
    time: float
    positions: np.ndarray
    velocities: np.ndarray
    emission_times: np.ndarray
    emitted: np.ndarray
    alive: np.ndarray
    accelerations: np.ndarray
    injected_energy: float = 0.0
    absorbed_energy: float = 0.0

    @property
    def active(self) -> np.ndarray:
        return self.emitted & self.alive

    @property
    def n_active(self) -> int:
        return int(np.sum(self.active))

    def copy(self) -> "GasState":
        return GasState(time=self.time, positions=self.positions.copy(), velocities=self.velocities.copy(),
                        emission_times=self.emission_times.copy(), emitted=self.emitted.copy(),
                        alive=self.alive.copy(), accelerations=self.accelerations.copy(),
                        injected_energy=self.injected_energy, absorbed_energy=self.absorbed_energy)


@dataclass
class GasDiagnostics:
    times: List[float] = field(default_factory=list)
    n_active: List[int] = field(default_factory=list)
    n_emitted: List[int] = field(default_factory=list)
    fwhm: List[float] = field(default_factory=list)
    iqr: List[float] = field(default_factory=list)
    mean_energy: List[float] = field(default_factory=list)
    mean_nn: List[float] = field(default_factory=list)
    median_nn: List[float] = field(default_factory=list)
    energy_drift: List[float] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'time_fs': self.times,
            'n_active': self.n_active,
            'n_emitted': self.n_emitted,
            'width_fwhm_ev': self.fwhm,
            'width_iqr_ev': self.iqr,
            'mean_energy_ev': self.mean_energy,
            'mean_nn_nm': self.mean_nn,
            'median_nn_nm': self.median_nn,
            'energy_drift': self.energy_drift,
        })

    def saturation_time(self, fraction: float = 0.9, emitted_fraction: float = 0.95) -> float:
        """Time after which the FWHM width stays at or above ``fraction`` of its final value.

        Only samples taken once ``emitted_fraction`` of the pulse has left the tip are eligible,
        so the few early electrons cannot set the answer.
        """
        widths = np.asarray(self.fwhm)
        if widths.size == 0 or widths[-1] <= 0:
            raise UndefinedStatisticError("No nonzero width to saturate")
        emitted = np.asarray(self.n_emitted)
        eligible = np.flatnonzero(emitted >= emitted_fraction * emitted[-1])
        below = eligible[widths[eligible] < fraction * widths[-1]]
        index = eligible[0] if below.size == 0 else below[-1] + 1
        return float(self.times[index])


def coulomb_forces(positions: np.ndarray) -> np.ndarray:
    """Direct pairwise repulsion; the pair term on i from j is the exact negative of j from i."""
    if len(positions) < 2:
        return np.zeros_like(positions)
    separation = positions[:, None, :] - positions[None, :, :]
    distance_sq = np.einsum('ijk,ijk->ij', separation, separation)
    np.fill_diagonal(distance_sq, np.inf)
    weights = COULOMB_CONSTANT * distance_sq ** -1.5
    return np.einsum('ij,ijk->ik', weights, separation)


def coulomb_energy(positions: np.ndarray) -> float:
    if len(positions) < 2:
        return 0.0
    upper = np.triu_indices(len(positions), k=1)
    separation = positions[upper[0]] - positions[upper[1]]
    return float(COULOMB_CONSTANT * np.sum(1.0 / np.linalg.norm(separation, axis=1)))


def _accelerations(positions: np.ndarray, field_model, coulomb_on: bool) -> np.ndarray:
    force = -field_model.field(positions)
    if coulomb_on:
        force = force + coulomb_forces(positions)
    return force / ELECTRON_MASS


def _refresh_accelerations(state: GasState, field_model, coulomb_on: bool) -> None:
    state.accelerations[:] = 0.0
    active = state.active
    if np.any(active):
        state.accelerations[active] = _accelerations(state.positions[active], field_model, coulomb_on)


def _energy_of(indices: np.ndarray, state: GasState, field_model, coulomb_on: bool) -> float:
    """Energy the electrons ``indices`` carry: own KE and field energy plus their Coulomb share with active ones."""
    positions = state.positions[indices]
    kinetic = 0.5 * ELECTRON_MASS * np.sum(state.velocities[indices] ** 2)
    energy = float(kinetic - np.sum(field_model.potential(positions)))
    if coulomb_on:
        others = state.positions[state.active & ~np.isin(np.arange(len(state.positions)), indices)]
        energy += coulomb_energy(positions)
        if len(others):
            distances = np.linalg.norm(positions[:, None, :] - others[None, :, :], axis=2)
            energy += float(COULOMB_CONSTANT * np.sum(1.0 / distances))
    return energy


def sample_emission(config: EmitterConfig) -> GasState:
    """Gaussian emission times and launch points on the apex cap, each moving along its surface normal."""
    rng = np.random.default_rng(config.seed)
    n = config.n_electrons
    emission_times = rng.normal(0.0, config.emission_fwhm / FWHM_PER_SIGMA, n)
    cos_limit = np.cos(np.radians(config.emission_half_angle))
    cos_theta = 1.0 - rng.random(n) * (1.0 - cos_limit)
    azimuth = 2.0 * np.pi * rng.random(n)
    sin_theta = np.sqrt(np.clip(1.0 - cos_theta ** 2, 0.0, None))
    normals = np.column_stack([sin_theta * np.cos(azimuth), sin_theta * np.sin(azimuth), cos_theta])
    speed = np.sqrt(2.0 * config.initial_ke / ELECTRON_MASS)
    start = float(np.min(emission_times))
    state = GasState(time=start, positions=config.tip_radius * normals, velocities=speed * normals,
                     emission_times=emission_times, emitted=np.zeros(n, dtype=bool),
                     alive=np.ones(n, dtype=bool), accelerations=np.zeros((n, 3)))
    logging.debug(f"Sampled {n} electrons, emission from {start:.1f} fs to {np.max(emission_times):.1f} fs")
    return state


def activate(state: GasState, field_model, coulomb_on: bool = True) -> int:
    """Switch on every electron whose emission time has passed; returns how many were added."""
    newly = np.flatnonzero(~state.emitted & (state.emission_times <= state.time))
    if len(newly) == 0:
        return 0
    state.emitted[newly] = True
    state.injected_energy += _energy_of(newly, state, field_model, coulomb_on)
    _refresh_accelerations(state, field_model, coulomb_on)
    return len(newly)


def _verlet(state: GasState, h: float, field_model, coulomb_on: bool) -> None:
    active = state.active
    if h <= 0 or not np.any(active):
        return
    half_velocity = state.velocities[active] + 0.5 * h * state.accelerations[active]
    state.positions[active] += h * half_velocity
    state.accelerations[active] = _accelerations(state.positions[active], field_model, coulomb_on)
    state.velocities[active] = half_velocity + 0.5 * h * state.accelerations[active]


def _first_crossing(state: GasState, h: float, radius: float) -> Optional[Tuple[float, np.ndarray]]:
    """Earliest time within ``h`` at which an active electron reaches the tip surface, and who."""
    active = np.flatnonzero(state.active)
    if h <= 0 or len(active) == 0:
        return None
    x0, v0, a0 = state.positions[active], state.velocities[active], state.accelerations[active]
    inside = np.linalg.norm(x0 + h * v0 + 0.5 * h * h * a0, axis=1) < radius
    if not np.any(inside):
        return None
    times = []
    for x, v, a in zip(x0[inside], v0[inside], a0[inside]):
        def gap(tau, x=x, v=v, a=a):
            return np.linalg.norm(x + tau * v + 0.5 * tau * tau * a) - radius
        times.append(0.0 if gap(0.0) <= 0 else optimize.brentq(gap, 0.0, h, xtol=1e-12 * max(h, 1.0)))
    times = np.asarray(times)
    first = float(np.min(times))
    return first, active[inside][times <= first + SURFACE_TOLERANCE * h]


def _absorb(state: GasState, lost: np.ndarray, field_model, coulomb_on: bool) -> None:
    state.absorbed_energy += _energy_of(lost, state, field_model, coulomb_on)
    state.alive[lost] = False
    _refresh_accelerations(state, field_model, coulomb_on)
    logging.debug(f"{len(lost)} electrons re-entered the tip at {state.time:.3f} fs")


def step(state: GasState, dt: float, field_model, coulomb_on: bool = True) -> GasState:
    """Advance by ``dt`` with velocity Verlet.

    The step is split at every emission time and every return to the tip surface inside it,
    so electrons start and stop at their exact times and the scheme stays second order.
    """
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    new = state.copy()
    active = new.active
    if np.any(active):
        displacement = dt * (new.velocities[active] + 0.5 * dt * new.accelerations[active])
        largest = float(np.max(np.linalg.norm(displacement, axis=1)))
        limit = STEP_LIMIT_FRACTION * field_model.tip_radius
        if largest > limit:
            raise StepRejectedError(largest, limit, state.time)
    end = state.time + dt
    while new.time < end:
        target = end
        waiting = new.emission_times[~new.emitted]
        waiting = waiting[waiting < end]
        if waiting.size:
            target = max(float(np.min(waiting)), new.time)
        crossing = _first_crossing(new, target - new.time, field_model.tip_radius)
        if crossing is not None:
            target = min(new.time + crossing[0], target)
        _verlet(new, target - new.time, field_model, coulomb_on)
        new.time = target
        if crossing is not None:
            _absorb(new, crossing[1], field_model, coulomb_on)
        activate(new, field_model, coulomb_on)
    return new


def total_energy(state: GasState, field_model, coulomb_on: bool = True) -> float:
    active = state.active
    positions = state.positions[active]
    energy = 0.5 * ELECTRON_MASS * np.sum(state.velocities[active] ** 2) - np.sum(field_model.potential(positions))
    if coulomb_on:
        energy += coulomb_energy(positions)
    return float(energy)


def energy_scale(state: GasState, field_model, coulomb_on: bool = True) -> float:
    active = state.active
    positions = state.positions[active]
    scale = 0.5 * ELECTRON_MASS * np.sum(state.velocities[active] ** 2) + np.sum(np.abs(field_model.potential(positions)))
    if coulomb_on:
        scale += coulomb_energy(positions)
    return float(scale)


def energy_drift(state: GasState, field_model, coulomb_on: bool = True) -> float:
    """Relative violation of energy balance, counting energy brought in by emission and lost to the tip."""
    balance = total_energy(state, field_model, coulomb_on) - state.injected_energy + state.absorbed_energy
    scale = energy_scale(state, field_model, coulomb_on) + abs(state.absorbed_energy)
    return abs(balance) / scale if scale > 0 else 0.0


def momentum(state: GasState) -> np.ndarray:
    return ELECTRON_MASS * np.sum(state.velocities[state.active], axis=0)


def electron_energies(state: GasState, field_model) -> np.ndarray:
    """KE - e V(r) per active electron, i.e. energy relative to the local electrostatic potential."""
    active = state.active
    kinetic = 0.5 * ELECTRON_MASS * np.sum(state.velocities[active] ** 2, axis=1)
    return kinetic - field_model.potential(state.positions[active])


def nearest_neighbor_stats(state: GasState) -> Tuple[float, float]:
    positions = state.positions[state.active]
    if len(positions) < 2:
        raise UndefinedStatisticError(f"Nearest-neighbour distances need two electrons, {len(positions)} active")
    distances, _ = cKDTree(positions).query(positions, k=2)
    nearest = distances[:, 1]
    return float(np.mean(nearest)), float(np.median(nearest))


def _interquartile(values: np.ndarray) -> float:
    q1, q3 = np.percentile(values, [25, 75])
    return float(q3 - q1)


def spectral_fwhm(energies: np.ndarray, points_per_bandwidth: int = 8) -> float:
    """Full width at half maximum of a kernel density estimate of ``energies``.

    The bandwidth follows Silverman's rule with the robust spread min(std, IQR/1.349), so a few
    far outliers widen neither the kernel nor the half-maximum band.
    """
    energies = np.asarray(energies, dtype=float)
    if len(energies) < 2 or np.ptp(energies) == 0:
        return 0.0
    std = float(np.std(energies, ddof=1))
    spread = min(std, _interquartile(energies) / 1.349) or std
    bandwidth = 0.9 * spread * len(energies) ** -0.2
    kde = stats.gaussian_kde(energies, bw_method=bandwidth / std)
    span = np.ptp(energies) + 8 * bandwidth
    n_points = int(min(max(2048, points_per_bandwidth * span / bandwidth), MAX_KDE_POINTS))
    axis = np.linspace(np.min(energies) - 4 * bandwidth, np.max(energies) + 4 * bandwidth, n_points)
    density = kde(axis)
    above = np.flatnonzero(density >= 0.5 * np.max(density))
    first, last = above[0], above[-1]
    half = 0.5 * np.max(density)
    left = np.interp(half, density[first - 1:first + 1], axis[first - 1:first + 1])
    right = np.interp(half, density[last:last + 2][::-1], axis[last:last + 2][::-1])
    return float(right - left)


def energy_spectrum(state: GasState, field_model, grid: Optional[EnergyGrid] = None,
                    delta: float = 0.05) -> Tuple[Spectrum1D, float]:
    """Histogram of KE plus the potential drop still ahead of each electron, and its interquartile width."""
    active = state.active
    if not np.any(active):
        raise UndefinedStatisticError("No emitted electrons to histogram")
    kinetic = 0.5 * ELECTRON_MASS * np.sum(state.velocities[active] ** 2, axis=1)
    energies = kinetic + field_model.far_potential - field_model.potential(state.positions[active])
    if grid is None:
        if delta <= 0:
            raise InvalidArgumentError(f"delta must be positive, got {delta}")
        low = np.floor(np.min(energies) / delta) * delta - 2 * delta
        n_bins = max(int(np.ceil((np.max(energies) - low) / delta)) + 3, 3)
        grid = EnergyGrid(e_min=float(low), delta=delta, n_bins=n_bins, hbar_omega=delta, k=1)
    edges = grid.e_min - 0.5 * grid.delta + grid.delta * np.arange(grid.n_bins + 1)
    counts, _ = np.histogram(np.clip(energies, edges[0], edges[-1]), bins=edges)
    spectrum = Spectrum1D(grid, counts / (len(energies) * grid.delta))
    return spectrum, _interquartile(energies)


def record(diagnostics: GasDiagnostics, state: GasState, field_model, coulomb_on: bool) -> None:
    diagnostics.times.append(state.time)
    diagnostics.n_active.append(state.n_active)
    diagnostics.n_emitted.append(int(np.sum(state.emitted)))
    if state.n_active:
        energies = electron_energies(state, field_model)
        diagnostics.fwhm.append(spectral_fwhm(energies))
        diagnostics.iqr.append(_interquartile(energies))
        diagnostics.mean_energy.append(float(np.mean(energies)))
    else:
        diagnostics.fwhm.append(0.0)
        diagnostics.iqr.append(0.0)
        diagnostics.mean_energy.append(float('nan'))
    if state.n_active >= 2:
        mean_nn, median_nn = nearest_neighbor_stats(state)
    else:
        mean_nn = median_nn = float('nan')
    diagnostics.mean_nn.append(mean_nn)
    diagnostics.median_nn.append(median_nn)
    diagnostics.energy_drift.append(energy_drift(state, field_model, coulomb_on))


def run(config: EmitterConfig, t_end: float, dt: float = DEFAULT_DT, sample_every: float = 10.0,
        snapshot_times: Sequence[float] = (), coulomb_on: bool = True) -> Tuple[List[GasState], GasDiagnostics]:
    """Propagate one pulse from its first emission to ``t_end`` (fs, relative to the pulse centre)."""
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    state = sample_emission(config)
    if t_end <= state.time:
        raise InvalidArgumentError(f"t_end={t_end} fs precedes the first emission at {state.time:.1f} fs")
    field_model = config.field_model
    activate(state, field_model, coulomb_on)
    n_steps = int(np.ceil((t_end - state.time) / dt))
    stride = max(1, int(round(sample_every / dt)))
    pending = sorted(snapshot_times)
    snapshots: List[GasState] = []
    diagnostics = GasDiagnostics()
    record(diagnostics, state, field_model, coulomb_on)
    logging.info(f"Running {config.n_electrons} electrons for {n_steps} steps of {dt} fs")
    for index in range(1, n_steps + 1):
        state = step(state, dt, field_model, coulomb_on)
        while pending and state.time >= pending[0]:
            snapshots.append(state.copy())
            pending.pop(0)
        if index % stride == 0 or index == n_steps:
            record(diagnostics, state, field_model, coulomb_on)
    snapshots.append(state)
    logging.info(f"Final width {diagnostics.fwhm[-1]:.4f} eV, drift {diagnostics.energy_drift[-1]:.2e}")
    return snapshots, diagnostics


def run_seeds(config: EmitterConfig, seeds: Sequence[int], t_end: float, dt: float = DEFAULT_DT,
              workers: int = 1, **kwargs) -> List[GasDiagnostics]:
    """Independent runs per seed, returned in seed order."""
    def one(seed: int) -> GasDiagnostics:
        return run(replace(config, seed=int(seed)), t_end, dt, **kwargs)[1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(one, seeds))
    return [one(seed) for seed in seeds]
