import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from energy_grid import CoincidenceMap, EnergyGrid
from exceptions import InvalidArgumentError
from quantum_walk import DEFAULT_EPS, DEFAULT_NODES
from tomography import Dataset, FitParams, Observation, forward

DEFAULT_SEPARATION = 1.5
DEFAULT_PEAK_WIDTH = 0.3


def template_map(grid: EnergyGrid, separation: float = DEFAULT_SEPARATION, peak_width: float = DEFAULT_PEAK_WIDTH,
                 correlation: float = 0.0) -> CoincidenceMap:
    """Equal Gaussian peaks at (+d/2, -d/2) and (-d/2, +d/2): one electron gains what the other loses."""
    if peak_width <= 0:
        raise InvalidArgumentError(f"peak_width must be positive, got {peak_width}")
    if not -1.0 < correlation < 1.0:
        raise InvalidArgumentError(f"correlation must lie in (-1, 1), got {correlation}")
    e1, e2 = np.meshgrid(grid.energies, grid.energies, indexing='ij')
    values = np.zeros_like(e1)
    for sign in (1.0, -1.0):
        x = (e1 - sign * separation / 2) / peak_width
        y = (e2 + sign * separation / 2) / peak_width
        values += np.exp(-(x ** 2 - 2 * correlation * x * y + y ** 2) / (2 * (1 - correlation ** 2)))
    mass = np.sum(values) * grid.delta ** 2
    if mass <= 0:
        raise InvalidArgumentError("Template peaks fall outside the grid")
    return CoincidenceMap(grid, values / mass)


def add_noise(coincidence: CoincidenceMap, noise: float, rng: np.random.Generator, clip: bool = True) -> CoincidenceMap:
    """Bin-wise Gaussian noise with standard deviation ``noise`` times the map's peak value."""
    if noise < 0:
        raise InvalidArgumentError(f"noise must be nonnegative, got {noise}")
    if noise == 0:
        return coincidence
    values = np.asarray(coincidence.values)
    noisy = values + rng.normal(0.0, noise * float(np.max(values)), values.shape)
    if clip:
        noisy = np.clip(noisy, 0.0, None)
    return CoincidenceMap(coincidence.grid, noisy)


@dataclass
class SyntheticData:
    reference: CoincidenceMap
    clean: List[CoincidenceMap]
    observed: List[CoincidenceMap]
    params: FitParams

    def dataset(self, labels: Optional[Sequence[str]] = None) -> Dataset:
        labels = labels or [f"g{index}" for index in range(len(self.observed))]
        observations = [Observation(label=label, power_mw=float('nan'), coincidence=coincidence)
                        for label, coincidence in zip(labels, self.observed)]
        return Dataset(reference=self.reference, observations=tuple(observations))


def synthesize(grid: EnergyGrid, params: FitParams, noise: float = 0.0, seed: int = 0, clip: bool = True,
               separation: float = DEFAULT_SEPARATION, peak_width: float = DEFAULT_PEAK_WIDTH,
               correlation: float = 0.0, reference: Optional[CoincidenceMap] = None,
               nodes: int = DEFAULT_NODES, eps: float = DEFAULT_EPS) -> SyntheticData:
    reference = reference if reference is not None else template_map(grid, separation, peak_width, correlation)
    clean = [forward(params, reference, index, nodes, eps) for index in range(len(params.g_per_power))]
    rng = np.random.default_rng(seed)
    observed = [add_noise(coincidence, noise, rng, clip) for coincidence in clean]
    logging.info(f"Synthesized {len(observed)} laser-on maps (noise {noise}, seed {seed})")
    return SyntheticData(reference=reference, clean=clean, observed=observed, params=params)
