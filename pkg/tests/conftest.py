import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from energy_grid import CoincidenceMap, PairWavefunction, Spectrum1D, make_grid  # noqa: E402
from synthetic_data import template_map  # noqa: E402


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run long statistical experiments')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long statistical experiment, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def delta_spectrum(grid, energy=0.0):
    values = np.zeros(grid.n_bins)
    values[grid.index_of(energy)] = 1.0 / grid.delta
    return Spectrum1D(grid, values)


def delta_map(grid, e1=0.0, e2=0.0):
    values = np.zeros((grid.n_bins, grid.n_bins))
    values[grid.index_of(e1), grid.index_of(e2)] = 1.0 / grid.delta ** 2
    return CoincidenceMap(grid, values)


def random_wavefunction(grid, rng, width=1.0):
    """Random complex amplitudes under a Gaussian envelope centred on the zero-loss peak."""
    e1, e2 = np.meshgrid(grid.energies, grid.energies, indexing='ij')
    envelope = np.exp(-(e1 ** 2 + e2 ** 2) / (2 * width ** 2))
    amplitudes = envelope * (rng.standard_normal(e1.shape) + 1j * rng.standard_normal(e1.shape))
    return PairWavefunction(grid, amplitudes).normalized()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope='module')
def small_grid():
    return make_grid(-6.0, 1.0, 4, 12)


@pytest.fixture(scope='module')
def wide_grid():
    return make_grid(-15.0, 1.0, 2, 30)


@pytest.fixture(scope='module')
def template_grid():
    return make_grid(-8.0, 1.0, 2, 16)


@pytest.fixture(scope='module')
def template(template_grid):
    return template_map(template_grid)
