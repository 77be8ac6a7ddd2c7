from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from energy_grid import make_grid
from exceptions import InvalidArgumentError, StepRejectedError, UndefinedStatisticError
from gas_dynamics import (COULOMB_CONSTANT, ELECTRON_MASS, FWHM_PER_SIGMA, EmitterConfig, GasDiagnostics, GasState,
                          NoField, SphereTipField, TipField, UniformField, activate, coulomb_energy, coulomb_forces,
                          energy_drift, energy_spectrum, field_from_descriptor, momentum, nearest_neighbor_stats, run,
                          run_seeds, sample_emission, spectral_fwhm, step, total_energy)


def _state(positions, velocities=None, field_model=None, coulomb_on=True):
    positions = np.array(positions, dtype=float)
    n = len(positions)
    velocities = np.zeros((n, 3)) if velocities is None else np.array(velocities, dtype=float)
    state = GasState(time=0.0, positions=positions, velocities=velocities, emission_times=np.zeros(n),
                     emitted=np.zeros(n, dtype=bool), alive=np.ones(n, dtype=bool), accelerations=np.zeros((n, 3)))
    activate(state, field_model or NoField(), coulomb_on)
    return state


def _kinetic(state):
    return 0.5 * ELECTRON_MASS * np.sum(state.velocities[state.active] ** 2)


def test_units():
    assert ELECTRON_MASS == pytest.approx(5.6856, rel=1e-4)
    assert COULOMB_CONSTANT == pytest.approx(1.43996, rel=1e-5)


def test_single_electron_starts_with_the_configured_energy():
    state = sample_emission(EmitterConfig(1, initial_ke=1.0))
    assert _kinetic(replace(state, emitted=np.ones(1, dtype=bool))) == pytest.approx(1.0, rel=1e-12)
    assert np.linalg.norm(state.positions[0]) == pytest.approx(100.0)


def test_zero_half_angle_launches_along_the_axis():
    state = sample_emission(EmitterConfig(20, emission_half_angle=0.0))
    assert np.all(state.velocities[:, :2] == 0.0)
    assert np.all(state.velocities[:, 2] > 0.0)


def test_emission_stays_on_the_apex_cap():
    state = sample_emission(EmitterConfig(500, emission_half_angle=30.0, seed=3))
    radii = np.linalg.norm(state.positions, axis=1)
    assert np.allclose(radii, 100.0)
    assert np.all(state.positions[:, 2] >= 100.0 * np.cos(np.radians(30.0)) - 1e-9)
    assert state.time == pytest.approx(np.min(state.emission_times))


def test_emission_time_width():
    state = sample_emission(EmitterConfig(10_000, emission_fwhm=200.0, seed=1))
    assert FWHM_PER_SIGMA * np.std(state.emission_times) == pytest.approx(200.0, abs=5.0)


def test_sampling_is_deterministic_per_seed():
    first = sample_emission(EmitterConfig(30, seed=9))
    second = sample_emission(EmitterConfig(30, seed=9))
    assert np.array_equal(first.positions, second.positions)
    assert np.array_equal(first.emission_times, second.emission_times)


@pytest.mark.parametrize('changes', [dict(n_electrons=0), dict(emission_fwhm=0.0), dict(initial_ke=-1.0),
                                     dict(emission_half_angle=200.0), dict(tip_radius=-5.0)])
def test_invalid_emitter_configs(changes):
    with pytest.raises(InvalidArgumentError):
        EmitterConfig(**{'n_electrons': 10, **changes})


def test_tip_radius_override_reaches_the_field():
    config = EmitterConfig(5, tip_radius=50.0)
    assert config.field_model.tip_radius == 50.0


def test_field_descriptors():
    assert isinstance(field_from_descriptor('uniform', strength=2.0), UniformField)
    with pytest.raises(InvalidArgumentError):
        field_from_descriptor('helix')
    assert isinstance(field_from_descriptor('tip', extraction_voltage=1000.0), TipField)
    with pytest.raises(InvalidArgumentError):
        SphereTipField(tip_radius=100.0, outer_radius=50.0)
    with pytest.raises(InvalidArgumentError):
        TipField(tip_radius=100.0, outer_radius=100.0)


def test_sphere_field_is_minus_the_potential_gradient():
    field_model = SphereTipField()
    point = np.array([[30.0, -40.0, 250.0]])
    h = 1e-3
    gradient = np.array([(field_model.potential(point + h * e) - field_model.potential(point - h * e))[0] / (2 * h)
                         for e in np.eye(3)])
    assert np.allclose(field_model.field(point)[0], -gradient, rtol=1e-6)


def test_tip_field_is_minus_the_potential_gradient():
    field_model = TipField()
    point = np.array([[30.0, -40.0, 250.0]])
    h = 1e-3
    gradient = np.array([(field_model.potential(point + h * e) - field_model.potential(point - h * e))[0] / (2 * h)
                         for e in np.eye(3)])
    assert np.allclose(field_model.field(point)[0], -gradient, rtol=1e-6)


def test_tip_field_concentrates_at_the_apex():
    field_model = TipField()
    assert field_model.apex_field == pytest.approx(2 * 1750.0 / (100.0 * np.log(19_999.0)))
    apex = field_model.field(np.array([[0.0, 0.0, 100.0]]))[0]
    assert apex[2] == pytest.approx(-field_model.apex_field)
    assert field_model.potential(np.array([[0.0, 0.0, 100.0], [0.0, 0.0, 2e6]])) == pytest.approx([0.0, 1750.0])


def test_default_emitter_faces_a_tip_field():
    config = EmitterConfig(1)
    assert isinstance(config.field_model, TipField)
    assert config.emission_half_angle == 45.0


def test_uniform_acceleration_is_exact():
    field_model = UniformField(strength=0.5)
    v0 = 0.3
    state = _state([[0.0, 0.0, 200.0]], [[0.0, 0.0, v0]], field_model, coulomb_on=False)
    dt = 0.1
    for _ in range(1000):
        state = step(state, dt, field_model, coulomb_on=False)
    t = 1000 * dt
    acceleration = 0.5 / ELECTRON_MASS
    assert state.positions[0, 2] == pytest.approx(200.0 + v0 * t + 0.5 * acceleration * t ** 2, rel=1e-8)
    assert state.velocities[0, 2] == pytest.approx(v0 + acceleration * t, rel=1e-8)


@pytest.mark.parametrize('dt', [0.1, 0.05])
def test_emission_starts_at_its_own_time(dt):
    field_model = UniformField(strength=0.5)
    state = GasState(time=0.0, positions=np.array([[0.0, 0.0, 200.0]]), velocities=np.array([[0.0, 0.0, 0.3]]),
                     emission_times=np.array([0.037]), emitted=np.zeros(1, dtype=bool), alive=np.ones(1, dtype=bool),
                     accelerations=np.zeros((1, 3)))
    for _ in range(int(round(10.0 / dt))):
        state = step(state, dt, field_model, coulomb_on=False)
    t = state.time - 0.037
    acceleration = 0.5 / ELECTRON_MASS
    assert state.positions[0, 2] == pytest.approx(200.0 + 0.3 * t + 0.5 * acceleration * t ** 2, rel=1e-8)
    assert state.velocities[0, 2] == pytest.approx(0.3 + acceleration * t, rel=1e-8)


def test_pair_forces_are_antisymmetric(rng):
    positions = rng.normal(0.0, 100.0, (2, 3))
    forces = coulomb_forces(positions)
    assert np.array_equal(forces[0], -forces[1])
    many = coulomb_forces(rng.normal(0.0, 100.0, (40, 3)))
    assert np.max(np.abs(np.sum(many, axis=0))) < 1e-12 * np.max(np.abs(many)) * 40


def test_pair_energy():
    assert coulomb_energy(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 100.0]])) == pytest.approx(COULOMB_CONSTANT / 100.0)
    assert coulomb_energy(np.zeros((1, 3))) == 0.0


def test_two_electrons_recoil_symmetrically():
    field_model = NoField()
    state = _state([[-50.0, 0.0, 1000.0], [50.0, 0.0, 1000.0]])
    initial = coulomb_energy(state.positions)
    for _ in range(4000):
        state = step(state, 0.5, field_model)
    assert np.all(momentum(state) == 0.0)
    assert state.velocities[0, 0] < 0 < state.velocities[1, 0]
    gained = 0.5 * ELECTRON_MASS * np.sum(state.velocities ** 2, axis=1)
    released = initial - coulomb_energy(state.positions)
    assert gained[0] == pytest.approx(gained[1], rel=1e-12)
    assert gained[0] == pytest.approx(released / 2, rel=1e-6)
    assert energy_drift(state, field_model) < 1e-6


def test_oversized_steps_are_rejected():
    field_model = NoField()
    state = _state([[0.0, 0.0, 500.0]], [[0.0, 0.0, 0.6]])
    with pytest.raises(StepRejectedError):
        step(state, 100.0, field_model)
    with pytest.raises(InvalidArgumentError):
        step(state, 0.0, field_model)


def test_electrons_returning_to_the_tip_are_absorbed():
    field_model = NoField()
    state = _state([[0.0, 0.0, 101.0]], [[0.0, 0.0, -0.5]], field_model)
    for _ in range(40):
        state = step(state, 0.1, field_model)
    assert state.n_active == 0
    assert not state.alive[0]


def test_absorption_happens_on_the_surface():
    field_model = NoField()
    state = _state([[0.0, 0.0, 101.0]], [[0.0, 0.0, -0.5]], field_model)
    for _ in range(40):
        state = step(state, 0.1, field_model)
    assert np.linalg.norm(state.positions[0]) == pytest.approx(100.0, abs=1e-9)
    assert state.absorbed_energy == pytest.approx(0.5 * ELECTRON_MASS * 0.25, rel=1e-12)
    assert energy_drift(state, field_model) == pytest.approx(0.0, abs=1e-12)


def test_total_energy_counts_field_and_pairs():
    field_model = UniformField(strength=1.0)
    state = _state([[0.0, 0.0, 200.0], [0.0, 0.0, 300.0]], field_model=field_model)
    expected = -(200.0 + 300.0) + COULOMB_CONSTANT / 100.0
    assert total_energy(state, field_model) == pytest.approx(expected)
    assert state.injected_energy == pytest.approx(expected)


def test_nearest_neighbours_of_a_pair():
    state = _state([[0.0, 0.0, 500.0], [0.0, 30.0, 540.0]])
    assert nearest_neighbor_stats(state) == pytest.approx((50.0, 50.0))


def test_nearest_neighbours_on_a_cubic_lattice():
    axis = 200.0 + 25.0 * np.arange(4)
    lattice = np.array(np.meshgrid(axis, axis, axis, indexing='ij')).reshape(3, -1).T
    mean, median = nearest_neighbor_stats(_state(lattice))
    assert median == pytest.approx(25.0)
    assert mean == pytest.approx(25.0)


def test_nearest_neighbours_need_two_electrons():
    with pytest.raises(UndefinedStatisticError):
        nearest_neighbor_stats(_state([[0.0, 0.0, 500.0]]))


def test_spectrum_of_a_fully_accelerated_electron():
    field_model = UniformField(strength=0.1, length=1e5)
    config = EmitterConfig(1, emission_half_angle=0.0, field_model=field_model)
    snapshots, _ = run(config, t_end=600.0, dt=0.1, coulomb_on=False)
    spectrum, width = energy_spectrum(snapshots[-1], field_model)
    peak = spectrum.grid.energies[np.argmax(spectrum.values)]
    assert peak == pytest.approx(1.0 + 0.1 * 1e5 - 0.1 * 100.0, abs=spectrum.grid.delta)
    assert width == 0.0
    assert spectrum.mass() == pytest.approx(1.0)


def test_spectrum_on_a_given_grid():
    field_model = NoField()
    state = _state([[0.0, 0.0, 500.0], [0.0, 0.0, 900.0]], [[0.0, 0.0, 0.5], [0.0, 0.0, 0.6]], coulomb_on=False)
    grid = make_grid(0.0, 0.1, 1, 20)
    spectrum, width = energy_spectrum(state, field_model, grid=grid)
    assert spectrum.grid is grid
    assert spectrum.mass() == pytest.approx(1.0)
    assert width > 0.0


def test_single_electron_run_has_no_width():
    _, diagnostics = run(EmitterConfig(1, seed=2), t_end=600.0, dt=0.1)
    frame = diagnostics.to_frame()
    assert (frame['width_fwhm_ev'] == 0.0).all()
    assert (frame['width_iqr_ev'] == 0.0).all()
    assert frame['mean_nn_nm'].isna().all()


def test_run_validates_its_window():
    with pytest.raises(InvalidArgumentError):
        run(EmitterConfig(5, seed=0), t_end=-2000.0)
    with pytest.raises(InvalidArgumentError):
        run(EmitterConfig(5, seed=0), t_end=100.0, dt=0.0)


def test_run_takes_snapshots_and_ends_with_the_final_state():
    snapshots, diagnostics = run(EmitterConfig(5, seed=4), t_end=150.0, dt=0.1, snapshot_times=(50.0,))
    assert len(snapshots) == 2
    assert snapshots[0].time == pytest.approx(50.0, abs=0.1)
    assert snapshots[-1].time >= 150.0 - 1e-9
    assert diagnostics.times[-1] == snapshots[-1].time


def test_gas_energy_is_conserved():
    _, diagnostics = run(EmitterConfig(50, seed=1), t_end=300.0, dt=0.1)
    assert max(diagnostics.energy_drift) < 1e-4
    assert min(diagnostics.fwhm) >= 0.0


def test_runs_are_deterministic_per_seed():
    config = EmitterConfig(20, seed=6)
    first = run(config, t_end=100.0, dt=0.1)[1].to_frame()
    second = run(config, t_end=100.0, dt=0.1)[1].to_frame()
    pd.testing.assert_frame_equal(first, second)


def test_parallel_seeds_match_serial_runs():
    config = EmitterConfig(10)
    serial = run_seeds(config, [1, 2], t_end=50.0, dt=0.1)
    parallel = run_seeds(config, [1, 2], t_end=50.0, dt=0.1, workers=2)
    for a, b in zip(serial, parallel):
        pd.testing.assert_frame_equal(a.to_frame(), b.to_frame())


def test_saturation_needs_a_width():
    _, diagnostics = run(EmitterConfig(1), t_end=600.0, dt=0.1)
    with pytest.raises(UndefinedStatisticError):
        diagnostics.saturation_time()


def test_saturation_waits_for_the_pulse_to_be_emitted():
    diagnostics = GasDiagnostics(times=[0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0],
                                 n_emitted=[1, 3, 5, 10, 19, 20, 20, 20, 20, 20],
                                 fwhm=[5.0, 4.0, 0.1, 0.3, 0.5, 0.95, 0.8, 0.92, 0.97, 1.0])
    assert diagnostics.saturation_time() == 70.0
    flat = GasDiagnostics(times=[0.0, 10.0, 20.0], n_emitted=[2, 20, 20], fwhm=[0.1, 1.0, 1.0])
    assert flat.saturation_time() == 10.0


def test_fwhm_of_a_gaussian_sample(rng):
    sigma = 0.5
    energies = rng.normal(3.0, sigma, 20_000)
    bandwidth = 0.9 * sigma * len(energies) ** -0.2
    expected = FWHM_PER_SIGMA * np.sqrt(sigma ** 2 + bandwidth ** 2)
    assert spectral_fwhm(energies) == pytest.approx(expected, rel=0.03)


def test_fwhm_ignores_a_few_outliers(rng):
    energies = np.concatenate([rng.normal(0.0, 0.1, 200), np.full(5, 50.0)])
    assert FWHM_PER_SIGMA * np.std(energies) > 10.0
    assert 0.15 < spectral_fwhm(energies) < 0.35


def test_fwhm_of_degenerate_samples():
    assert spectral_fwhm(np.array([1.5])) == 0.0
    assert spectral_fwhm(np.full(10, 2.0)) == 0.0


@pytest.mark.slow
def test_halving_the_step_cuts_the_drift_fourfold():
    drifts = []
    for dt in (0.1, 0.05):
        _, diagnostics = run(EmitterConfig(135, seed=1), t_end=1000.0, dt=dt, sample_every=1.0)
        drifts.append(max(diagnostics.energy_drift))
    assert drifts[0] < 1e-4
    assert drifts[0] / drifts[1] >= 3.9


@pytest.mark.slow
def test_width_grows_with_the_number_of_electrons():
    means = []
    for n in (10, 50, 135, 300):
        runs = run_seeds(EmitterConfig(n), range(20), t_end=400.0, workers=4)
        means.append(np.mean([diagnostics.fwhm[-1] for diagnostics in runs]))
    assert np.all(np.diff(means) >= 0.0)


@pytest.mark.slow
def test_longer_pulses_give_narrower_spectra():
    widths = {}
    for fwhm in (200.0, 400.0):
        runs = run_seeds(EmitterConfig(50, emission_fwhm=fwhm), range(5), t_end=2 * fwhm)
        widths[fwhm] = np.mean([diagnostics.fwhm[-1] for diagnostics in runs])
    assert widths[400.0] < widths[200.0]


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(3))
def test_full_scale_pulse(seed):
    _, diagnostics = run(EmitterConfig(135, seed=seed), t_end=1500.0, dt=0.1)
    frame = diagnostics.to_frame()
    assert 133.0 <= diagnostics.saturation_time() <= 1200.0
    window = frame[(frame['time_fs'] >= 0.0) & (frame['time_fs'] <= 400.0)]
    assert 100.0 <= window['median_nn_nm'].median() <= 600.0
    assert frame['energy_drift'].max() < 1e-4
