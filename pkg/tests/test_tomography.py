from dataclasses import replace

import numpy as np
import pytest

from energy_grid import CoincidenceMap, make_grid
from exceptions import InvalidArgumentError
from quantum_walk import Coupling, coincidence_separable
from synthetic_data import add_noise, synthesize, template_map
from tomography import (Dataset, FitOptions, FitParams, FitResult, Observation, TomographyFitter, compare_nested,
                        errors, fit, forward, log_likelihood, residuals)

ALL_BUT_F_AND_G = ('alpha', 'beta', 'gamma', 'sigma', 'spread_ratio')


@pytest.fixture(scope='module')
def grid():
    return make_grid(-9.6, 1.2, 2, 16)


@pytest.fixture(scope='module')
def reference(grid):
    return template_map(grid, peak_width=0.8)


@pytest.fixture(scope='module')
def truth():
    return FitParams(f=0.5, alpha=0.91, beta=0.01, gamma=-0.04, g_per_power=(0.56,), sigma=0.0, spread_ratio=0.0)


@pytest.fixture(scope='module')
def exact(grid, reference, truth):
    return synthesize(grid, truth, reference=reference).dataset()


def _result(params):
    return FitResult(params=params, std_errors={}, loss=0.0, covariance=np.zeros((0, 0)), residual_maps=[])


def test_parameter_vector_layout(truth):
    params = replace(truth, g_per_power=(0.56, 0.98, 1.33))
    assert params.names() == ['f', 'alpha', 'beta', 'gamma', 'g0', 'g1', 'g2', 'sigma', 'spread_ratio']
    assert len(params.to_vector()) == 4 + 3 + 2
    assert FitParams.from_vector(params.to_vector(), 3) == params
    assert params.as_dict()['g1'] == 0.98


@pytest.mark.parametrize('changes', [dict(f=1.5), dict(g_per_power=(0.5, 0.0)), dict(sigma=-0.1),
                                     dict(spread_ratio=-1.0), dict(g_per_power=())])
def test_invalid_parameters_are_rejected(truth, changes):
    with pytest.raises(InvalidArgumentError):
        replace(truth, **changes)


def test_unknown_fit_method_is_rejected():
    with pytest.raises(InvalidArgumentError):
        FitOptions(method='newton')


def test_dataset_validation(grid, reference):
    with pytest.raises(InvalidArgumentError):
        Dataset(reference=reference, observations=())
    other = make_grid(-9.6, 1.2, 4, 16)
    with pytest.raises(InvalidArgumentError):
        Dataset(reference=reference, observations=[Observation('x', 1.0, template_map(other))])
    doubled = CoincidenceMap(grid, 2 * reference.values)
    with pytest.raises(InvalidArgumentError):
        Dataset(reference=doubled, observations=[Observation('x', 1.0, reference)])


def test_dataset_counts_every_laser_on_bin(exact, grid):
    assert exact.n_points == grid.n_bins ** 2


def test_forward_without_entanglement_spread_or_blur_is_the_separable_model(reference, truth):
    params = replace(truth, f=0.0)
    assert np.array_equal(forward(params, reference, 0).values,
                          coincidence_separable(reference, Coupling(0.56)).values)


def test_forward_is_affine_in_fraction(reference, truth):
    params = replace(truth, sigma=0.16, spread_ratio=0.48)
    maps = [forward(replace(params, f=f), reference, 0, nodes=5).values for f in (0.0, 0.5, 1.0)]
    assert np.max(np.abs(maps[1] - 0.5 * (maps[0] + maps[2]))) < 1e-10


def test_forward_ignores_the_sum_energy_phase(reference, truth):
    plain = forward(truth, reference, 0).values
    shifted = forward(truth, reference, 0, g_fn=lambda s: 0.7 * s ** 2 - np.cos(s)).values
    assert np.max(np.abs(plain - shifted)) < 1e-9


def test_log_likelihood_is_zero_on_exact_data_and_quadratic_in_a_bin(exact, truth, grid):
    assert log_likelihood(truth, exact) == pytest.approx(0.0, abs=1e-20)
    values = np.array(exact.observations[0].coincidence.values)
    values[10, 12] += 0.01
    perturbed = Dataset(exact.reference, [Observation('g0', float('nan'), CoincidenceMap(grid, values))])
    assert log_likelihood(truth, perturbed) == pytest.approx(-1e-4, rel=1e-6)


def test_log_likelihood_falls_away_from_the_generating_point(exact, truth):
    direction = np.array([0.3, -0.5, 0.2, 0.1, 0.4, 0.0, 0.0])
    values = [log_likelihood(FitParams.from_vector(truth.to_vector() + t * direction, 1), exact)
              for t in (0.0, 0.02, 0.04, 0.08)]
    assert all(later < earlier for earlier, later in zip(values, values[1:]))


def test_generating_point_is_stationary(exact, truth):
    fitter = TomographyFitter(exact, FitOptions(frozen=('sigma', 'spread_ratio')))
    fitter._configure(truth)
    gradient = fitter.gradient(truth.to_vector()[fitter._free])
    assert np.max(np.abs(gradient)) < 1e-6


def test_central_gradient_is_stable_under_step_halving(exact, truth):
    fitter = TomographyFitter(exact, FitOptions(frozen=('sigma', 'spread_ratio')))
    start = replace(truth, f=0.3, alpha=1.1, g_per_power=(0.6,))
    fitter._configure(start)
    vector = start.to_vector()[fitter._free]
    gradient = fitter.gradient(vector)
    halved = TomographyFitter(exact, FitOptions(frozen=('sigma', 'spread_ratio'), relative_step=5e-5,
                                                absolute_step=5e-7))
    halved._configure(start)
    assert np.allclose(halved.gradient(vector), gradient, rtol=1e-4, atol=1e-9)


def test_freezing_unknown_or_mismatched_parameters_fails(exact, truth):
    with pytest.raises(InvalidArgumentError):
        fit(exact, truth, FitOptions(frozen=('delta',)))
    with pytest.raises(InvalidArgumentError):
        fit(exact, replace(truth, g_per_power=(0.5, 0.6)), FitOptions())


def test_noiseless_data_gives_near_zero_errors(exact, truth):
    options = FitOptions(frozen=ALL_BUT_F_AND_G)
    result = _result(truth)
    std_errors = errors(result, exact, options)
    assert std_errors['f'] < 1e-4 and std_errors['g0'] < 1e-4
    assert std_errors['alpha'] == 0.0
    assert np.allclose(result.covariance, result.covariance.T)


def test_fraction_error_matches_linear_least_squares(grid, reference, truth):
    options = FitOptions(method='least-squares', n_starts=1, frozen=('g0',) + ALL_BUT_F_AND_G)
    clean = forward(truth, reference, 0)
    slope = forward(replace(truth, f=1.0), reference, 0).values - forward(replace(truth, f=0.0), reference, 0).values
    noise = 0.01
    noise_std = noise * float(np.max(clean.values))
    analytic = 2 * noise_std / np.sqrt(np.sum(slope ** 2))
    rng = np.random.default_rng(7)
    reported = []
    for _ in range(50):
        observed = add_noise(clean, noise, rng, clip=False)
        dataset = Dataset(reference, [Observation('g0', float('nan'), observed)])
        result = fit(dataset, truth, options)
        reported.append(errors(result, dataset, options)['f'])
    assert np.mean(reported) == pytest.approx(analytic, rel=0.2)


def test_noise_scale_sets_the_residual_variance(grid, reference, truth):
    clean = forward(truth, reference, 0)
    options = FitOptions(frozen=('f', 'g0') + ALL_BUT_F_AND_G)
    rng = np.random.default_rng(11)
    losses = {}
    for noise in (0.01, 0.03):
        draws = []
        for _ in range(10):
            dataset = Dataset(reference, [Observation('g0', float('nan'), add_noise(clean, noise, rng, clip=False))])
            draws.append(-log_likelihood(truth, dataset, options))
        losses[noise] = np.mean(draws)
    assert losses[0.03] / losses[0.01] == pytest.approx(9.0, rel=0.2)


@pytest.mark.slow
def test_round_trip_recovers_generating_parameters():
    grid = make_grid(-15.6, 1.2, 2, 26)
    truth = FitParams(f=0.18, alpha=0.91, beta=0.01, gamma=-0.04, g_per_power=(0.56, 0.98, 1.33),
                      sigma=0.16, spread_ratio=0.48)
    data = synthesize(grid, truth, peak_width=0.8)
    start = FitParams(f=0.18 * 1.2, alpha=0.91 * 0.8, beta=0.01 * 1.2, gamma=-0.04 * 0.8,
                      g_per_power=(0.56 * 1.2, 0.98 * 0.8, 1.33 * 1.2), sigma=0.16 * 0.8, spread_ratio=0.48 * 1.2)
    options = FitOptions(method='least-squares', n_starts=1)
    assert options.nodes == 33
    result = fit(data.dataset(), start, options)
    recovered = result.params.as_dict()
    for name, expected in truth.as_dict().items():
        tolerance = 1e-2 if name in ('beta', 'gamma') else 1e-3
        assert recovered[name] == pytest.approx(expected, abs=tolerance), name
    assert result.loss < 1e-8


def test_round_trip_on_a_coarse_quadrature():
    grid = make_grid(-15.6, 1.2, 2, 26)
    truth = FitParams(f=0.18, alpha=0.91, beta=0.01, gamma=-0.04, g_per_power=(0.56, 0.98, 1.33),
                      sigma=0.16, spread_ratio=0.48)
    data = synthesize(grid, truth, peak_width=0.8, nodes=5)
    start = FitParams(f=0.15, alpha=0.85, beta=0.0, gamma=0.0, g_per_power=(0.6, 0.92, 1.4),
                      sigma=0.14, spread_ratio=0.52)
    options = FitOptions(method='least-squares', n_starts=1, nodes=5)
    result = fit(data.dataset(), start, options)
    recovered = result.params.as_dict()
    for name, expected in truth.as_dict().items():
        tolerance = 1e-2 if name in ('beta', 'gamma') else 1e-3
        assert recovered[name] == pytest.approx(expected, abs=tolerance), name


def test_residuals_vanish_on_exact_data(exact, truth):
    report = residuals(_result(truth), exact)
    assert np.max(np.abs(report.residual_maps[0].values)) < 1e-12
    separable = forward(replace(truth, f=0.0), exact.reference, 0).values
    expected = exact.observations[0].coincidence.values - 0.75 * separable
    assert np.allclose(report.subtraction_maps[0].values, expected, atol=1e-14)
    assert np.allclose(report.entangled_maps[0].values, forward(replace(truth, f=1.0), exact.reference, 0).values)


def test_residual_mass_is_zero_for_normalized_maps(exact, truth):
    report = residuals(_result(replace(truth, f=0.0)), exact)
    assert report.residual_maps[0].mass() == pytest.approx(0.0, abs=1e-9)


def test_free_fraction_beats_the_separable_fit(exact, truth):
    options = FitOptions(method='least-squares', n_starts=1, frozen=ALL_BUT_F_AND_G)
    free, separable = compare_nested(exact, replace(truth, f=0.3, g_per_power=(0.6,)), options)
    assert separable.params.f == 0.0
    assert free.loss < separable.loss
    assert free.params.f == pytest.approx(0.5, abs=1e-3)


def test_nested_comparison_reuses_a_finished_fit(exact, truth):
    options = FitOptions(method='least-squares', n_starts=1, frozen=ALL_BUT_F_AND_G)
    start = replace(truth, f=0.3, g_per_power=(0.6,))
    finished = fit(exact, start, options)
    free, separable = compare_nested(exact, start, options, free=finished)
    assert free is finished
    assert separable.params.f == 0.0


def test_evaluation_budget_flags_an_unconverged_fit(exact, truth):
    options = FitOptions(method='nelder-mead', n_starts=1, max_evaluations=3, frozen=ALL_BUT_F_AND_G)
    result = fit(exact, replace(truth, f=0.2, g_per_power=(0.7,)), options)
    assert not result.converged
    assert 0.0 <= result.params.f <= 1.0
    assert len(result.residual_maps) == 1


def test_multistart_is_deterministic(exact, truth):
    options = FitOptions(method='nelder-mead', n_starts=3, seed=5, max_evaluations=40,
                         frozen=('beta', 'gamma', 'sigma', 'spread_ratio'))
    start = replace(truth, f=0.3, alpha=0.7, g_per_power=(0.6,))
    first = fit(exact, start, options)
    second = fit(exact, start, options)
    assert first.params == second.params
    assert first.loss == second.loss


@pytest.mark.slow
def test_reported_errors_cover_the_truth(grid, reference):
    truth = FitParams(f=0.18, alpha=0.91, beta=0.0, gamma=0.0, g_per_power=(0.56, 0.7), sigma=0.0,
                      spread_ratio=0.0)
    options = FitOptions(method='least-squares', n_starts=1, frozen=('beta', 'gamma', 'sigma', 'spread_ratio'))
    covered, total = 0, 0
    for seed in range(20):
        data = synthesize(grid, truth, noise=0.01, seed=seed, clip=False, reference=reference)
        dataset = data.dataset()
        result = fit(dataset, truth, options)
        std_errors = errors(result, dataset, options)
        for name in result.free_names:
            total += 1
            covered += abs(result.params.as_dict()[name] - truth.as_dict()[name]) <= std_errors[name]
    assert covered / total >= 0.9
