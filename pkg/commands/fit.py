import os
import logging

from commands.arguments import add_common_arguments, add_model_arguments
from data_management import DataManager, fit_table, read_map
from figures import FigureBuilder
from run_config import RunConfig
from state_space import PhaseParams, build_entangled, negativity_of_state
from tomography import Dataset, Observation, TomographyFitter, compare_nested

EXIT_UNCONVERGED = 4


def load_dataset(config: RunConfig, data_manager: DataManager) -> Dataset:
    reference = read_map(config.reference)
    data_manager.inputs['reference'] = config.reference
    labels = config.labels or [os.path.splitext(os.path.basename(path))[0] for path in config.observations]
    observations = []
    for label, path in zip(labels, config.observations):
        observations.append(Observation(label=label, power_mw=float('nan'), coincidence=read_map(path)))
        data_manager.inputs[label] = path
    return Dataset(reference=reference, observations=tuple(observations))


def fit_command(config: RunConfig, data_manager: DataManager) -> int:
    dataset = load_dataset(config, data_manager)
    options = config.fit_options()
    fitter = TomographyFitter(dataset, options)
    result = fitter.fit(config.fit_params())
    fitter.errors(result)

    params = result.params
    psi = build_entangled(dataset.reference, PhaseParams(params.alpha, params.beta, params.gamma))
    negativity = negativity_of_state(params.f, psi, config.truncation)
    parameters = {'method': options.method, 'n_starts': options.n_starts, 'seed': options.seed,
                  'nodes': options.nodes, 'frozen': list(options.frozen), 'initial': config.fit_params().as_dict()}
    data_manager.save_fit_result(result, negativity, parameters)

    report = fitter.residuals(result)
    for observation, residual, subtraction, entangled in zip(dataset.observations, report.residual_maps,
                                                             report.subtraction_maps, report.entangled_maps):
        data_manager.write_map(f"residual_{observation.label}.txt", residual, parameters)
        data_manager.write_map(f"subtracted_{observation.label}.txt", subtraction, parameters)
        data_manager.write_map(f"entangled_{observation.label}.txt", entangled, parameters)

    if config.nested:
        free, separable = compare_nested(dataset, config.fit_params(), options, free=result)
        data_manager.write_json('nested_comparison.json', {'loss_free_f': free.loss, 'loss_f_zero': separable.loss,
                                                          'f_free': free.params.f}, parameters)

    if config.figures:
        figure_builder = FigureBuilder(data_manager)
        figure_builder.save_maps(report.residual_maps, [f"residual_{o.label}" for o in dataset.observations], diverging=True)
        figure_builder.save_maps(report.subtraction_maps, [f"subtracted_{o.label}" for o in dataset.observations], diverging=True)
        figure_builder.save(figure_builder.create_fit_chart(fit_table(result)), 'fit_params.html', parameters)

    print(f"loss={result.loss:.6e} negativity={negativity:.4f}")
    for name, value in params.as_dict().items():
        print(f"{name}={value:.6g} +/- {result.std_errors[name]:.2g}")
    if not result.converged:
        logging.warning(f"Fit did not converge: {result.message}")
        return EXIT_UNCONVERGED
    return 0


def register_fit_command(subparsers):
    parser = subparsers.add_parser('fit', help='Maximum-likelihood fit of the entanglement model')
    add_common_arguments(parser)
    add_model_arguments(parser)
    parser.add_argument('--reference', help='Laser-off coincidence map file')
    parser.add_argument('--observations', nargs='+', help='Laser-on coincidence map files, one per --g value')
    parser.add_argument('--labels', nargs='+', help='Names for the laser-on maps')
    parser.add_argument('--method', choices=['nelder-mead', 'l-bfgs-b', 'least-squares'])
    parser.add_argument('--n-starts', dest='n_starts', type=int)
    parser.add_argument('--max-evaluations', dest='max_evaluations', type=int)
    parser.add_argument('--frozen', nargs='+', help='Parameters held at their initial values, e.g. f')
    parser.add_argument('--nested', action='store_true', default=None, help='Also refit with f fixed to 0')
    parser.add_argument('--truncation', type=int, help='Schmidt truncation for the reported negativity')
    parser.set_defaults(handler=fit_command)
