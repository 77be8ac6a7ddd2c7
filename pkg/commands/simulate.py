import logging

from commands.arguments import add_common_arguments, add_model_arguments
from data_management import DataManager, read_map
from energy_grid import CoincidenceMap, blur
from figures import FigureBuilder
from quantum_walk import Coupling, CouplingSpread, average_over_coupling, coincidence_classical, coincidence_separable
from run_config import RunConfig
from state_space import EntanglementModel, PhaseParams, blend


def simulated_map(config: RunConfig, reference: CoincidenceMap, g: float) -> CoincidenceMap:
    """One preset at one coupling, averaged over the coupling spread and blurred."""
    if config.model == 'separable':
        def model(g_eff):
            return coincidence_separable(reference, Coupling(g_eff), config.eps)
    elif config.model == 'classical':
        def model(g_eff):
            return coincidence_classical(reference, Coupling(g_eff))
    else:
        f = 1.0 if config.model == 'entangled' else config.f
        entanglement = EntanglementModel(f=f, diag=reference,
                                         phase=PhaseParams(config.alpha, config.beta, config.gamma))

        def model(g_eff):
            return blend(entanglement, Coupling(g_eff), config.eps)

    if g == 0 or config.ratio == 0:
        averaged = model(g)
    else:
        averaged = average_over_coupling(model, g, CouplingSpread(config.ratio, config.nodes), config.workers)
    return blur(averaged, config.sigma)


def simulate_command(config: RunConfig, data_manager: DataManager) -> int:
    reference = read_map(config.reference)
    data_manager.inputs['reference'] = config.reference
    figure_builder = FigureBuilder(data_manager) if config.figures else None
    for index, g in enumerate(config.g):
        logging.info(f"Simulating {config.model} model at g={g}")
        coincidence = simulated_map(config, reference, g)
        parameters = {'model': config.model, 'g': g, 'f': config.f, 'alpha': config.alpha, 'beta': config.beta,
                      'gamma': config.gamma, 'sigma': config.sigma, 'ratio': config.ratio,
                      'nodes': config.nodes, 'eps': config.eps}
        name = f"{config.model}_g{index}"
        data_manager.write_map(f"{name}.txt", coincidence, parameters)
        data_manager.write_csv_matrix(f"{name}.csv", coincidence, parameters)
        if figure_builder:
            figure_builder.save(figure_builder.create_map_chart(coincidence, f"{config.model}, |g|={g}"),
                                f"{name}.html", parameters)
    return 0


def register_simulate_command(subparsers):
    parser = subparsers.add_parser('simulate', help='Laser-modulated coincidence maps from a reference map')
    add_common_arguments(parser)
    add_model_arguments(parser)
    parser.add_argument('--reference', help='Laser-off coincidence map file')
    parser.set_defaults(handler=simulate_command)
