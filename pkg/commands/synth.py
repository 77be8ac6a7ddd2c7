from commands.arguments import add_common_arguments, add_grid_arguments, add_model_arguments
from data_management import DataManager
from figures import FigureBuilder
from run_config import RunConfig
from synthetic_data import synthesize


def synth_command(config: RunConfig, data_manager: DataManager) -> int:
    grid = config.grid()
    params = config.fit_params()
    data = synthesize(grid, params, noise=config.noise, seed=config.seed, clip=config.clip,
                      separation=config.separation, peak_width=config.peak_width,
                      correlation=config.correlation, nodes=config.nodes, eps=config.eps)
    parameters = {'params': params.as_dict(), 'noise': config.noise, 'seed': config.seed, 'clip': config.clip,
                  'separation': config.separation, 'peak_width': config.peak_width,
                  'correlation': config.correlation, 'nodes': config.nodes, 'grid_k': grid.k,
                  'grid_span': config.grid_span, 'e_min': grid.e_min, 'hbar_omega': grid.hbar_omega}
    data_manager.write_map('reference.txt', data.reference, parameters)
    labels = config.labels or [f"g{index}" for index in range(len(data.observed))]
    for label, coincidence in zip(labels, data.observed):
        data_manager.write_map(f"{label}.txt", coincidence, parameters)
    if config.figures:
        figure_builder = FigureBuilder(data_manager)
        figure_builder.save_maps([data.reference, *data.observed], ['reference', *labels])
    return 0


def register_synth_command(subparsers):
    parser = subparsers.add_parser('synth', help='Synthetic reference and laser-on maps')
    add_common_arguments(parser)
    add_grid_arguments(parser)
    add_model_arguments(parser)
    parser.add_argument('--labels', nargs='+', help='File names for the laser-on maps')
    parser.add_argument('--noise', type=float, help='Bin noise as a fraction of each map peak')
    parser.add_argument('--no-clip', dest='clip', action='store_false', default=None)
    parser.add_argument('--separation', type=float, help='Template peak separation (eV)')
    parser.add_argument('--peak-width', dest='peak_width', type=float, help='Template peak standard deviation (eV)')
    parser.add_argument('--correlation', type=float, help='Within-peak correlation coefficient')
    parser.set_defaults(handler=synth_command)
