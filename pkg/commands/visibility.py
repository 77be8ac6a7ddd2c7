from commands.arguments import add_common_arguments
from data_management import DataManager, read_table
from energy_grid import visibility
from run_config import RunConfig


def visibility_command(config: RunConfig, data_manager: DataManager) -> int:
    table = read_table(config.input)
    data_manager.inputs['input'] = config.input
    window = config.window * table.grid.hbar_omega
    value = visibility(table, window)
    data_manager.write_json('visibility.json', {'visibility': value, 'window_ev': window},
                            {'window_photons': config.window})
    print(f"visibility={value:.6f}")
    return 0


def register_visibility_command(subparsers):
    parser = subparsers.add_parser('visibility', help='Fringe visibility of a spectrum or map')
    add_common_arguments(parser)
    parser.add_argument('--input', help='Spectrum or map file')
    parser.add_argument('--window', type=float, help='Half-width of the energy window in photon energies')
    parser.set_defaults(handler=visibility_command)
