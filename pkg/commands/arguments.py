import argparse


def add_common_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='key=value configuration file')
    parser.add_argument('--out', dest='output_dir', help='Output directory')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--workers', type=int, help='Threads for per-node and per-power evaluation')
    parser.add_argument('--figures', action='store_true', default=None, help='Also write plotly HTML figures')


def add_grid_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--grid', nargs='+', metavar='KEY=VALUE', help='k=<int> span=<int> emin=<float> hw=<float>')


def add_model_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--model', choices=['separable', 'entangled', 'classical', 'blend'])
    parser.add_argument('--f', type=float, help='Entanglement fraction')
    parser.add_argument('--alpha', type=float)
    parser.add_argument('--beta', type=float)
    parser.add_argument('--gamma', type=float)
    parser.add_argument('--sigma', type=float, help='Detector blur (eV)')
    parser.add_argument('--ratio', type=float, help='Electron-to-laser pulse duration ratio')
    parser.add_argument('--g', type=float, nargs='+', help='Coupling strength per laser power')
    parser.add_argument('--nodes', type=int, help='Quadrature nodes for the coupling spread')
    parser.add_argument('--eps', type=float, help='Bessel truncation tolerance')


def strip_control_arguments(args: argparse.Namespace) -> dict:
    """Namespace entries that are RunConfig settings."""
    flags = dict(vars(args))
    for key in ('config', 'command', 'handler', 'log_level'):
        flags.pop(key, None)
    return flags
