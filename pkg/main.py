import argparse
import logging
import os
import sys

from dotenv import find_dotenv, load_dotenv

from commands.arguments import strip_control_arguments
from commands.commands import register_commands
from data_management import DataManager, read_config_file
from exceptions import ConfigError, MapParseError, SidebandError
from run_config import build_run_config

load_dotenv(find_dotenv())

# Configure logging
logging.basicConfig(level=os.getenv('SIDEBANDS_LOG_LEVEL', 'WARNING').upper(),
                    format='%(asctime)s - %(funcName)s - %(levelname)s - %(message)s',
                    datefmt='%Y-%m-%d %H:%M:%S')

EXIT_PARSE_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sidebands',
                                     description='Two-electron photon-sideband walks: simulation, tomography and electron-gas dynamics.')
    parser.add_argument('--log-level', dest='log_level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    subparsers = parser.add_subparsers(dest='command', required=True)
    register_commands(subparsers)
    return parser


def main(argv=None) -> int:
    args = create_parser().parse_args(argv)
    if args.log_level:
        logging.getLogger().setLevel(args.log_level)
    try:
        config_values = read_config_file(args.config) if args.config else {}
        config = build_run_config(args.command, strip_control_arguments(args), config_values)
        data_manager = DataManager(output_dir=config.output_dir, command=args.command)
        if args.config:
            data_manager.inputs['config'] = args.config
        exit_code = args.handler(config, data_manager)
        data_manager.save_manifest(config.as_dict())
        return exit_code
    except (ConfigError, MapParseError) as e:
        logging.error(f"Error in {args.command}: {str(e)}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except SidebandError as e:
        logging.error(f"Numerical failure in {args.command}: {str(e)}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR


if __name__ == '__main__':
    sys.exit(main())
