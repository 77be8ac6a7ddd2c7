import logging

from commands.arguments import add_common_arguments, add_model_arguments
from data_management import DataManager, read_map
from run_config import RunConfig
from state_space import PhaseParams, build_entangled, negativity, negativity_bruteforce, schmidt

BRUTEFORCE_LIMIT = 8


def negativity_command(config: RunConfig, data_manager: DataManager) -> int:
    parameters = {'f': config.f, 'truncation': config.truncation}
    if config.lambdas:
        lambdas = list(config.lambdas)
        parameters['lambdas'] = lambdas
    else:
        reference = read_map(config.reference)
        data_manager.inputs['reference'] = config.reference
        parameters.update({'alpha': config.alpha, 'beta': config.beta, 'gamma': config.gamma})
        decomposition = schmidt(build_entangled(reference, PhaseParams(config.alpha, config.beta, config.gamma)),
                                rank_cutoff=config.truncation)
        lambdas = decomposition.coefficients.tolist()
        data_manager.write_schmidt(decomposition, reference.grid, parameters)

    value = negativity(config.f, lambdas, config.truncation)
    payload = {'negativity': value, 'lambdas': lambdas}
    if min(config.truncation, len(lambdas)) <= BRUTEFORCE_LIMIT:
        payload['negativity_bruteforce'] = negativity_bruteforce(config.f, lambdas, min(config.truncation, len(lambdas)))
    logging.info(f"Negativity {value:.6f}")
    data_manager.write_json('negativity.json', payload, parameters)
    print(f"negativity={value:.6f}")
    return 0


def register_negativity_command(subparsers):
    parser = subparsers.add_parser('negativity', help='Negativity from Schmidt coefficients or a map and phase')
    add_common_arguments(parser)
    add_model_arguments(parser)
    parser.add_argument('--lambdas', type=float, nargs='+', help='Schmidt coefficients')
    parser.add_argument('--reference', help='Diagonal map whose entangled state is decomposed')
    parser.add_argument('--truncation', type=int, help='Number of Schmidt pairs kept')
    parser.set_defaults(handler=negativity_command)
