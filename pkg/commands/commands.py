from commands.fit import register_fit_command
from commands.gas import register_gas_command
from commands.negativity import register_negativity_command
from commands.simulate import register_simulate_command
from commands.synth import register_synth_command
from commands.visibility import register_visibility_command


def register_commands(subparsers):
    register_simulate_command(subparsers)
    register_fit_command(subparsers)
    register_negativity_command(subparsers)
    register_gas_command(subparsers)
    register_visibility_command(subparsers)
    register_synth_command(subparsers)
