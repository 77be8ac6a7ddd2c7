import logging

import numpy as np

from commands.arguments import add_common_arguments
from data_management import DataManager
from exceptions import UndefinedStatisticError
from figures import FigureBuilder
from gas_dynamics import energy_spectrum, run
from run_config import RunConfig

NN_WINDOW = (0.0, 400.0)


def gas_command(config: RunConfig, data_manager: DataManager) -> int:
    emitter = config.emitter_config()
    parameters = {'n_electrons': emitter.n_electrons, 'emission_fwhm': emitter.emission_fwhm,
                  'initial_ke': emitter.initial_ke, 'emission_half_angle': emitter.emission_half_angle,
                  'field_model': config.field_model, 'tip_radius': emitter.tip_radius, 'seed': emitter.seed,
                  't_end': config.t_end, 'dt': config.dt, 'coulomb': config.coulomb}
    snapshots, diagnostics = run(emitter, config.t_end, config.dt, config.sample_every,
                                 config.snapshot_times, config.coulomb)
    data_manager.write_diagnostics(diagnostics, parameters)
    for index, snapshot in enumerate(snapshots[:-1]):
        data_manager.write_snapshot(f"snapshot_{index}_{snapshot.time:.1f}fs.txt", snapshot, parameters)
    data_manager.write_snapshot('snapshot_final.txt', snapshots[-1], parameters)

    final = snapshots[-1]
    spectrum, iqr = energy_spectrum(final, emitter.field_model)
    data_manager.write_spectrum('gas_spectrum.txt', spectrum, parameters)

    frame = diagnostics.to_frame()
    in_window = frame[(frame['time_fs'] >= NN_WINDOW[0]) & (frame['time_fs'] <= NN_WINDOW[1])]
    median_nn = float(np.nanmedian(in_window['median_nn_nm'])) if in_window['median_nn_nm'].notna().any() else None
    try:
        saturation = diagnostics.saturation_time()
    except UndefinedStatisticError:
        saturation = None
    summary = {'final_width_fwhm_ev': diagnostics.fwhm[-1], 'final_width_iqr_ev': diagnostics.iqr[-1],
               'spectrum_iqr_ev': iqr, 'median_nn_0_400fs_nm': median_nn, 'saturation_time_fs': saturation,
               'final_energy_drift': diagnostics.energy_drift[-1], 'n_active_final': final.n_active}
    data_manager.write_json(data_manager.GAS_SUMMARY_FILE, summary, parameters)
    logging.info(f"Gas summary: {summary}")

    if config.figures:
        figure_builder = FigureBuilder(data_manager)
        figure_builder.save(figure_builder.create_gas_chart(frame), 'gas_diagnostics.html', parameters)
        figure_builder.save(figure_builder.create_spectrum_chart({'final': spectrum}, 'Simulated energy spectrum'),
                            'gas_spectrum.html', parameters)
    print(f"final_width_fwhm={diagnostics.fwhm[-1]:.4f} eV median_nn={median_nn}")
    return 0


def register_gas_command(subparsers):
    parser = subparsers.add_parser('gas', help='Coulomb dynamics of the photoemitted electron gas')
    add_common_arguments(parser)
    parser.add_argument('--n-electrons', dest='n_electrons', type=int)
    parser.add_argument('--emission-fwhm', dest='emission_fwhm', type=float, help='Emission-time FWHM (fs)')
    parser.add_argument('--initial-ke', dest='initial_ke', type=float, help='Launch kinetic energy (eV)')
    parser.add_argument('--emission-half-angle', dest='emission_half_angle', type=float, help='Apex cap half-angle (deg)')
    parser.add_argument('--field-model', dest='field_model', choices=['none', 'uniform', 'sphere', 'tip'])
    parser.add_argument('--tip-radius', dest='tip_radius', type=float, help='nm')
    parser.add_argument('--extraction-voltage', dest='extraction_voltage', type=float, help='V')
    parser.add_argument('--field-strength', dest='field_strength', type=float, help='V/nm for the uniform field')
    parser.add_argument('--t-end', dest='t_end', type=float, help='fs after the emission centre')
    parser.add_argument('--dt', type=float, help='fs')
    parser.add_argument('--sample-every', dest='sample_every', type=float, help='fs between diagnostics samples')
    parser.add_argument('--snapshot-times', dest='snapshot_times', type=float, nargs='+')
    parser.add_argument('--no-coulomb', dest='coulomb', action='store_false', default=None)
    parser.set_defaults(handler=gas_command)
