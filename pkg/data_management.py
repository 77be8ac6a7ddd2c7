from dataclasses import dataclass, field
import os
import json
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from energy_grid import CoincidenceMap, EnergyGrid, Spectrum1D
from exceptions import ConfigError, InvalidArgumentError, MapParseError

HEADER_KEYS = ('e_min', 'delta', 'n_bins', 'hbar_omega')
FLOAT_FORMAT = '%.17g'


def _format_header(grid: EnergyGrid) -> str:
    return (f"e_min={FLOAT_FORMAT % grid.e_min} delta={FLOAT_FORMAT % grid.delta} "
            f"n_bins={grid.n_bins} hbar_omega={FLOAT_FORMAT % grid.hbar_omega}")


def _parse_header(path: str, lines: List[str]) -> Tuple[EnergyGrid, int]:
    """Collect key=value pairs from leading '#' lines; returns the grid and the first data line index."""
    values: Dict[str, str] = {}
    index = 0
    while index < len(lines) and (lines[index].startswith('#') or not lines[index].strip()):
        for token in lines[index].lstrip('#').split():
            if '=' not in token:
                raise MapParseError(path, index + 1, f"Expected key=value in header, got '{token}'")
            key, value = token.split('=', 1)
            values[key] = value
        index += 1
    missing = [key for key in HEADER_KEYS if key not in values]
    if missing:
        raise MapParseError(path, max(index, 1), f"Header is missing {', '.join(missing)}")
    try:
        grid = EnergyGrid.from_header(float(values['e_min']), float(values['delta']),
                                      int(values['n_bins']), float(values['hbar_omega']))
    except (ValueError, InvalidArgumentError) as e:
        raise MapParseError(path, max(index, 1), f"Invalid grid header: {e}")
    return grid, index


def _parse_row(path: str, line_number: int, line: str, expected: int) -> List[float]:
    tokens = line.split()
    if len(tokens) != expected:
        raise MapParseError(path, line_number, f"Expected {expected} values, found {len(tokens)}")
    try:
        return [float(token) for token in tokens]
    except ValueError as e:
        raise MapParseError(path, line_number, str(e))


def _read_table(path: str, two_dimensional: bool):
    if not os.path.exists(path):
        raise MapParseError(path, 0, "File not found")
    with open(path, 'r') as f:
        lines = f.read().splitlines()
    grid, start = _parse_header(path, lines)
    rows = []
    for offset, line in enumerate(lines[start:]):
        if not line.strip() or line.startswith('#'):
            continue
        rows.append(_parse_row(path, start + offset + 1, line, grid.n_bins))
    expected_rows = grid.n_bins if two_dimensional else 1
    if len(rows) != expected_rows:
        raise MapParseError(path, len(lines), f"Expected {expected_rows} data lines, found {len(rows)}")
    values = np.array(rows) if two_dimensional else np.array(rows[0])
    try:
        if two_dimensional:
            return CoincidenceMap(grid, values)
        return Spectrum1D(grid, values)
    except InvalidArgumentError as e:
        raise MapParseError(path, start + 1, str(e))


def read_map(path: str) -> CoincidenceMap:
    coincidence = _read_table(path, two_dimensional=True)
    logging.info(f"Read {coincidence.grid.n_bins}x{coincidence.grid.n_bins} map from {path}")
    return coincidence


def read_spectrum(path: str) -> Spectrum1D:
    return _read_table(path, two_dimensional=False)


def read_table(path: str):
    """Map or spectrum, whichever the file holds."""
    if not os.path.exists(path):
        raise MapParseError(path, 0, "File not found")
    with open(path, 'r') as f:
        data_lines = [line for line in f.read().splitlines() if line.strip() and not line.startswith('#')]
    return _read_table(path, two_dimensional=len(data_lines) > 1)


def read_config_file(path: str) -> Dict[str, str]:
    """Flat key=value lines; '#' starts a comment."""
    if not os.path.exists(path):
        raise ConfigError(f"Config file {path} not found")
    values: Dict[str, str] = {}
    with open(path, 'r') as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{line_number}: expected key=value, got '{line}'")
            key, value = (part.strip() for part in line.split('=', 1))
            if not key:
                raise ConfigError(f"{path}:{line_number}: empty key")
            values[key] = value
    logging.info(f"Loaded {len(values)} settings from {path}")
    return values


def fit_table(result) -> pd.DataFrame:
    values = result.params.as_dict()
    return pd.DataFrame({'parameter': list(values), 'value': list(values.values()),
                         'error_2sigma': [result.std_errors[name] for name in values]})


class NumpyEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        if isinstance(obj, (np.bool_,)):
            return bool(obj)
        return super().default(obj)


@dataclass
class DataManager:
    output_dir: str = 'output'
    MANIFEST_FILE: str = 'manifest.json'
    FIT_RESULT_FILE: str = 'fit_result.json'
    FIT_PARAMS_FILE: str = 'fit_params.csv'
    GAS_DIAGNOSTICS_FILE: str = 'gas_diagnostics.csv'
    GAS_SUMMARY_FILE: str = 'gas_summary.json'
    SCHMIDT_COEFFICIENTS_FILE: str = 'schmidt_coefficients.txt'

    command: Optional[str] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[Dict] = field(default_factory=list)

    def __post_init__(self):
        os.makedirs(self.output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def record_output(self, name: str, parameters: Optional[Dict] = None, inputs: Optional[Dict[str, str]] = None):
        self.outputs.append({'file': name,
                             'inputs': dict(inputs if inputs is not None else self.inputs),
                             'parameters': dict(parameters or {})})
        logging.info(f"Wrote {self.path(name)}")

    def write_map(self, name: str, coincidence: CoincidenceMap, parameters: Optional[Dict] = None) -> str:
        np.savetxt(self.path(name), np.asarray(coincidence.values), fmt=FLOAT_FORMAT,
                   header=_format_header(coincidence.grid), comments='# ')
        self.record_output(name, parameters)
        return self.path(name)

    def write_spectrum(self, name: str, spectrum: Spectrum1D, parameters: Optional[Dict] = None) -> str:
        np.savetxt(self.path(name), np.asarray(spectrum.values)[None, :], fmt=FLOAT_FORMAT,
                   header=_format_header(spectrum.grid), comments='# ')
        self.record_output(name, parameters)
        return self.path(name)

    def write_csv_matrix(self, name: str, coincidence: CoincidenceMap, parameters: Optional[Dict] = None) -> str:
        """Plot-ready matrix: E1 down the rows, E2 across the columns."""
        energies = coincidence.grid.energies
        frame = pd.DataFrame(np.asarray(coincidence.values), index=pd.Index(energies, name='E1_eV'),
                             columns=[FLOAT_FORMAT % energy for energy in energies])
        frame.to_csv(self.path(name), float_format=FLOAT_FORMAT)
        self.record_output(name, parameters)
        return self.path(name)

    def write_frame(self, name: str, frame: pd.DataFrame, parameters: Optional[Dict] = None) -> str:
        frame.to_csv(self.path(name), index=False, float_format=FLOAT_FORMAT)
        self.record_output(name, parameters)
        return self.path(name)

    def write_json(self, name: str, payload: Dict, parameters: Optional[Dict] = None) -> str:
        with open(self.path(name), 'w') as f:
            json.dump(payload, f, cls=NumpyEncoder, indent=2, sort_keys=True)
        self.record_output(name, parameters)
        return self.path(name)

    def save_fit_result(self, result, negativity: Optional[float] = None, parameters: Optional[Dict] = None) -> str:
        payload = {
            'params': result.params.as_dict(),
            'errors_2sigma': result.std_errors,
            'loss': result.loss,
            'covariance': result.covariance,
            'free_parameters': result.free_names,
            'converged': result.converged,
            'hessian_singular': result.hessian_singular,
            'n_evaluations': result.n_evaluations,
            'message': result.message,
        }
        if negativity is not None:
            payload['negativity'] = negativity
        self.write_frame(self.FIT_PARAMS_FILE, fit_table(result), parameters)
        return self.write_json(self.FIT_RESULT_FILE, payload, parameters)

    def write_schmidt(self, decomposition, grid: EnergyGrid, parameters: Optional[Dict] = None) -> List[str]:
        """lambda list as text, then the real and imaginary parts of every mode as spectrum files."""
        np.savetxt(self.path(self.SCHMIDT_COEFFICIENTS_FILE), np.asarray(decomposition.coefficients), fmt=FLOAT_FORMAT,
                   header=f"lambda discarded_weight={FLOAT_FORMAT % decomposition.discarded_weight}", comments='# ')
        self.record_output(self.SCHMIDT_COEFFICIENTS_FILE, parameters)
        paths = [self.path(self.SCHMIDT_COEFFICIENTS_FILE)]
        for side, modes in (('a', decomposition.modes_a), ('b', decomposition.modes_b)):
            for index, mode in enumerate(modes):
                paths.append(self.write_spectrum(f"schmidt_{side}{index}_re.txt", Spectrum1D(grid, np.real(mode)), parameters))
                paths.append(self.write_spectrum(f"schmidt_{side}{index}_im.txt", Spectrum1D(grid, np.imag(mode)), parameters))
        return paths

    def write_snapshot(self, name: str, state, parameters: Optional[Dict] = None) -> str:
        """time line, then x y z vx vy vz t_emit per active electron."""
        active = state.active
        table = np.column_stack([state.positions[active], state.velocities[active], state.emission_times[active]])
        np.savetxt(self.path(name), table, fmt=FLOAT_FORMAT,
                   header=f"time={FLOAT_FORMAT % state.time}\nx y z vx vy vz t_emit", comments='# ')
        self.record_output(name, parameters)
        return self.path(name)

    def write_diagnostics(self, diagnostics, parameters: Optional[Dict] = None) -> str:
        return self.write_frame(self.GAS_DIAGNOSTICS_FILE, diagnostics.to_frame(), parameters)

    def save_manifest(self, parameters: Optional[Dict] = None) -> str:
        manifest = {'command': self.command, 'inputs': self.inputs,
                    'parameters': dict(parameters or {}), 'outputs': self.outputs}
        with open(self.path(self.MANIFEST_FILE), 'w') as f:
            json.dump(manifest, f, cls=NumpyEncoder, indent=2, sort_keys=True)
        logging.info(f"Manifest lists {len(self.outputs)} outputs")
        return self.path(self.MANIFEST_FILE)


def read_maps(paths: Sequence[str]) -> List[CoincidenceMap]:
    return [read_map(path) for path in paths]
