import os
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence

from energy_grid import EnergyGrid, make_grid
from exceptions import ConfigError, InvalidArgumentError
from gas_dynamics import EmitterConfig, field_from_descriptor
from quantum_walk import DEFAULT_EPS, DEFAULT_NODES
from tomography import FitOptions, FitParams

MODES = ('simulate', 'fit', 'negativity', 'gas', 'visibility', 'synth')
MODEL_PRESETS = ('separable', 'entangled', 'classical', 'blend')
GRID_KEYS = {'k': 'grid_k', 'span': 'grid_span', 'emin': 'grid_emin', 'hw': 'hbar_omega'}
ENVIRONMENT = {'output_dir': 'SIDEBANDS_OUTPUT_DIR', 'workers': 'SIDEBANDS_WORKERS', 'eps': 'SIDEBANDS_BESSEL_EPS'}
STRING_LISTS = {'observations', 'frozen', 'labels'}


@dataclass
class RunConfig:
    mode: str
    output_dir: str = 'output'
    seed: int = 0
    figures: bool = False
    workers: int = 1

    # grid
    grid_k: int = 4
    grid_span: int = 24
    grid_emin: Optional[float] = None
    hbar_omega: float = 1.2

    # inputs
    reference: Optional[str] = None
    observations: List[str] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)
    input: Optional[str] = None

    # model
    model: str = 'blend'
    f: float = 0.18
    alpha: float = 0.91
    beta: float = 0.01
    gamma: float = -0.04
    sigma: float = 0.0
    ratio: float = 0.0
    g: List[float] = field(default_factory=lambda: [0.56, 0.98, 1.33])
    nodes: int = DEFAULT_NODES
    eps: float = DEFAULT_EPS

    # fit
    method: str = 'nelder-mead'
    n_starts: int = 8
    max_evaluations: int = 20000
    frozen: List[str] = field(default_factory=list)
    nested: bool = False

    # negativity / visibility
    lambdas: List[float] = field(default_factory=list)
    truncation: int = 3
    window: float = 2.0

    # synth
    separation: float = 1.5
    peak_width: float = 0.3
    correlation: float = 0.0
    noise: float = 0.0
    clip: bool = True

    # gas
    n_electrons: int = 135
    emission_fwhm: float = 200.0
    initial_ke: float = 1.0
    emission_half_angle: float = 45.0
    field_model: str = 'tip'
    tip_radius: float = 100.0
    extraction_voltage: float = 1750.0
    outer_radius: float = 1e6
    field_strength: float = 1.0
    t_end: float = 1000.0
    dt: float = 0.1
    sample_every: float = 10.0
    snapshot_times: List[float] = field(default_factory=lambda: [400.0])
    coulomb: bool = True

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode '{self.mode}', expected one of {MODES}")
        if self.model not in MODEL_PRESETS:
            raise ConfigError(f"Unknown model '{self.model}', expected one of {MODEL_PRESETS}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if self.mode in ('simulate', 'fit') and not self.reference:
            raise ConfigError(f"'{self.mode}' needs a reference map (--reference)")
        if self.mode == 'simulate' and self.model != 'separable' and self.model != 'classical' and not self.g:
            raise ConfigError("'simulate' needs at least one coupling (--g)")
        if self.mode == 'fit':
            if not self.observations:
                raise ConfigError("'fit' needs at least one laser-on map (--observations)")
            if len(self.g) != len(self.observations):
                raise ConfigError(f"{len(self.g)} initial couplings for {len(self.observations)} laser-on maps")
        if self.mode == 'negativity' and not self.lambdas and not self.reference:
            raise ConfigError("'negativity' needs Schmidt coefficients (--lambdas) or a reference map")
        if self.mode == 'visibility' and not self.input:
            raise ConfigError("'visibility' needs an input spectrum or map (--input)")
        if self.mode == 'synth' and not self.g:
            raise ConfigError("'synth' needs at least one coupling (--g)")
        if self.labels and len(self.labels) != len(self.g):
            raise ConfigError(f"{len(self.labels)} labels for {len(self.g)} couplings")
        return self

    def grid(self) -> EnergyGrid:
        e_min = self.grid_emin if self.grid_emin is not None else -(self.grid_span // 2) * self.hbar_omega
        try:
            return make_grid(e_min, self.hbar_omega, self.grid_k, self.grid_span)
        except InvalidArgumentError as e:
            raise ConfigError(f"Invalid grid: {e}")

    def fit_params(self) -> FitParams:
        return FitParams(f=self.f, alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                         g_per_power=tuple(self.g), sigma=self.sigma, spread_ratio=self.ratio)

    def fit_options(self) -> FitOptions:
        return FitOptions(method=self.method, n_starts=self.n_starts, seed=self.seed, nodes=self.nodes,
                          eps=self.eps, max_evaluations=self.max_evaluations, frozen=tuple(self.frozen),
                          workers=self.workers)

    def emitter_config(self, n_electrons: Optional[int] = None) -> EmitterConfig:
        if self.field_model in ('sphere', 'tip'):
            parameters = {'tip_radius': self.tip_radius, 'extraction_voltage': self.extraction_voltage,
                          'outer_radius': self.outer_radius}
        elif self.field_model == 'uniform':
            parameters = {'tip_radius': self.tip_radius, 'strength': self.field_strength}
        else:
            parameters = {'tip_radius': self.tip_radius}
        try:
            return EmitterConfig(n_electrons=n_electrons or self.n_electrons, emission_fwhm=self.emission_fwhm,
                                 initial_ke=self.initial_ke, emission_half_angle=self.emission_half_angle,
                                 field_model=field_from_descriptor(self.field_model, **parameters),
                                 seed=self.seed)
        except InvalidArgumentError as e:
            raise ConfigError(f"Invalid emitter configuration: {e}")

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: '{value}'")


def _convert(name: str, value: Any) -> Any:
    """Turn a config-file or environment string into the type of the RunConfig field."""
    if not isinstance(value, str):
        return value
    defaults = {item.name: item for item in fields(RunConfig)}
    if name not in defaults:
        raise ConfigError(f"Unknown setting '{name}'")
    item = defaults[name]
    default = item.default_factory() if callable(item.default_factory) else item.default
    try:
        if name in STRING_LISTS:
            return [token.strip() for token in value.split(',') if token.strip()]
        if isinstance(default, list):
            return [float(token) for token in value.replace(',', ' ').split()]
        if isinstance(default, bool):
            return _parse_bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float) or name == 'grid_emin':
            return float(value)
        return value
    except ValueError as e:
        raise ConfigError(f"Invalid value for '{name}': {e}")


def parse_grid(tokens: Sequence[str]) -> Dict[str, Any]:
    """``k=4 span=24 emin=-14.4 hw=1.2`` into RunConfig field values."""
    values: Dict[str, Any] = {}
    for token in tokens:
        if '=' not in token:
            raise ConfigError(f"Grid setting '{token}' is not key=value")
        key, value = token.split('=', 1)
        if key not in GRID_KEYS:
            raise ConfigError(f"Unknown grid key '{key}', expected one of {sorted(GRID_KEYS)}")
        values[GRID_KEYS[key]] = _convert(GRID_KEYS[key], value)
    return values


def environment_settings() -> Dict[str, Any]:
    settings = {}
    for name, variable in ENVIRONMENT.items():
        value = os.getenv(variable)
        if value:
            settings[name] = _convert(name, value)
    return settings


def build_run_config(mode: str, flags: Dict[str, Any], config_values: Optional[Dict[str, str]] = None) -> RunConfig:
    """Merge settings: flags over config file over environment over defaults."""
    flags = dict(flags)
    grid_tokens = flags.pop('grid', None)
    merged: Dict[str, Any] = {}
    merged.update(environment_settings())
    for key, value in (config_values or {}).items():
        if key == 'grid':
            merged.update(parse_grid(value.split()))
        else:
            merged[key] = _convert(key, value)
    if grid_tokens:
        merged.update(parse_grid(grid_tokens))
    merged.update({key: value for key, value in flags.items() if value is not None})
    merged.pop('mode', None)
    try:
        config = RunConfig(mode=mode, **merged)
    except TypeError as e:
        raise ConfigError(f"Invalid settings: {e}")
    logging.debug(f"Run configuration: {config}")
    return config.validate()
