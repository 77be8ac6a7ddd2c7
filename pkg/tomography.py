import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.optimize import least_squares, minimize

from energy_grid import CoincidenceMap, blur
from exceptions import InvalidArgumentError
from quantum_walk import DEFAULT_EPS, DEFAULT_NODES, Coupling, CouplingSpread, average_over_coupling
from state_space import EntanglementModel, PhaseParams, blend

FIT_METHODS = ('nelder-mead', 'l-bfgs-b', 'least-squares')
SEPARABLE_SUBTRACTION = 0.75
G_FLOOR = 1e-6


@dataclass(frozen=True)
class Observation:
    label: str
    power_mw: float
    coincidence: CoincidenceMap


@dataclass(frozen=True)
class Dataset:
    reference: CoincidenceMap
    observations: Tuple[Observation, ...]

    def __post_init__(self):
        object.__setattr__(self, 'observations', tuple(self.observations))
        if not self.observations:
            raise InvalidArgumentError("A dataset needs at least one laser-on observation")
        if not self.reference.is_normalized or not self.reference.is_nonnegative:
            raise InvalidArgumentError(f"The reference map must be normalized and nonnegative (mass {self.reference.mass():.12g})")
        for observation in self.observations:
            if not observation.coincidence.grid.same_as(self.reference.grid):
                raise InvalidArgumentError(f"Observation '{observation.label}' is not on the reference grid")
            mass = observation.coincidence.mass()
            if abs(mass - 1.0) > 1e-6:
                logging.warning(f"Observation '{observation.label}' has mass {mass:.6f}; fitting it as measured")

    @property
    def n_points(self) -> int:
        return len(self.observations) * self.reference.grid.n_bins ** 2


@dataclass(frozen=True)
class FitParams:
    f: float
    alpha: float
    beta: float
    gamma: float
    g_per_power: Tuple[float, ...]
    sigma: float
    spread_ratio: float

    def __post_init__(self):
        object.__setattr__(self, 'g_per_power', tuple(float(g) for g in self.g_per_power))
        if not 0.0 <= self.f <= 1.0:
            raise InvalidArgumentError(f"f must lie in [0, 1], got {self.f}")
        if not self.g_per_power or any(g <= 0 for g in self.g_per_power):
            raise InvalidArgumentError(f"Every coupling must be positive, got {self.g_per_power}")
        if self.sigma < 0 or self.spread_ratio < 0:
            raise InvalidArgumentError(f"sigma and spread_ratio must be nonnegative, got {self.sigma}, {self.spread_ratio}")

    def names(self) -> List[str]:
        return (['f', 'alpha', 'beta', 'gamma']
                + [f"g{index}" for index in range(len(self.g_per_power))]
                + ['sigma', 'spread_ratio'])

    def to_vector(self) -> np.ndarray:
        return np.array([self.f, self.alpha, self.beta, self.gamma, *self.g_per_power, self.sigma, self.spread_ratio])

    @classmethod
    def from_vector(cls, vector: Sequence[float], n_powers: int) -> "FitParams":
        vector = [float(value) for value in vector]
        return cls(f=vector[0], alpha=vector[1], beta=vector[2], gamma=vector[3],
                   g_per_power=tuple(vector[4:4 + n_powers]),
                   sigma=vector[4 + n_powers], spread_ratio=vector[5 + n_powers])

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names(), self.to_vector().tolist()))

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        n = len(self.g_per_power)
        lower = np.array([0.0, -np.inf, -np.inf, -np.inf] + [G_FLOOR] * n + [0.0, 0.0])
        upper = np.array([1.0, np.inf, np.inf, np.inf] + [np.inf] * n + [np.inf, np.inf])
        return lower, upper


@dataclass
class FitOptions:
    method: str = 'nelder-mead'
    n_starts: int = 8
    seed: int = 0
    nodes: int = DEFAULT_NODES
    eps: float = DEFAULT_EPS
    max_evaluations: int = 20000
    tolerance: float = 1e-12
    frozen: Tuple[str, ...] = ()
    workers: int = 1
    relative_step: float = 1e-4
    absolute_step: float = 1e-6

    def __post_init__(self):
        if self.method not in FIT_METHODS:
            raise InvalidArgumentError(f"Unknown fit method '{self.method}', expected one of {FIT_METHODS}")
        if self.n_starts < 1:
            raise InvalidArgumentError(f"n_starts must be at least 1, got {self.n_starts}")


@dataclass
class FitResult:
    params: FitParams
    std_errors: Dict[str, float]
    loss: float
    covariance: np.ndarray
    residual_maps: List[CoincidenceMap]
    converged: bool = True
    n_evaluations: int = 0
    free_names: List[str] = field(default_factory=list)
    hessian_singular: bool = False
    message: str = ''


@dataclass
class ResidualReport:
    residual_maps: List[CoincidenceMap]
    subtraction_maps: List[CoincidenceMap]
    entangled_maps: List[CoincidenceMap]


def forward(params: FitParams, reference: CoincidenceMap, power_index: int, nodes: int = DEFAULT_NODES,
            eps: float = DEFAULT_EPS, g_fn: Optional[Callable] = None, workers: int = 1) -> CoincidenceMap:
    """Blend, then average over the coupling spread, then apply the detector blur."""
    model = EntanglementModel(f=params.f, diag=reference,
                              phase=PhaseParams(params.alpha, params.beta, params.gamma, g_fn))
    spread = CouplingSpread(params.spread_ratio, nodes)
    averaged = average_over_coupling(lambda g_eff: blend(model, Coupling(g_eff), eps),
                                     params.g_per_power[power_index], spread, workers)
    return blur(averaged, params.sigma)


def _predictions(params: FitParams, dataset: Dataset, options: FitOptions) -> List[CoincidenceMap]:
    def predict(index: int) -> CoincidenceMap:
        return forward(params, dataset.reference, index, options.nodes, options.eps)

    indices = range(len(dataset.observations))
    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as executor:
            return list(executor.map(predict, indices))
    return [predict(index) for index in indices]


def log_likelihood(params: FitParams, dataset: Dataset, options: Optional[FitOptions] = None) -> float:
    options = options or FitOptions()
    total = 0.0
    for prediction, observation in zip(_predictions(params, dataset, options), dataset.observations):
        total += float(np.sum((prediction.values - observation.coincidence.values) ** 2))
    return -total


class TomographyFitter:
    def __init__(self, dataset: Dataset, options: Optional[FitOptions] = None):
        self.dataset = dataset
        self.options = options or FitOptions()
        self.n_evaluations = 0
        self._template: Optional[FitParams] = None
        self._free: np.ndarray = np.array([], dtype=int)

    def _configure(self, init: FitParams) -> None:
        if len(init.g_per_power) != len(self.dataset.observations):
            raise InvalidArgumentError(f"{len(init.g_per_power)} couplings given for {len(self.dataset.observations)} observations")
        names = init.names()
        unknown = set(self.options.frozen) - set(names)
        if unknown:
            raise InvalidArgumentError(f"Cannot freeze unknown parameters {sorted(unknown)}")
        self._template = init
        self._free = np.array([index for index, name in enumerate(names) if name not in self.options.frozen], dtype=int)

    def _params(self, free_vector: np.ndarray) -> FitParams:
        full = self._template.to_vector()
        full[self._free] = free_vector
        return FitParams.from_vector(full, len(self._template.g_per_power))

    def _free_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lower, upper = self._template.bounds()
        return lower[self._free], upper[self._free]

    def residual_vector(self, free_vector: np.ndarray) -> np.ndarray:
        lower, upper = self._free_bounds()
        params = self._params(np.clip(free_vector, lower, upper))
        self.n_evaluations += 1
        predictions = _predictions(params, self.dataset, self.options)
        return np.concatenate([(prediction.values - observation.coincidence.values).ravel()
                               for prediction, observation in zip(predictions, self.dataset.observations)])

    def loss(self, free_vector: np.ndarray) -> float:
        return float(np.sum(self.residual_vector(free_vector) ** 2))

    def _steps(self, free_vector: np.ndarray) -> np.ndarray:
        return np.maximum(self.options.relative_step * np.abs(free_vector), self.options.absolute_step)

    def gradient(self, free_vector: np.ndarray) -> np.ndarray:
        steps = self._steps(free_vector)
        grad = np.zeros_like(free_vector)
        for i, step in enumerate(steps):
            shift = np.zeros_like(free_vector)
            shift[i] = step
            grad[i] = (self.loss(free_vector + shift) - self.loss(free_vector - shift)) / (2 * step)
        return grad

    def hessian(self, free_vector: np.ndarray) -> np.ndarray:
        """Central-difference Hessian of the loss; stencils are moved inside finite bounds."""
        steps = self._steps(free_vector)
        lower, upper = self._free_bounds()
        center = np.clip(free_vector, lower + 2 * steps, upper - 2 * steps)
        p = len(center)
        base = self.loss(center)
        hess = np.zeros((p, p))
        for i in range(p):
            e_i = np.zeros(p)
            e_i[i] = steps[i]
            hess[i, i] = (self.loss(center + e_i) - 2 * base + self.loss(center - e_i)) / steps[i] ** 2
            for j in range(i):
                e_j = np.zeros(p)
                e_j[j] = steps[j]
                value = (self.loss(center + e_i + e_j) - self.loss(center + e_i - e_j)
                         - self.loss(center - e_i + e_j) + self.loss(center - e_i - e_j)) / (4 * steps[i] * steps[j])
                hess[i, j] = hess[j, i] = value
        return hess

    def _start_points(self, init_vector: np.ndarray) -> List[np.ndarray]:
        rng = np.random.default_rng(self.options.seed)
        names = [self._template.names()[index] for index in self._free]
        lower, upper = self._free_bounds()
        starts = [init_vector.copy()]
        for start in range(1, self.options.n_starts):
            point = init_vector * (1.0 + 0.05 * rng.standard_normal(len(init_vector)))
            if 'alpha' in names:
                alpha_index = names.index('alpha')
                point[alpha_index] = init_vector[alpha_index] + 2 * np.pi * start / self.options.n_starts
            starts.append(np.clip(point, lower, upper))
        return starts

    def _minimize(self, start: np.ndarray) -> Tuple[np.ndarray, float, bool, str]:
        lower, upper = self._free_bounds()
        options = self.options
        if options.method == 'least-squares':
            result = least_squares(self.residual_vector, start, bounds=(lower, upper), jac='3-point',
                                   x_scale='jac', xtol=options.tolerance, ftol=options.tolerance,
                                   gtol=options.tolerance, max_nfev=options.max_evaluations)
            return result.x, float(2 * result.cost), bool(result.success), str(result.message)
        bounds = list(zip(np.where(np.isfinite(lower), lower, None), np.where(np.isfinite(upper), upper, None)))
        if options.method == 'l-bfgs-b':
            result = minimize(self.loss, start, jac=self.gradient, method='L-BFGS-B', bounds=bounds,
                              options={'maxfun': options.max_evaluations, 'ftol': options.tolerance,
                                       'gtol': options.tolerance})
        else:
            result = minimize(self.loss, start, method='Nelder-Mead', bounds=bounds,
                              options={'maxfev': options.max_evaluations, 'xatol': options.tolerance,
                                       'fatol': options.tolerance, 'adaptive': True})
        return result.x, float(result.fun), bool(result.success), str(result.message)

    def fit(self, init: FitParams) -> FitResult:
        self._configure(init)
        self.n_evaluations = 0
        init_vector = init.to_vector()[self._free]
        best = None
        for index, start in enumerate(self._start_points(init_vector)):
            vector, loss, converged, message = self._minimize(start)
            logging.info(f"Start {index + 1}/{self.options.n_starts}: loss={loss:.6e}, converged={converged}")
            if best is None or loss < best[1]:
                best = (vector, loss, converged, message)
        vector, loss, converged, message = best
        lower, upper = self._free_bounds()
        params = self._params(np.clip(vector, lower, upper))
        if not converged:
            logging.warning(f"Fit did not converge ({message}); reporting the best point found")
        free_names = [init.names()[index] for index in self._free]
        result = FitResult(params=params, std_errors={name: 0.0 for name in init.names()}, loss=loss,
                           covariance=np.zeros((len(self._free), len(self._free))), residual_maps=[],
                           converged=converged, n_evaluations=self.n_evaluations, free_names=free_names,
                           message=message)
        result.residual_maps = self.residuals(result).residual_maps
        return result

    def errors(self, result: FitResult) -> Dict[str, float]:
        """Two-standard-deviation errors from the numerical Hessian of the loss.

        r is a sum of squares, so the covariance is 2 s^2 h^-1 with
        s^2 = r / (N - p); N counts every bin of every laser-on map.
        """
        self._configure(replace(result.params))
        free_vector = result.params.to_vector()[self._free]
        p = len(free_vector)
        n_points = self.dataset.n_points
        if n_points <= p:
            raise InvalidArgumentError(f"{n_points} data points cannot constrain {p} parameters")
        loss = self.loss(free_vector)
        s_squared = loss / (n_points - p)
        hess = self.hessian(free_vector)
        hess = 0.5 * (hess + hess.T)
        eigenvalues = linalg.eigvalsh(hess)
        singular = bool(eigenvalues[0] <= 1e-12 * max(abs(eigenvalues[-1]), 1e-300))
        if singular:
            logging.warning(f"Hessian is singular or indefinite (smallest eigenvalue {eigenvalues[0]:.3e}); using pseudo-inverse")
            inverse = linalg.pinvh(hess)
        else:
            inverse = linalg.inv(hess)
        covariance = 2.0 * s_squared * 0.5 * (inverse + inverse.T)
        deviations = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
        names = result.params.names()
        std_errors = {name: 0.0 for name in names}
        for index, deviation in zip(self._free, deviations):
            std_errors[names[index]] = float(2.0 * deviation)
        result.std_errors = std_errors
        result.covariance = covariance
        result.hessian_singular = singular
        logging.info(f"s^2={s_squared:.3e}; errors: {std_errors}")
        return std_errors

    def residuals(self, result: FitResult) -> ResidualReport:
        params = result.params
        fitted = _predictions(params, self.dataset, self.options)
        separable = _predictions(replace(params, f=0.0), self.dataset, self.options)
        entangled = _predictions(replace(params, f=1.0), self.dataset, self.options)
        grid = self.dataset.reference.grid
        residual_maps, subtraction_maps = [], []
        for observation, prediction, separable_map in zip(self.dataset.observations, fitted, separable):
            observed = observation.coincidence.values
            residual_maps.append(CoincidenceMap(grid, observed - prediction.values))
            subtraction_maps.append(CoincidenceMap(grid, observed - SEPARABLE_SUBTRACTION * separable_map.values))
        return ResidualReport(residual_maps=residual_maps, subtraction_maps=subtraction_maps, entangled_maps=entangled)


def fit(dataset: Dataset, init: FitParams, options: Optional[FitOptions] = None) -> FitResult:
    return TomographyFitter(dataset, options).fit(init)


def errors(result: FitResult, dataset: Dataset, options: Optional[FitOptions] = None) -> Dict[str, float]:
    return TomographyFitter(dataset, options).errors(result)


def residuals(result: FitResult, dataset: Dataset, options: Optional[FitOptions] = None) -> ResidualReport:
    return TomographyFitter(dataset, options).residuals(result)


def compare_nested(dataset: Dataset, init: FitParams, options: Optional[FitOptions] = None,
                   free: Optional[FitResult] = None) -> Tuple[FitResult, FitResult]:
    """Fit with free f and with f frozen at zero (separable-only) from the same start.

    An already computed free fit can be passed in as ``free``; only the f=0 fit is then run.
    """
    options = options or FitOptions()
    if free is None:
        free = fit(dataset, init, options)
    separable_options = replace(options, frozen=tuple(sorted(set(options.frozen) | {'f'})))
    separable = fit(dataset, replace(init, f=0.0), separable_options)
    logging.info(f"Loss with free f: {free.loss:.6e}; with f=0: {separable.loss:.6e}")
    return free, separable
