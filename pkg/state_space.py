# Phases take energies in photon units relative to the zero-loss peak.
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from energy_grid import CoincidenceMap, PairWavefunction
from exceptions import InvalidArgumentError
from quantum_walk import DEFAULT_EPS, Coupling, coincidence_pure, coincidence_separable

DEFAULT_TRUNCATION = 3
LAMBDA_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PhaseParams:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    g_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if not all(np.isfinite(value) for value in (self.alpha, self.beta, self.gamma)):
            raise InvalidArgumentError(f"Phase parameters must be finite: {self.alpha}, {self.beta}, {self.gamma}")


@dataclass(frozen=True)
class EntanglementModel:
    f: float
    diag: CoincidenceMap
    phase: PhaseParams = field(default_factory=PhaseParams)

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise InvalidArgumentError(f"Entanglement fraction must lie in [0, 1], got {self.f}")
        if abs(self.diag.mass() - 1.0) > 1e-6:
            raise InvalidArgumentError(f"Diagonal map must be normalized, mass is {self.diag.mass():.12g}")


@dataclass(frozen=True)
class SchmidtDecomposition:
    """psi(E1, E2) = sum_n sqrt(lambda_n) modes_a[n](E1) modes_b[n](E2).

    Modes are orthonormal under the grid measure (sum |mode|^2 delta = 1).
    ``discarded_weight`` is the coefficient mass removed by truncation.
    """
    coefficients: np.ndarray
    modes_a: np.ndarray
    modes_b: np.ndarray
    delta: float
    discarded_weight: float = 0.0

    @property
    def rank(self) -> int:
        return len(self.coefficients)

    def reconstruct(self) -> np.ndarray:
        return np.einsum('n,ni,nj->ij', np.sqrt(self.coefficients), self.modes_a, self.modes_b)


def phase_at(p: PhaseParams, e1, e2):
    """phi = (E1 - E2)(alpha + beta E1/2 + gamma E2/2) + G(E1 + E2), energies in photon units."""
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    phase = (e1 - e2) * (p.alpha + 0.5 * p.beta * e1 + 0.5 * p.gamma * e2)
    if p.g_fn is not None:
        phase = phase + np.asarray(p.g_fn(e1 + e2), dtype=float)
    if phase.ndim == 0:
        return float(phase)
    return phase


def build_entangled(diag: CoincidenceMap, p: PhaseParams) -> PairWavefunction:
    if not diag.is_nonnegative:
        raise InvalidArgumentError("The diagonal map must be nonnegative")
    units = diag.grid.in_photon_units()
    e1, e2 = np.meshgrid(units, units, indexing='ij')
    amplitudes = np.sqrt(diag.values) * np.exp(1j * phase_at(p, e1, e2))
    return PairWavefunction(diag.grid, amplitudes)


def blend(model: EntanglementModel, g: Coupling, eps: float = DEFAULT_EPS) -> CoincidenceMap:
    """Laser-modulated map of f |psi><psi| + (1 - f) rho_sep (rho_sep shares psi's diagonal)."""
    if model.f == 0:
        return coincidence_separable(model.diag, g, eps)
    entangled = coincidence_pure(build_entangled(model.diag, model.phase), g, eps)
    if model.f == 1:
        return entangled
    separable = coincidence_separable(model.diag, g, eps)
    values = model.f * entangled.values + (1.0 - model.f) * separable.values
    return CoincidenceMap(model.diag.grid, values)


def schmidt(psi: PairWavefunction, rank_cutoff: Union[int, float] = DEFAULT_TRUNCATION) -> SchmidtDecomposition:
    """Schmidt decomposition by SVD of the amplitude table.

    An integer ``rank_cutoff`` keeps that many pairs; a float keeps every pair
    with coefficient above it. Kept coefficients are renormalized to sum to one.
    """
    if isinstance(rank_cutoff, (int, np.integer)) and not isinstance(rank_cutoff, bool):
        if rank_cutoff < 1:
            raise InvalidArgumentError(f"rank_cutoff must be at least 1, got {rank_cutoff}")
    elif not rank_cutoff >= 0:
        raise InvalidArgumentError(f"Coefficient tolerance must be nonnegative, got {rank_cutoff}")

    delta = psi.grid.delta
    u, singular, vh = linalg.svd(np.asarray(psi.amplitudes), full_matrices=False)
    lambdas = (singular * delta) ** 2
    total = float(np.sum(lambdas))
    if isinstance(rank_cutoff, (int, np.integer)):
        keep = min(int(rank_cutoff), len(lambdas))
    else:
        keep = max(1, int(np.sum(lambdas / total > rank_cutoff)))
    kept = lambdas[:keep]
    discarded = float(1.0 - np.sum(kept) / total)
    modes_a = u[:, :keep].T / np.sqrt(delta)
    modes_b = vh[:keep, :] / np.sqrt(delta)
    logging.debug(f"Schmidt coefficients: {np.round(kept / np.sum(kept), 4)}, discarded {discarded:.2e}")
    return SchmidtDecomposition(coefficients=kept / np.sum(kept), modes_a=modes_a, modes_b=modes_b,
                                delta=delta, discarded_weight=discarded)


def _truncated_lambdas(lambdas: Sequence[float], truncation: int) -> np.ndarray:
    if truncation < 1:
        raise InvalidArgumentError(f"truncation must be at least 1, got {truncation}")
    values = np.asarray(lambdas, dtype=float)
    if values.ndim != 1 or values.size == 0 or not np.all(np.isfinite(values)):
        raise InvalidArgumentError("Schmidt coefficients must be a nonempty list of finite numbers")
    if np.any(values < 0):
        raise InvalidArgumentError("Schmidt coefficients must be nonnegative")
    kept = values[:truncation]
    total = np.sum(kept)
    if total <= 0:
        raise InvalidArgumentError("Truncated Schmidt coefficients sum to zero")
    kept = kept / total
    if abs(np.sum(kept) - 1.0) > LAMBDA_SUM_TOLERANCE:
        raise InvalidArgumentError(f"Schmidt coefficients sum to {np.sum(kept):.9g} after renormalization")
    return kept


def _check_fraction(f: float) -> None:
    if not 0.0 <= f <= 1.0:
        raise InvalidArgumentError(f"Entanglement fraction must lie in [0, 1], got {f}")


def negativity(f: float, lambdas: Sequence[float], truncation: int = DEFAULT_TRUNCATION) -> float:
    """Closed form f * sum_{m>n} sqrt(lambda_m lambda_n) in the Schmidt basis."""
    _check_fraction(f)
    kept = _truncated_lambdas(lambdas, truncation)
    roots = np.sqrt(kept)
    # sum over unordered pairs = ((sum sqrt)^2 - sum lambda) / 2
    return float(f * 0.5 * (np.sum(roots) ** 2 - np.sum(kept)))


def density_matrix(f: float, lambdas: Sequence[float], truncation: int = DEFAULT_TRUNCATION) -> np.ndarray:
    """rho = f |psi><psi| + (1 - f) sum_n lambda_n |n,n><n,n| on the truncated Schmidt basis."""
    _check_fraction(f)
    kept = _truncated_lambdas(lambdas, truncation)
    d = len(kept)
    psi = np.zeros(d * d)
    psi[np.arange(d) * (d + 1)] = np.sqrt(kept)
    rho = f * np.outer(psi, psi)
    rho[np.arange(d) * (d + 1), np.arange(d) * (d + 1)] += (1.0 - f) * kept
    return rho


def partial_transpose(rho: np.ndarray, dim_a: int, dim_b: int) -> np.ndarray:
    """Transpose subsystem A of a (dim_a*dim_b)^2 density matrix."""
    tensor = rho.reshape(dim_a, dim_b, dim_a, dim_b)
    return tensor.transpose(2, 1, 0, 3).reshape(dim_a * dim_b, dim_a * dim_b)


def negativity_bruteforce(f: float, lambdas: Sequence[float], truncation: int = DEFAULT_TRUNCATION) -> float:
    """Sum of |negative eigenvalues| of the partially transposed dense density matrix."""
    if truncation > 8:
        raise InvalidArgumentError(f"Brute-force negativity supports truncation <= 8, got {truncation}")
    rho = density_matrix(f, lambdas, truncation)
    d = int(round(np.sqrt(rho.shape[0])))
    eigenvalues = linalg.eigvalsh(partial_transpose(rho, d, d))
    return float(-np.sum(eigenvalues[eigenvalues < 0]))


def negativity_of_state(f: float, psi: PairWavefunction, truncation: int = DEFAULT_TRUNCATION) -> float:
    decomposition = schmidt(psi, rank_cutoff=truncation)
    value = negativity(f, decomposition.coefficients, truncation)
    logging.info(f"Negativity {value:.4f} from Schmidt coefficients {np.round(decomposition.coefficients, 4)}")
    return value


def local_phase(psi: PairWavefunction, theta_a: np.ndarray, theta_b: np.ndarray) -> PairWavefunction:
    """Apply exp(i theta_a(E1)) exp(i theta_b(E2)), a local unitary on each electron."""
    factor = np.exp(1j * np.asarray(theta_a))[:, None] * np.exp(1j * np.asarray(theta_b))[None, :]
    return PairWavefunction(psi.grid, np.asarray(psi.amplitudes) * factor)
