"""
Thermodynamic bookkeeping implementation

Energy, heat, work, entropies and entropy production along free and
constrained evolutions. All quantities use hbar = k_B = 1.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import integrate

from open_dynamics import LindbladModel, ProductKernel, lindblad_rhs
from tensor_core import DensityMatrix, OperatorMatrix, ProductState, expectation
from utils.helpers import DimensionMismatchError, NonProductStateError, hermitian_part

logger = logging.getLogger(__name__)

EIGENVALUE_FLOOR = 1e-14
SUPPORT_TOL = 1e-10
PLATEAU_WINDOW = 0.2
PLATEAU_RATE_TOL = 1e-3

RECORD_COLUMNS = ['t', 'energy', 'heat', 'heat_rate', 'work_rate', 'entropy', 'relative_entropy',
                  'entropy_production', 'second_law', 'time_averaged_heat']

StateLike = Union[DensityMatrix, ProductState, np.ndarray]


def internal_energy(state: StateLike, hamiltonian: OperatorMatrix) -> float:
    """E = Tr(rho H), or <psi|H|psi>/<psi|psi> for pure states."""
    return float(expectation(hamiltonian, state).real)


def heat_flow(model: LindbladModel, state: StateLike, mode: str = 'free',
              energy_operator: Optional[OperatorMatrix] = None) -> float:
    """
    Instantaneous heat flow.

    Free mode evaluates Tr(L(rho) E) with the full Lindblad generator, which
    equals sum_k Tr(D_k(rho) H) for the unshifted model and is invariant
    under the lambda shift. Constrained mode evaluates Tr(L^_ms(rho_ms) E)
    with the trace-preserving separability generator of the model as given.

    Args:
        model (LindbladModel): Generator
        state: Density matrix (free) or product state (constrained)
        mode (str): 'free' or 'constrained'
        energy_operator (OperatorMatrix): Defaults to the unshifted Hamiltonian

    Returns:
        float: dQ/dt
    """
    energy = energy_operator or model.unshifted().hamiltonian
    if mode == 'free':
        if isinstance(state, ProductState):
            state = state.density_matrix()
        elif not isinstance(state, DensityMatrix):
            state = DensityMatrix.from_pure(np.asarray(state, dtype=complex), model.layout)
        return float(np.trace(lindblad_rhs(model, state) @ energy.entries).real)
    if mode != 'constrained':
        raise ValueError(f"Unknown heat-flow mode: {mode}")
    if not isinstance(state, ProductState):
        raise NonProductStateError("Constrained heat flow is defined on product states only")
    locals_batch = [v[None, :] for v in state.locals]
    return float(ProductKernel(model).heat_rate(locals_batch, energy.entries)[0])


def accumulated_heat(states: Sequence[StateLike], hamiltonian: OperatorMatrix) -> np.ndarray:
    """Q(t) = Tr((rho(t) - rho_0) H) for a time-independent H."""
    energies = np.array([internal_energy(s, hamiltonian) for s in states])
    return energies - energies[0]


def integrated_heat(times: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Trapezoidal integral of a heat-flow series, starting at 0."""
    return integrate.cumulative_trapezoid(np.asarray(rates, dtype=float), np.asarray(times, dtype=float),
                                          initial=0.0)


def work_rate(rho: StateLike, dh_dt: OperatorMatrix) -> float:
    """dW/dt = Tr(rho dH/dt)."""
    return float(expectation(dh_dt, rho).real)


def _spectrum(rho: DensityMatrix) -> np.ndarray:
    return np.linalg.eigvalsh(hermitian_part(rho.entries))


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """S = -Tr(rho ln rho); eigenvalues below 1e-14 count as zero."""
    eigenvalues = _spectrum(rho)
    eigenvalues = eigenvalues[eigenvalues > EIGENVALUE_FLOOR]
    return float(max(-np.sum(eigenvalues * np.log(eigenvalues)), 0.0))


def relative_entropy(rho: DensityMatrix, reference: DensityMatrix) -> float:
    """
    S(rho || reference) = Tr(rho ln rho) - Tr(rho ln reference).

    Returns:
        float: Non-negative value, or +inf when rho carries weight > 1e-10
        outside the support of the reference
    """
    if rho.layout.dims != reference.layout.dims:
        raise DimensionMismatchError("Relative entropy needs states on the same layout")
    ref_values, ref_vectors = np.linalg.eigh(hermitian_part(reference.entries))
    in_basis = ref_vectors.conj().T @ hermitian_part(rho.entries) @ ref_vectors
    weights = np.diag(in_basis).real
    support = ref_values > EIGENVALUE_FLOOR
    if np.sum(weights[~support]) > SUPPORT_TOL:
        return math.inf
    cross = float(np.sum(weights[support] * np.log(ref_values[support])))
    return max(-von_neumann_entropy(rho) - cross, 0.0)


def entropy_production_rate(times: np.ndarray, states: Sequence[DensityMatrix],
                            reference: DensityMatrix) -> np.ndarray:
    """
    sigma(t) = -d/dt S(rho(t) || reference) by centered differences
    (one-sided at the ends). Non-finite relative entropies give NaN.
    """
    distances = np.array([relative_entropy(rho, reference) for rho in states])
    if len(distances) < 2:
        return np.full(len(distances), np.nan)
    distances = np.where(np.isfinite(distances), distances, np.nan)
    return -np.gradient(distances, np.asarray(times, dtype=float))


def second_law_residual(times: np.ndarray, entropy: np.ndarray, heat: np.ndarray, beta: float) -> np.ndarray:
    """dS/dt - beta dQ/dt for a single bath at inverse temperature beta."""
    times = np.asarray(times, dtype=float)
    return np.gradient(np.asarray(entropy, dtype=float), times) - beta * np.gradient(np.asarray(heat, dtype=float), times)


def time_average(times: np.ndarray, series: np.ndarray) -> np.ndarray:
    """Running mean (1/t) int_0^t Q dt' (trapezoid); equals Q(0) at t = 0."""
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    cumulative = integrate.cumulative_trapezoid(series, times, initial=0.0)
    elapsed = times - times[0]
    result = np.empty_like(series)
    result[0] = series[0]
    result[1:] = cumulative[1:] / elapsed[1:]
    return result


def gibbs_state(hamiltonian: OperatorMatrix, beta: float) -> DensityMatrix:
    """gamma = exp(-beta H) / Z."""
    energies, vectors = np.linalg.eigh(hamiltonian.require_hermitian('Gibbs Hamiltonian').entries)
    weights = np.exp(-beta * (energies - energies.min()))
    weights /= weights.sum()
    return DensityMatrix((vectors * weights) @ vectors.conj().T, hamiltonian.layout)


def thermal_qubit(omega: float, temperature: float) -> np.ndarray:
    """tau = (|0><0| + e^{-omega/T} |1><1|) / (1 + e^{-omega/T})."""
    boltzmann = math.exp(-omega / temperature)
    return np.diag([1.0, boltzmann]).astype(complex) / (1.0 + boltzmann)


def estimate_constrained_steady_state(times: np.ndarray, densities: Sequence[np.ndarray],
                                      layout, window: float = PLATEAU_WINDOW,
                                      rate_tol: float = PLATEAU_RATE_TOL) -> Optional[DensityMatrix]:
    """
    Long-time estimate of the constrained steady state.

    The populations over the final window of the horizon are fitted with a
    straight line; if every relative slope stays below rate_tol per unit
    time the window average is returned, otherwise None (no plateau).
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 3 or times[-1] <= times[0]:
        return None
    start = times[-1] - window * (times[-1] - times[0])
    selected = np.flatnonzero(times >= start)
    if len(selected) < 3:
        return None
    stack = np.array([densities[i] for i in selected])
    populations = np.real(np.diagonal(stack, axis1=1, axis2=2))
    slopes = np.polyfit(times[selected], populations, 1)[0]
    scale = np.maximum(np.abs(populations.mean(axis=0)), 1e-12)
    if np.max(np.abs(slopes) / scale) >= rate_tol:
        logger.warning("No plateau in the final window; constrained steady state undefined")
        return None
    return DensityMatrix(hermitian_part(stack.mean(axis=0)), layout)


@dataclass
class ThermoRecord:
    """Thermodynamic time series of one run channel."""
    frame: pd.DataFrame
    mode: str

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy()


class ThermoAnalyzer:
    def __init__(self, energy_operator: OperatorMatrix, beta: Optional[float] = None,
                 hamiltonian_rate: Optional[OperatorMatrix] = None):
        """
        Initialize the analyzer.

        Args:
            energy_operator (OperatorMatrix): Physical (unshifted) energy
            beta (float): Inverse temperature of a single bath, if any
            hamiltonian_rate (OperatorMatrix): dH/dt of a driven Hamiltonian;
                None for a time-independent H, where the work rate is zero
        """
        self.energy_operator = energy_operator
        self.beta = beta
        self.hamiltonian_rate = hamiltonian_rate
        self.logger = logging.getLogger(__name__)

    def build_record(self, times: np.ndarray, densities: Sequence[DensityMatrix], mode: str,
                     model: Optional[LindbladModel] = None,
                     reference: Optional[DensityMatrix] = None,
                     stderr: Optional[Dict[str, np.ndarray]] = None) -> ThermoRecord:
        """
        Assemble the thermodynamic channels of a run.

        Args:
            times (np.ndarray): Output grid
            densities (Sequence[DensityMatrix]): State (or ensemble mean) per time
            mode (str): 'free' or 'constrained'
            model (LindbladModel): Used for the exact free heat flow; without it
                the heat rate is the finite-difference derivative of Q
            reference (DensityMatrix): Reference state of the relative entropy
            stderr (Dict[str, np.ndarray]): Statistical errors of stochastic
                channels, stored as '<name>_stderr'

        Returns:
            ThermoRecord: Frame with the record columns
        """
        try:
            times = np.asarray(times, dtype=float)
            energy = np.array([internal_energy(rho, self.energy_operator) for rho in densities])
            heat = energy - energy[0]
            if model is not None and mode == 'free':
                heat_rate = np.array([heat_flow(model, rho, 'free', self.energy_operator) for rho in densities])
            elif len(times) > 1:
                heat_rate = np.gradient(heat, times)
            else:
                heat_rate = np.zeros_like(heat)
            entropy = np.array([von_neumann_entropy(rho) for rho in densities])
            if reference is not None:
                relative = np.array([relative_entropy(rho, reference) for rho in densities])
                production = entropy_production_rate(times, densities, reference)
            else:
                relative = np.full(len(times), np.nan)
                production = np.full(len(times), np.nan)
            if self.hamiltonian_rate is not None:
                work = np.array([work_rate(rho, self.hamiltonian_rate) for rho in densities])
            else:
                work = np.zeros(len(times))
            if self.beta is not None and len(times) > 1:
                residual = second_law_residual(times, entropy, heat, self.beta)
            else:
                residual = np.full(len(times), np.nan)
            frame = pd.DataFrame({
                't': times,
                'energy': energy,
                'heat': heat,
                'heat_rate': heat_rate,
                'work_rate': work,
                'entropy': entropy,
                'relative_entropy': relative,
                'entropy_production': production,
                'second_law': residual,
                'time_averaged_heat': time_average(times, heat) if len(times) > 1 else heat,
            })
            for name, values in (stderr or {}).items():
                frame[f"{name}_stderr"] = np.asarray(values, dtype=float)
            return ThermoRecord(frame, mode)
        except Exception as e:
            self.logger.error(f"Error building {mode} thermo record: {str(e)}")
            raise

    def second_law(self, record: ThermoRecord) -> np.ndarray:
        """Second-law residual of a single-bath record."""
        if self.beta is None:
            raise ValueError("The second-law residual needs a bath inverse temperature")
        return second_law_residual(record.column('t'), record.column('entropy'),
                                   record.column('heat'), self.beta)
