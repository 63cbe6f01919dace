"""
Closed-system propagators implementation

Free Schrodinger evolution, the separability Schrodinger equation (SSE) on
product states and the closed-form reference solutions of the battery and
swap models.
"""
import logging
import math
import sys
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from tensor_core import (
    SIGMA_X,
    DensityMatrix,
    OperatorMatrix,
    ProductState,
    SubsystemLayout,
    batched_reduced_operator,
    expectation,
    partial_trace,
    reduced_operator,
)
from utils.helpers import (
    AnalyticRangeError,
    ConfigError,
    DimensionMismatchError,
    NonHermitianError,
    batched_expm,
    check_finite,
)

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger(__name__)

# Local generators of a product-state step: per-subsystem (batch, d, d)
# blocks plus a (batch,) scalar multiplying the identity.
GeneratorFn = Callable[[List[np.ndarray]], Tuple[List[np.ndarray], np.ndarray]]

BATTERY_KAPPA_DRIFT_TOL = 1e-6


@dataclass(frozen=True)
class SseStepConfig:
    """
    Step configuration of the SSE integrator.

    The scheme is the two-stage exponential midpoint rule: freeze the
    reduced generators at t, move half a step, rebuild them at the midpoint
    and advance the original state by a full step.
    """
    dt: float
    output_stride: int = 1
    scheme: str = 'midpoint'

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if int(self.output_stride) < 1:
            raise ConfigError(f"output_stride must be >= 1, got {self.output_stride}")
        if self.scheme != 'midpoint':
            raise ConfigError(f"Unsupported SSE scheme: {self.scheme}")


@dataclass
class StateSeries:
    """Sampled product-state trajectory."""
    times: np.ndarray
    states: List[ProductState]

    def to_frame(self, observables: Dict[str, OperatorMatrix]) -> pd.DataFrame:
        """Normalized expectation values of the observables at every sample."""
        rows = []
        for t, state in zip(self.times, self.states):
            row = {'t': float(t)}
            for name, op in observables.items():
                row[name] = expectation(op, state).real
            rows.append(row)
        return pd.DataFrame(rows)


def step_grid(t_end: float, dt: float) -> Tuple[int, float]:
    """Number of uniform steps covering [0, t_end] and the step actually used."""
    if t_end < 0:
        raise ValueError(f"t_end must be non-negative, got {t_end}")
    if t_end == 0:
        return 0, dt
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    return n_steps, t_end / n_steps


def output_indices(n_steps: int, stride: int) -> List[int]:
    indices = list(range(0, n_steps + 1, stride))
    if indices[-1] != n_steps:
        indices.append(n_steps)
    return indices


def schrodinger_propagate(hamiltonian: OperatorMatrix, psi0: np.ndarray, t: float) -> np.ndarray:
    """
    Exact free evolution exp(-iHt) psi0 through the eigendecomposition of H.

    Raises:
        NonHermitianError: H is not Hermitian
    """
    return schrodinger_series(hamiltonian, psi0, np.array([t]))[0]


def schrodinger_series(hamiltonian: OperatorMatrix, psi0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Exact free evolution sampled at several times, shape (len(times), D)."""
    if not hamiltonian.is_hermitian():
        raise NonHermitianError("Schrodinger propagation requires a Hermitian Hamiltonian")
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (hamiltonian.layout.total_dim,):
        raise DimensionMismatchError(f"Initial vector of shape {psi0.shape} does not match H")
    energies, vectors = np.linalg.eigh(hamiltonian.entries)
    amplitudes = vectors.conj().T @ psi0
    phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), energies))
    return (phases * amplitudes[None, :]) @ vectors.T


def sse_rhs(hamiltonian: OperatorMatrix, state: ProductState) -> List[np.ndarray]:
    """d|psi_k>/dt = -i (H)_k |psi_k> for every subsystem k."""
    return [-1j * reduced_operator(hamiltonian, state, k) @ state.locals[k]
            for k in range(state.layout.n_subsystems)]


def hamiltonian_generators(hamiltonian: OperatorMatrix) -> GeneratorFn:
    """Reduced Hamiltonians (H)_k as the generators of a product-state step."""
    layout = hamiltonian.layout
    entries = hamiltonian.entries

    def generators(locals_batch: List[np.ndarray]) -> Tuple[List[np.ndarray], np.ndarray]:
        blocks = [batched_reduced_operator(entries, layout, locals_batch, k)
                  for k in range(layout.n_subsystems)]
        return blocks, np.zeros(locals_batch[0].shape[0], dtype=complex)

    return generators


def _apply_generators(locals_batch: List[np.ndarray], blocks: List[np.ndarray],
                      scalar: np.ndarray, duration: float) -> List[np.ndarray]:
    evolved = []
    for vectors, block in zip(locals_batch, blocks):
        propagator = batched_expm(-1j * duration * block)
        evolved.append(np.einsum('jab,jb->ja', propagator, vectors))
    # the identity part of the effective Hamiltonian rescales the global amplitude
    evolved[0] = evolved[0] * np.exp(-1j * duration * scalar)[:, None]
    return evolved


def midpoint_product_step(generators: GeneratorFn, locals_batch: List[np.ndarray], dt: float) -> List[np.ndarray]:
    """
    One exponential-midpoint step of a batch of product states.

    The effective Hamiltonian c*1 + sum_d 1 (x) G_d (x) 1 is a sum of commuting
    local terms, so its exponential factorizes and the step stays exactly
    in product form.
    """
    blocks, scalar = generators(locals_batch)
    half = _apply_generators(locals_batch, blocks, scalar, dt / 2)
    mid_blocks, mid_scalar = generators(half)
    return _apply_generators(locals_batch, mid_blocks, mid_scalar, dt)


def normalize_locals(locals_batch: List[np.ndarray]) -> List[np.ndarray]:
    return [v / np.linalg.norm(v, axis=1)[:, None] for v in locals_batch]


def sse_propagate(hamiltonian: OperatorMatrix, state0: ProductState, t_end: float,
                  cfg: SseStepConfig) -> StateSeries:
    """
    Integrate the separability Schrodinger equation.

    Args:
        hamiltonian (OperatorMatrix): Hermitian, time-independent H
        state0 (ProductState): Initial product state
        t_end (float): Final time
        cfg (SseStepConfig): Step size and output stride

    Returns:
        StateSeries: Product states on the output grid; the step is shrunk so
        that an integer number of steps ends exactly at t_end
    """
    if not hamiltonian.is_hermitian():
        raise NonHermitianError("sse_propagate requires a Hermitian Hamiltonian")
    n_steps, dt = step_grid(t_end, cfg.dt)
    keep = set(output_indices(n_steps, int(cfg.output_stride)))
    generators = hamiltonian_generators(hamiltonian)
    layout = state0.layout

    locals_batch = normalize_locals([v[None, :] for v in state0.locals])
    times = [0.0]
    states = [ProductState(tuple(v[0] for v in locals_batch), layout)]
    for step in range(1, n_steps + 1):
        locals_batch = normalize_locals(midpoint_product_step(generators, locals_batch, dt))
        for vectors in locals_batch:
            check_finite(vectors, f"sse_propagate at step {step}")
        if step in keep:
            times.append(step * dt)
            states.append(ProductState(tuple(v[0] for v in locals_batch), layout))
    return StateSeries(np.array(times), states)


def analytic_battery(kappa: float, t: float, mode: str,
                     initial_locals: Sequence[np.ndarray], verify: bool = True):
    """
    Closed-form battery state under H_D = kappa sigma^x (x) sigma^x.

    Args:
        kappa (float): Drive strength
        t (float): Time
        mode (str): 'free' returns the full vector, 'constrained' a ProductState
        initial_locals: Local states of the two qubits
        verify (bool): For the constrained mode, propagate the SSE and refuse
            the closed form if kappa_k(t) drifts from kappa_k(0)

    Raises:
        AnalyticRangeError: the local couplings are not conserved
    """
    if len(initial_locals) != 2:
        raise DimensionMismatchError("The battery is a two-qubit model")
    state0 = ProductState(tuple(initial_locals)).normalized()
    if mode == 'free':
        psi0 = state0.full_vector()
        flip = np.kron(SIGMA_X, SIGMA_X)
        return math.cos(kappa * t) * psi0 - 1j * math.sin(kappa * t) * (flip @ psi0)
    if mode != 'constrained':
        raise ValueError(f"Unknown battery mode: {mode}")

    psi_a, psi_b = state0.locals
    kappa_a = kappa * np.vdot(psi_a, SIGMA_X @ psi_a).real
    kappa_b = kappa * np.vdot(psi_b, SIGMA_X @ psi_b).real
    if verify and t > 0:
        _verify_battery_couplings(kappa, t, state0, (kappa_a, kappa_b))
    local_a = math.cos(kappa_b * t) * psi_a - 1j * math.sin(kappa_b * t) * (SIGMA_X @ psi_a)
    local_b = math.cos(kappa_a * t) * psi_b - 1j * math.sin(kappa_a * t) * (SIGMA_X @ psi_b)
    return ProductState((local_a, local_b))


def _verify_battery_couplings(kappa: float, t: float, state0: ProductState,
                              initial: Tuple[float, float]) -> None:
    drive = OperatorMatrix(kappa * np.kron(SIGMA_X, SIGMA_X), SubsystemLayout.qubits(2), True)
    dt = min(1e-2 / max(abs(kappa), 1e-12), t / 10)
    series = sse_propagate(drive, state0, t, SseStepConfig(dt=dt))
    for time, state in zip(series.times, series.states):
        for k, kappa_k0 in enumerate(initial):
            local = state.locals[k]
            kappa_k = kappa * np.vdot(local, SIGMA_X @ local).real
            if abs(kappa_k - kappa_k0) > BATTERY_KAPPA_DRIFT_TOL:
                raise AnalyticRangeError(
                    f"kappa_{k} drifts from {kappa_k0:.6g} to {kappa_k:.6g} at t={time:.4g}; "
                    "closed-form battery solution not valid")


def analytic_swap_constrained(psi_a: np.ndarray, psi_b: np.ndarray, kappa: float, t: float,
                              overlap_floor: float = 1e-15) -> ProductState:
    """
    Closed-form SSE solution for H = kappa V (V the swap).

    Both locals rotate inside span{psi_A, psi_B} at frequency |q| kappa with
    q = <psi_A|psi_B>; orthogonal inputs are stationary.
    """
    state = ProductState((psi_a, psi_b)).normalized()
    psi_a, psi_b = state.locals
    q = np.vdot(psi_a, psi_b)
    if abs(q) < overlap_floor:
        return state
    phase = q / abs(q)
    angle = abs(q) * kappa * t
    local_a = math.cos(angle) * psi_a - 1j * np.conj(phase) * math.sin(angle) * psi_b
    local_b = math.cos(angle) * psi_b - 1j * phase * math.sin(angle) * psi_a
    return ProductState((local_a, local_b))


def analytic_swap_free_reduced(psi_a: np.ndarray, rho_b: np.ndarray, kappa: float, t: float) -> DensityMatrix:
    """
    Reduced state of A under H = kappa V from psi_A (x) rho_B.

    rho_A(t) = cos^2 |psi_A><psi_A| + i cos sin Tr_B[rho_0, V] + sin^2 rho_B
    """
    psi_a = np.asarray(psi_a, dtype=complex)
    psi_a = psi_a / np.linalg.norm(psi_a)
    rho_b = np.asarray(rho_b, dtype=complex)
    dim = psi_a.shape[0]
    layout = SubsystemLayout((dim, dim))
    swap = swap_matrix(dim)
    rho0 = np.kron(np.outer(psi_a, psi_a.conj()), rho_b)
    commutator = partial_trace(DensityMatrix(rho0 @ swap - swap @ rho0, layout), [0]).entries
    c, s = math.cos(kappa * t), math.sin(kappa * t)
    entries = c * c * np.outer(psi_a, psi_a.conj()) + 1j * c * s * commutator + s * s * rho_b
    return DensityMatrix(entries, SubsystemLayout((dim,)))


def swap_matrix(dim: int) -> np.ndarray:
    """V |a b> = |b a> on C^dim (x) C^dim."""
    swap = np.zeros((dim * dim, dim * dim), dtype=complex)
    for a in range(dim):
        for b in range(dim):
            swap[b * dim + a, a * dim + b] = 1.0
    return swap


def unitary_density_series(hamiltonian: OperatorMatrix, rho0: DensityMatrix, times: np.ndarray) -> List[DensityMatrix]:
    """Exact rho(t) = U rho0 U^dag for a Hermitian H, one matrix per time."""
    if not hamiltonian.is_hermitian():
        raise NonHermitianError("Unitary propagation requires a Hermitian Hamiltonian")
    energies, vectors = np.linalg.eigh(hamiltonian.entries)
    in_basis = vectors.conj().T @ rho0.entries @ vectors
    states = []
    for t in np.asarray(times, dtype=float):
        phases = np.exp(-1j * energies * t)
        evolved = (phases[:, None] * in_basis) * phases.conj()[None, :]
        rho = vectors @ evolved @ vectors.conj().T
        states.append(DensityMatrix(0.5 * (rho + rho.conj().T), rho0.layout))
    return states
