"""
Lindblad models, the dense master-equation integrator and the constrained
(separable) generator pieces evaluated on single product states
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from closed_dynamics import output_indices, step_grid
from tensor_core import (
    DensityMatrix,
    OperatorMatrix,
    ProductState,
    SubsystemLayout,
    constrained_hamiltonian,
    embed_local,
    expectation,
    reduced_operator,
    tensor_product,
)
from utils.helpers import (
    POSITIVITY_TOL,
    SANDWICH_FLOOR,
    DegenerateSandwichError,
    DimensionMismatchError,
    NonHermitianError,
    NumericalInstabilityError,
    check_finite,
)

logger = logging.getLogger(__name__)

TRACE_DRIFT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LindbladModel:
    """
    Hamiltonian, jump operators and layout of a Markovian model.

    When shift is set, hamiltonian and jumps are the shifted operators
    H + (1/2i) sum_k (l_k* L_k - l_k L_k^dag) and L_k + l_k 1; unshifted()
    recovers the original pair.
    """
    hamiltonian: OperatorMatrix
    jumps: Tuple[OperatorMatrix, ...]
    layout: SubsystemLayout
    shift: Optional[Tuple[complex, ...]] = None

    def __post_init__(self):
        jumps = tuple(self.jumps)
        for op in (self.hamiltonian,) + jumps:
            if op.layout.dims != self.layout.dims:
                raise DimensionMismatchError(
                    f"Operator layout {op.layout.dims} differs from model layout {self.layout.dims}")
        if not self.hamiltonian.is_hermitian():
            raise NonHermitianError("Model Hamiltonian must be Hermitian")
        if self.shift is not None and len(self.shift) != len(jumps):
            raise DimensionMismatchError("Shift record must have one entry per jump operator")
        object.__setattr__(self, 'jumps', jumps)

    @classmethod
    def closed(cls, hamiltonian: OperatorMatrix) -> 'LindbladModel':
        return cls(hamiltonian, (), hamiltonian.layout)

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    def unshifted(self) -> 'LindbladModel':
        if self.shift is None:
            return self
        restored = shift_operators(self, [-lam for lam in self.shift])
        return LindbladModel(restored.hamiltonian, restored.jumps, self.layout, None)

    def with_layout(self, layout: SubsystemLayout) -> 'LindbladModel':
        """Same operators read on another layout of equal total dimension."""
        if layout.total_dim != self.layout.total_dim:
            raise DimensionMismatchError("Relabelled layout must keep the total dimension")
        relabel = lambda op: OperatorMatrix(op.entries, layout, op.hermitian_flag)
        return LindbladModel(relabel(self.hamiltonian), tuple(relabel(op) for op in self.jumps),
                             layout, self.shift)


def shift_operators(model: LindbladModel, lambdas: Sequence[complex]) -> LindbladModel:
    """
    Inhomogeneous transformation leaving the Lindblad generator invariant.

    H -> H + (1/2i) sum_k (l_k* L_k - l_k L_k^dag),  L_k -> L_k + l_k 1
    """
    lambdas = [complex(lam) for lam in lambdas]
    if len(lambdas) != model.n_jumps:
        raise DimensionMismatchError(f"Expected {model.n_jumps} shifts, got {len(lambdas)}")
    dim = model.layout.total_dim
    correction = np.zeros((dim, dim), dtype=complex)
    jumps = []
    for lam, op in zip(lambdas, model.jumps):
        correction += (np.conj(lam) * op.entries - lam * op.entries.conj().T) / 2j
        jumps.append(OperatorMatrix(op.entries + lam * np.eye(dim), model.layout))
    hamiltonian = model.hamiltonian.entries + correction
    # exact Hermitian part; the correction is Hermitian up to rounding
    hamiltonian = OperatorMatrix(0.5 * (hamiltonian + hamiltonian.conj().T), model.layout, True)
    previous = model.shift or (0j,) * model.n_jumps
    accumulated = tuple(p + lam for p, lam in zip(previous, lambdas))
    shift = None if all(abs(lam) == 0 for lam in accumulated) else accumulated
    return LindbladModel(hamiltonian, tuple(jumps), model.layout, shift)


def lambda_shift(model: LindbladModel, factor: float) -> List[complex]:
    """l_k = c * ||L_k|| with the spectral norm, real and non-negative."""
    if factor < 0:
        raise ValueError(f"lambda_factor must be non-negative, got {factor}")
    return [complex(factor * np.linalg.norm(op.entries, 2)) for op in model.jumps]


def jump_rate_bound(model: LindbladModel) -> float:
    """sum_k ||L_k||^2, an upper bound of the total jump rate sum_k <L_k^dag L_k> on any state."""
    return float(sum(np.linalg.norm(op.entries, 2) ** 2 for op in model.jumps))


def _entries(rho: Union[DensityMatrix, np.ndarray]) -> np.ndarray:
    return rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def lindblad_rhs(model: LindbladModel, rho: Union[DensityMatrix, np.ndarray]) -> np.ndarray:
    """
    Lindblad generator i[rho, H] + sum_k (L rho L^dag - 1/2 {L^dag L, rho}).

    Returns:
        np.ndarray: D x D matrix (traceless, Hermitian for Hermitian rho)
    """
    rho = _entries(rho)
    if rho.shape != (model.layout.total_dim,) * 2:
        raise DimensionMismatchError(f"rho of shape {rho.shape} does not match the model layout")
    h = model.hamiltonian.entries
    result = 1j * (rho @ h - h @ rho)
    for op in model.jumps:
        l = op.entries
        ldl = l.conj().T @ l
        result += l @ rho @ l.conj().T - 0.5 * (ldl @ rho + rho @ ldl)
    return result


def dissipator(op: OperatorMatrix, rho: Union[DensityMatrix, np.ndarray]) -> np.ndarray:
    """Single-channel dissipator D_L(rho)."""
    rho = _entries(rho)
    l = op.entries
    ldl = l.conj().T @ l
    return l @ rho @ l.conj().T - 0.5 * (ldl @ rho + rho @ ldl)


@dataclass
class DensitySeries:
    """Sampled density-matrix trajectory."""
    times: np.ndarray
    states: List[DensityMatrix]


def lindblad_propagate(model: LindbladModel, rho0: DensityMatrix, t_end: float, dt: float,
                       output_stride: int = 1) -> DensitySeries:
    """
    Fixed-step fourth-order Runge-Kutta integration of the master equation.

    Args:
        model (LindbladModel): Generator
        rho0 (DensityMatrix): Initial state
        t_end (float): Final time
        dt (float): Step (shrunk so that the grid ends at t_end)
        output_stride (int): Steps between stored samples

    Returns:
        DensitySeries: Samples on the output grid

    Raises:
        NumericalInstabilityError: trace drift or loss of positivity
    """
    rho0.validate()
    n_steps, dt = step_grid(t_end, dt)
    keep = set(output_indices(n_steps, int(output_stride)))
    rho = np.array(rho0.entries)
    times = [0.0]
    states = [rho0]
    for step in range(1, n_steps + 1):
        k1 = lindblad_rhs(model, rho)
        k2 = lindblad_rhs(model, rho + 0.5 * dt * k1)
        k3 = lindblad_rhs(model, rho + 0.5 * dt * k2)
        k4 = lindblad_rhs(model, rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if step in keep:
            check_finite(rho, f"lindblad_propagate at step {step}")
            _check_physical(rho, step, step * dt)
            times.append(step * dt)
            states.append(DensityMatrix(0.5 * (rho + rho.conj().T), model.layout))
    return DensitySeries(np.array(times), states)


def _check_physical(rho: np.ndarray, step: int, t: float) -> None:
    trace = np.trace(rho)
    if abs(trace - 1.0) > TRACE_DRIFT_TOL:
        raise NumericalInstabilityError(
            f"Trace drifted to {trace.real:.12f} at step {step} (t={t:.6g}); reduce dt")
    smallest = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    if smallest < -POSITIVITY_TOL:
        raise NumericalInstabilityError(
            f"Positivity violated at step {step} (t={t:.6g}): min eigenvalue {smallest:.3e}; reduce dt")


def _jump_mean(op: OperatorMatrix, state: ProductState) -> complex:
    mean = expectation(op, state)
    if abs(mean) < SANDWICH_FLOOR:
        raise DegenerateSandwichError("degenerate sandwich: <L_k> vanishes; apply a lambda shift")
    return mean


def effective_hamiltonian_constrained(model: LindbladModel, state: ProductState) -> OperatorMatrix:
    """
    Non-Hermitian Hamiltonian of the constrained no-jump evolution.

    H_ms = (i(n-1)/2) sum_k <L_k^dag L_k> 1
           + sum_d 1 (x) [(H)_d - (i/2) sum_k (L_k^dag L_k)_d] (x) 1
    with every reduced operator and mean value taken on the normalized state.
    """
    state = state.normalized()
    layout = model.layout
    n = layout.n_subsystems
    dim = layout.total_dim
    result = constrained_hamiltonian(model.hamiltonian, state).entries.copy()
    for op in model.jumps:
        ldl = op.dag() @ op
        result += 0.5j * (n - 1) * expectation(ldl, state).real * np.eye(dim)
        for d in range(n):
            result -= 0.5j * embed_local(reduced_operator(ldl, state, d), d, layout).entries
    return OperatorMatrix(result, layout, False if model.jumps else True)


def constrained_jump_weights(model: LindbladModel, state: ProductState) -> np.ndarray:
    """Unnormalized weights p~_k = prod_d ||(L_k)_d psi_d||^2 / |<L_k>|^(2(n-1))."""
    state = state.normalized()
    n = model.layout.n_subsystems
    weights = []
    for op in model.jumps:
        mean = _jump_mean(op, state)
        weight = 1.0
        for d in range(n):
            moved = reduced_operator(op, state, d) @ state.locals[d]
            weight *= np.vdot(moved, moved).real
        weights.append(weight / abs(mean) ** (2 * (n - 1)))
    return np.array(weights)


def constrained_jump_probabilities(model: LindbladModel, state: ProductState) -> np.ndarray:
    """
    Probabilities of the constrained jump channels.

    Raises:
        DegenerateSandwichError: no jumps, or every weight vanishes
    """
    if not model.jumps:
        raise DegenerateSandwichError("Model has no jump operators")
    weights = constrained_jump_weights(model, state)
    total = weights.sum()
    if not total > 0:
        raise DegenerateSandwichError("All constrained jump weights vanish")
    return weights / total


def apply_constrained_jump(model: LindbladModel, state: ProductState, k: int) -> ProductState:
    """
    Constrained jump: psi_d -> (L_k)_d psi_d on every subsystem, global
    amplitude divided by <L_k>^(n-1). The result is an exact product state.
    """
    state = state.normalized()
    op = model.jumps[k]
    n = model.layout.n_subsystems
    mean = _jump_mean(op, state)
    moved = [reduced_operator(op, state, d) @ state.locals[d] for d in range(n)]
    moved[0] = moved[0] / mean ** (n - 1)
    return ProductState(tuple(moved), model.layout)


def separable_lindblad_rhs(model: LindbladModel, state: ProductState,
                           trace_preserving: bool = True) -> np.ndarray:
    """
    Separability Lindblad generator L_ms(rho_ms) on a pure product state.

    L_ms(rho) = i[rho, H_ms] + sum_k [ K_k rho K_k^dag + (n-1)<L_k^dag L_k> rho
                - 1/2 {sum_d (L_k^dag L_k)_d, rho} ],
    K_k = (x)_d (L_k)_d / <L_k>^(n-1). The trace-preserving form subtracts
    Tr(L_ms(rho)) rho.
    """
    state = state.normalized()
    layout = model.layout
    n = layout.n_subsystems
    psi = state.full_vector()
    rho = np.outer(psi, psi.conj())
    h_ms = constrained_hamiltonian(model.hamiltonian, state).entries
    result = 1j * (rho @ h_ms - h_ms @ rho)
    for op in model.jumps:
        mean = _jump_mean(op, state)
        ldl = op.dag() @ op
        kraus = tensor_product([reduced_operator(op, state, d) for d in range(n)]).entries / mean ** (n - 1)
        local_sum = sum(embed_local(reduced_operator(ldl, state, d), d, layout).entries for d in range(n))
        result += kraus @ rho @ kraus.conj().T
        result += (n - 1) * expectation(ldl, state).real * rho
        result -= 0.5 * (local_sum @ rho + rho @ local_sum)
    if trace_preserving:
        result -= np.trace(result) * rho
    return result


def constrained_kraus_branches(model: LindbladModel, state: ProductState,
                               tau: float) -> List[Tuple[float, ProductState]]:
    """
    One step of the separable Kraus map, branch by branch.

    Branch 0 uses (K_0)_d = 1 - i tau (H)_d - tau/2 sum_k (L_k^dag L_k)_d, branch
    m >= 1 uses sqrt(tau) (L_m)_d; each is divided by <K_m>^(n-1).

    Returns:
        List of (weight, normalized ProductState); weight = Tr of the branch
    """
    state = state.normalized()
    layout = model.layout
    n = layout.n_subsystems
    dim = layout.total_dim
    no_jump = np.eye(dim) - 1j * tau * model.hamiltonian.entries
    for op in model.jumps:
        no_jump = no_jump - 0.5 * tau * (op.dag() @ op).entries
    kraus_ops = [OperatorMatrix(no_jump, layout)] + [op.scaled(np.sqrt(tau)) for op in model.jumps]
    branches = []
    for kraus in kraus_ops:
        mean = expectation(kraus, state)
        if abs(mean) < SANDWICH_FLOOR:
            raise DegenerateSandwichError("degenerate sandwich: <K_m> vanishes")
        moved = [reduced_operator(kraus, state, d) @ state.locals[d] for d in range(n)]
        moved[0] = moved[0] / mean ** (n - 1)
        branch = ProductState(tuple(moved), layout)
        weight = branch.norm_sq()
        branches.append((weight, branch.normalized() if weight > SANDWICH_FLOOR else branch))
    return branches


def liouvillian(model: LindbladModel) -> np.ndarray:
    """Superoperator of the generator acting on row-major vec(rho)."""
    dim = model.layout.total_dim
    identity = np.eye(dim)
    h = model.hamiltonian.entries
    result = -1j * (np.kron(h, identity) - np.kron(identity, h.T))
    for op in model.jumps:
        l = op.entries
        ldl = l.conj().T @ l
        result += np.kron(l, l.conj()) - 0.5 * (np.kron(ldl, identity) + np.kron(identity, ldl.T))
    return result


def lindblad_steady_state(model: LindbladModel, tol: float = 1e-10) -> Optional[DensityMatrix]:
    """
    Unique stationary state of the generator.

    Returns:
        DensityMatrix or None when the kernel of the Liouvillian is not
        one-dimensional (closed models, dephasing, dark states)
    """
    superop = liouvillian(model)
    _, singular, vh = np.linalg.svd(superop)
    scale = max(float(singular[0]), 1.0)
    if np.sum(singular < tol * scale) != 1:
        return None
    dim = model.layout.total_dim
    rho = vh[-1].conj().reshape(dim, dim)
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho / np.trace(rho).real, model.layout)
