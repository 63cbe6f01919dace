"""
Dense multipartite linear algebra implementation

Index convention: subsystem 0 varies slowest (np.kron order), so the basis
state |i_0 i_1 ... i_{N-1}> sits at index sum_k i_k * prod(dims[k+1:]).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.helpers import (
    DENSITY_HERMITIAN_TOL,
    DENSITY_TRACE_TOL,
    POSITIVITY_TOL,
    SANDWICH_FLOOR,
    DegenerateSandwichError,
    DimensionMismatchError,
    NonHermitianError,
    NumericalInstabilityError,
    is_hermitian,
)

logger = logging.getLogger(__name__)

KET_0 = np.array([1.0, 0.0], dtype=complex)
KET_1 = np.array([0.0, 1.0], dtype=complex)
KET_PLUS = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)

IDENTITY_2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# sigma^- = |0><1| lowers the excited level |1>
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T
PROJECTOR_1 = np.array([[0, 0], [0, 1]], dtype=complex)

# |Psi+> = (|01> + |10>)/sqrt(2)
PSI_PLUS = np.array([0.0, 1.0, 1.0, 0.0], dtype=complex) / np.sqrt(2.0)


@dataclass(frozen=True)
class SubsystemLayout:
    """Ordered local dimensions d_1, ..., d_N of a composite Hilbert space."""
    dims: Tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise DimensionMismatchError("A layout needs at least one subsystem")
        if any(d < 2 for d in dims):
            raise DimensionMismatchError(f"Local dimensions must be >= 2, got {dims}")
        object.__setattr__(self, 'dims', dims)

    @classmethod
    def qubits(cls, n: int) -> 'SubsystemLayout':
        return cls((2,) * n)

    @property
    def n_subsystems(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    def kept(self, keep: Sequence[int]) -> 'SubsystemLayout':
        return SubsystemLayout(tuple(self.dims[k] for k in keep))

    def check_index(self, k: int) -> int:
        if not 0 <= int(k) < self.n_subsystems:
            raise DimensionMismatchError(
                f"Subsystem index {k} outside layout with {self.n_subsystems} subsystems")
        return int(k)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """
    Dense D x D operator on a layout.

    hermitian_flag is an advisory cache (True, False or None for unknown);
    is_hermitian() always recomputes from the entries.
    """
    entries: np.ndarray
    layout: SubsystemLayout
    hermitian_flag: Optional[bool] = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=complex)
        dim = self.layout.total_dim
        if entries.shape != (dim, dim):
            raise DimensionMismatchError(
                f"Operator of shape {entries.shape} does not match layout {self.layout.dims}")
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @classmethod
    def identity(cls, layout: SubsystemLayout) -> 'OperatorMatrix':
        return cls(np.eye(layout.total_dim), layout, True)

    @classmethod
    def local(cls, op: np.ndarray, k: int, layout: SubsystemLayout) -> 'OperatorMatrix':
        return embed_local(op, k, layout)

    def is_hermitian(self) -> bool:
        return is_hermitian(self.entries)

    def require_hermitian(self, context: str = 'operator') -> 'OperatorMatrix':
        if not self.is_hermitian():
            raise NonHermitianError(f"{context} must be Hermitian")
        return self

    def dag(self) -> 'OperatorMatrix':
        return OperatorMatrix(self.entries.conj().T, self.layout, self.hermitian_flag)

    def scaled(self, factor: complex) -> 'OperatorMatrix':
        flag = self.hermitian_flag if np.isreal(factor) else None
        return OperatorMatrix(factor * self.entries, self.layout, flag)

    def __add__(self, other: 'OperatorMatrix') -> 'OperatorMatrix':
        _check_same_layout(self.layout, other.layout)
        flag = True if (self.hermitian_flag and other.hermitian_flag) else None
        return OperatorMatrix(self.entries + other.entries, self.layout, flag)

    def __sub__(self, other: 'OperatorMatrix') -> 'OperatorMatrix':
        return self + other.scaled(-1.0)

    def __matmul__(self, other: 'OperatorMatrix') -> 'OperatorMatrix':
        _check_same_layout(self.layout, other.layout)
        return OperatorMatrix(self.entries @ other.entries, self.layout)

    def commutes_with(self, other: 'OperatorMatrix', atol: float = 1e-12) -> bool:
        commutator = self.entries @ other.entries - other.entries @ self.entries
        return float(np.max(np.abs(commutator))) <= atol


@dataclass(frozen=True, eq=False)
class ProductState:
    """
    Product state |psi_1> (x) ... (x) |psi_N>, possibly unnormalized.

    The represented global vector is exactly the Kronecker product of the
    local vectors.
    """
    locals: Tuple[np.ndarray, ...]
    layout: SubsystemLayout = field(default=None)

    def __post_init__(self):
        vectors = tuple(np.array(v, dtype=complex).reshape(-1) for v in self.locals)
        layout = self.layout or SubsystemLayout(tuple(len(v) for v in vectors))
        if len(vectors) != layout.n_subsystems:
            raise DimensionMismatchError(
                f"{len(vectors)} local vectors for a layout of {layout.n_subsystems} subsystems")
        for k, (vector, dim) in enumerate(zip(vectors, layout.dims)):
            if vector.shape != (dim,):
                raise DimensionMismatchError(
                    f"Local vector {k} has length {vector.shape[0]}, expected {dim}")
            vector.setflags(write=False)
        object.__setattr__(self, 'locals', vectors)
        object.__setattr__(self, 'layout', layout)

    def full_vector(self) -> np.ndarray:
        return tensor_product(list(self.locals))

    def local_norms_sq(self) -> np.ndarray:
        return np.array([np.vdot(v, v).real for v in self.locals])

    def norm_sq(self) -> float:
        return float(np.prod(self.local_norms_sq()))

    def normalized(self) -> 'ProductState':
        norms = self.local_norms_sq()
        if np.any(norms < SANDWICH_FLOOR):
            raise DegenerateSandwichError("Cannot normalize a product state with a zero local vector")
        return ProductState(tuple(v / np.sqrt(n) for v, n in zip(self.locals, norms)), self.layout)

    def density_matrix(self) -> 'DensityMatrix':
        return DensityMatrix.from_pure(self.normalized().full_vector(), self.layout)

    def with_local(self, k: int, vector: np.ndarray) -> 'ProductState':
        vectors = list(self.locals)
        vectors[self.layout.check_index(k)] = vector
        return ProductState(tuple(vectors), self.layout)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Dense density matrix with subsystem layout."""
    entries: np.ndarray
    layout: SubsystemLayout

    def __post_init__(self):
        entries = np.array(self.entries, dtype=complex)
        dim = self.layout.total_dim
        if entries.shape != (dim, dim):
            raise DimensionMismatchError(
                f"Density matrix of shape {entries.shape} does not match layout {self.layout.dims}")
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @classmethod
    def from_pure(cls, vector: np.ndarray, layout: SubsystemLayout) -> 'DensityMatrix':
        vector = np.asarray(vector, dtype=complex)
        norm_sq = np.vdot(vector, vector).real
        if norm_sq < SANDWICH_FLOOR:
            raise DegenerateSandwichError("Zero vector has no density matrix")
        return cls(np.outer(vector, vector.conj()) / norm_sq, layout)

    @classmethod
    def maximally_mixed(cls, layout: SubsystemLayout) -> 'DensityMatrix':
        return cls(np.eye(layout.total_dim) / layout.total_dim, layout)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))

    def validate(self, normalized: bool = True) -> 'DensityMatrix':
        """
        Check Hermiticity, trace and numerical positivity.

        Raises:
            NonHermitianError: entries not Hermitian within 1e-10
            NumericalInstabilityError: trace or positivity violated
        """
        deviation = float(np.max(np.abs(self.entries - self.entries.conj().T)))
        if deviation > DENSITY_HERMITIAN_TOL:
            raise NonHermitianError(f"Density matrix not Hermitian (deviation {deviation:.3e})")
        trace = self.trace
        if abs(trace.imag) > DENSITY_TRACE_TOL or (normalized and abs(trace.real - 1.0) > DENSITY_TRACE_TOL):
            raise NumericalInstabilityError(f"Density matrix trace {trace} is not valid")
        smallest = float(self.eigenvalues().min())
        if smallest < -POSITIVITY_TOL:
            raise NumericalInstabilityError(f"Density matrix not positive (min eigenvalue {smallest:.3e})")
        return self


def _check_same_layout(first: SubsystemLayout, second: SubsystemLayout) -> None:
    if first.dims != second.dims:
        raise DimensionMismatchError(f"Layouts {first.dims} and {second.dims} differ")


def tensor_product(factors: Sequence[Union[np.ndarray, OperatorMatrix]]) -> Union[np.ndarray, OperatorMatrix]:
    """
    Kronecker product of local vectors or of operators.

    Args:
        factors: Either all 1-D vectors or all square matrices/OperatorMatrix

    Returns:
        Full vector for vector factors, OperatorMatrix for operator factors
    """
    if not factors:
        raise DimensionMismatchError("tensor_product needs at least one factor")
    arrays = [f.entries if isinstance(f, OperatorMatrix) else np.asarray(f, dtype=complex) for f in factors]
    if all(a.ndim == 1 for a in arrays):
        result = arrays[0]
        for a in arrays[1:]:
            result = np.kron(result, a)
        return result
    if not all(a.ndim == 2 and a.shape[0] == a.shape[1] for a in arrays):
        raise DimensionMismatchError("tensor_product factors must all be vectors or all square matrices")
    dims: List[int] = []
    for factor, array in zip(factors, arrays):
        dims.extend(factor.layout.dims if isinstance(factor, OperatorMatrix) else (array.shape[0],))
    result = arrays[0]
    for a in arrays[1:]:
        result = np.kron(result, a)
    hermitian = all(isinstance(f, OperatorMatrix) and f.hermitian_flag for f in factors) or None
    return OperatorMatrix(result, SubsystemLayout(tuple(dims)), hermitian)


def embed_local(op: np.ndarray, k: int, layout: SubsystemLayout) -> OperatorMatrix:
    """1 (x) ... (x) op_k (x) ... (x) 1 on the given layout."""
    k = layout.check_index(k)
    op = np.asarray(op, dtype=complex)
    if op.shape != (layout.dims[k], layout.dims[k]):
        raise DimensionMismatchError(
            f"Local operator of shape {op.shape} does not fit subsystem {k} of dimension {layout.dims[k]}")
    left = np.eye(math.prod(layout.dims[:k]), dtype=complex)
    right = np.eye(math.prod(layout.dims[k + 1:]), dtype=complex)
    return OperatorMatrix(np.kron(np.kron(left, op), right), layout)


def expectation(op: OperatorMatrix,
                state: Union[ProductState, DensityMatrix, np.ndarray],
                normalized: bool = True) -> complex:
    """
    Mean value of an operator.

    For pure states, normalized=True returns <psi|O|psi>/<psi|psi> and
    normalized=False the raw <psi|O|psi>. Density matrices return Tr(rho O)
    (divided by the trace when normalized).
    """
    if isinstance(state, DensityMatrix):
        _check_same_layout(op.layout, state.layout)
        value = complex(np.trace(state.entries @ op.entries))
        if normalized:
            trace = state.trace
            if abs(trace) < SANDWICH_FLOOR:
                raise DegenerateSandwichError("Zero-trace density matrix in normalized expectation")
            value /= trace
        return value
    if isinstance(state, ProductState):
        _check_same_layout(op.layout, state.layout)
        vector = state.full_vector()
    else:
        vector = np.asarray(state, dtype=complex)
        if vector.shape != (op.layout.total_dim,):
            raise DimensionMismatchError(f"State of length {vector.shape} does not match operator")
    value = complex(np.vdot(vector, op.entries @ vector))
    if normalized:
        norm_sq = np.vdot(vector, vector).real
        if norm_sq < SANDWICH_FLOOR:
            raise DegenerateSandwichError("Zero-norm state in normalized expectation")
        value /= norm_sq
    return value


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """
    Trace out every subsystem not listed in keep.

    Args:
        rho (DensityMatrix): State on the full layout
        keep (Sequence[int]): Subsystems to keep (in layout order)

    Returns:
        DensityMatrix: Reduced state on the kept subsystems
    """
    layout = rho.layout
    keep = sorted({layout.check_index(k) for k in keep})
    if not keep:
        raise DimensionMismatchError("partial_trace needs at least one kept subsystem")
    n = layout.n_subsystems
    traced = [j for j in range(n) if j not in keep]
    tensor = rho.entries.reshape(layout.dims + layout.dims)
    order = keep + traced
    tensor = tensor.transpose(order + [n + j for j in order])
    kept_dim = math.prod(layout.dims[k] for k in keep)
    traced_dim = math.prod(layout.dims[j] for j in traced)
    tensor = tensor.reshape(kept_dim, traced_dim, kept_dim, traced_dim)
    return DensityMatrix(np.einsum('arbr->ab', tensor), layout.kept(keep))


def subsystem_tensor(entries: np.ndarray, layout: SubsystemLayout, k: int) -> np.ndarray:
    """Operator entries regrouped as (d_k, R, d_k, R) with R the other subsystems."""
    n = layout.n_subsystems
    dims = layout.dims
    order = [k] + [j for j in range(n) if j != k]
    tensor = np.asarray(entries).reshape(dims + dims).transpose(order + [n + j for j in order])
    rest = math.prod(dims[j] for j in range(n) if j != k)
    return tensor.reshape(dims[k], rest, dims[k], rest)


def batched_kron(vectors: Sequence[np.ndarray], batch: int) -> np.ndarray:
    """Row-wise Kronecker product of (batch, d_j) arrays, first factor slowest."""
    result = np.ones((batch, 1), dtype=complex)
    for v in vectors:
        result = (result[:, :, None] * v[:, None, :]).reshape(batch, -1)
    return result


def sandwich_blocks(tensor: np.ndarray, others: np.ndarray) -> np.ndarray:
    """
    Reduced operators for a batch of environments.

    Args:
        tensor (np.ndarray): (d_k, R, d_k, R) output of subsystem_tensor
        others (np.ndarray): (batch, R) Kronecker products of the other locals

    Returns:
        np.ndarray: (batch, d_k, d_k) reduced operators
    """
    denominators = np.einsum('jr,jr->j', others.conj(), others).real
    if np.any(np.abs(denominators) < SANDWICH_FLOOR):
        raise DegenerateSandwichError("degenerate sandwich: product of other local norms vanishes")
    blocks = np.einsum('arbs,jr,js->jab', tensor, others.conj(), others)
    return blocks / denominators[:, None, None]


def batched_reduced_operator(entries: np.ndarray, layout: SubsystemLayout,
                             locals_batch: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Reduced operator (O)_k for every row of a batch of product states."""
    batch = locals_batch[0].shape[0]
    others = batched_kron([locals_batch[j] for j in range(layout.n_subsystems) if j != k], batch)
    return sandwich_blocks(subsystem_tensor(entries, layout, k), others)


def reduced_operator(op: OperatorMatrix, state: ProductState, k: int) -> np.ndarray:
    """
    Reduced operator of subsystem k on a product state.

    (O)_k = (x_{j!=k} <psi_j|) O (x_{j!=k} |psi_j>) / prod_{j!=k} <psi_j|psi_j>

    Raises:
        DegenerateSandwichError: the product of the other local norms vanishes
    """
    _check_same_layout(op.layout, state.layout)
    k = state.layout.check_index(k)
    locals_batch = [v[None, :] for v in state.locals]
    return batched_reduced_operator(op.entries, op.layout, locals_batch, k)[0]


def constrained_hamiltonian(hamiltonian: OperatorMatrix, state: ProductState) -> OperatorMatrix:
    """H_ms = sum_k 1 (x) ... (x) (H)_k (x) ... (x) 1 evaluated on state."""
    layout = hamiltonian.layout
    total = np.zeros((layout.total_dim, layout.total_dim), dtype=complex)
    for k in range(layout.n_subsystems):
        total += embed_local(reduced_operator(hamiltonian, state, k), k, layout).entries
    return OperatorMatrix(total, layout, hamiltonian.hermitian_flag)


def bloch_vector(rho: DensityMatrix, k: int) -> np.ndarray:
    """Bloch vector (x, y, z) of qubit k."""
    if rho.layout.dims[rho.layout.check_index(k)] != 2:
        raise DimensionMismatchError(f"Subsystem {k} is not a qubit")
    local = partial_trace(rho, [k]).entries
    return np.array([np.trace(local @ p).real for p in (SIGMA_X, SIGMA_Y, SIGMA_Z)])
