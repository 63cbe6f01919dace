import numpy as np
import pytest

from tensor_core import (
    IDENTITY_2,
    KET_0,
    KET_1,
    PSI_PLUS,
    SIGMA_X,
    SIGMA_Z,
    DensityMatrix,
    OperatorMatrix,
    ProductState,
    SubsystemLayout,
    bloch_vector,
    constrained_hamiltonian,
    embed_local,
    expectation,
    partial_trace,
    reduced_operator,
    tensor_product,
)
from utils.helpers import DegenerateSandwichError, DimensionMismatchError


def _random_state(rng, dims):
    return ProductState(tuple(rng.normal(size=d) + 1j * rng.normal(size=d) for d in dims))


def _random_hermitian(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return a + a.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_layout_rejects_bad_dimensions():
    """Layouts need at least one subsystem of dimension >= 2."""
    with pytest.raises(DimensionMismatchError):
        SubsystemLayout(())
    with pytest.raises(DimensionMismatchError):
        SubsystemLayout((2, 1))
    assert SubsystemLayout.qubits(3).total_dim == 8


def test_mixed_dimension_layout_partial_trace(rng):
    layout = SubsystemLayout((2, 3, 4))
    assert layout.total_dim == 24
    state = _random_state(rng, layout.dims).normalized()
    kept = partial_trace(state.density_matrix(), [0, 2])
    expected = np.kron(np.outer(state.locals[0], state.locals[0].conj()),
                       np.outer(state.locals[2], state.locals[2].conj()))
    assert kept.entries.shape == (8, 8)
    assert np.allclose(kept.entries, expected)


def test_tensor_product_first_factor_slowest():
    """|01> has its amplitude at index 1."""
    vector = tensor_product([KET_0, KET_1])
    assert np.allclose(vector, [0, 1, 0, 0])


def test_embed_local_matches_kron():
    layout = SubsystemLayout((2, 3, 2))
    op = np.arange(9, dtype=complex).reshape(3, 3)
    expected = np.kron(np.kron(IDENTITY_2, op), IDENTITY_2)
    assert np.allclose(embed_local(op, 1, layout).entries, expected)


def test_expectation_on_product_state_matches_full_vector(rng):
    layout = SubsystemLayout((2, 3))
    state = _random_state(rng, layout.dims)
    op = OperatorMatrix(_random_hermitian(rng, 6), layout)
    vector = state.full_vector()
    expected = np.vdot(vector, op.entries @ vector) / np.vdot(vector, vector)
    assert expectation(op, state) == pytest.approx(expected)
    rho = state.density_matrix()
    assert expectation(op, rho) == pytest.approx(expected)


def test_expectation_rejects_zero_state():
    layout = SubsystemLayout.qubits(1)
    op = OperatorMatrix(SIGMA_Z, layout)
    with pytest.raises(DegenerateSandwichError):
        expectation(op, np.zeros(2))


def test_partial_trace_of_product_state(rng):
    """Tr_B |a><a| (x) |b><b| = |a><a|."""
    state = _random_state(rng, (2, 3)).normalized()
    reduced = partial_trace(state.density_matrix(), [0])
    a = state.locals[0]
    assert np.allclose(reduced.entries, np.outer(a, a.conj()))
    assert reduced.layout.dims == (2,)


def test_partial_trace_of_bell_state_is_maximally_mixed():
    rho = DensityMatrix.from_pure(PSI_PLUS, SubsystemLayout.qubits(2))
    assert np.allclose(partial_trace(rho, [1]).entries, np.eye(2) / 2)


def test_reduced_operator_reproduces_expectation(rng):
    """<psi|O|psi> = <psi_k|(O)_k|psi_k> for normalized product states."""
    layout = SubsystemLayout((2, 2, 3))
    state = _random_state(rng, layout.dims).normalized()
    op = OperatorMatrix(_random_hermitian(rng, layout.total_dim), layout)
    for k in range(3):
        block = reduced_operator(op, state, k)
        local = state.locals[k]
        assert np.vdot(local, block @ local) == pytest.approx(expectation(op, state))
        assert np.allclose(block, block.conj().T)


def test_reduced_operator_of_local_term_is_the_term(rng):
    layout = SubsystemLayout.qubits(2)
    state = _random_state(rng, layout.dims)
    op = embed_local(SIGMA_X, 1, layout)
    assert np.allclose(reduced_operator(op, state, 1), SIGMA_X)
    assert np.allclose(reduced_operator(op, state, 0), expectation(op, state) * np.eye(2))


def test_reduced_operator_degenerate_sandwich():
    layout = SubsystemLayout.qubits(2)
    state = ProductState((KET_0, np.zeros(2)), layout)
    op = OperatorMatrix(np.kron(SIGMA_X, SIGMA_X), layout)
    with pytest.raises(DegenerateSandwichError):
        reduced_operator(op, state, 0)


def test_constrained_hamiltonian_vanishes_for_orthogonal_drive():
    """sigma^x (x) sigma^x has zero reduced operators on |00>."""
    layout = SubsystemLayout.qubits(2)
    drive = OperatorMatrix(np.kron(SIGMA_X, SIGMA_X), layout, True)
    h_ms = constrained_hamiltonian(drive, ProductState((KET_0, KET_0), layout))
    assert np.allclose(h_ms.entries, 0)


def test_bloch_vector_of_plus_state():
    layout = SubsystemLayout.qubits(2)
    plus = (KET_0 + KET_1) / np.sqrt(2)
    rho = ProductState((KET_0, plus), layout).density_matrix()
    assert np.allclose(bloch_vector(rho, 0), [0, 0, 1])
    assert np.allclose(bloch_vector(rho, 1), [1, 0, 0])


def test_density_matrix_validation():
    layout = SubsystemLayout.qubits(1)
    DensityMatrix(np.eye(2) / 2, layout).validate()
    with pytest.raises(Exception):
        DensityMatrix(np.diag([1.5, -0.5]), layout).validate()
