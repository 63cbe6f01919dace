import math

import numpy as np
import pytest

from open_dynamics import LindbladModel, lindblad_propagate, shift_operators, lambda_shift
from tensor_core import (
    KET_0,
    PROJECTOR_1,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_Z,
    DensityMatrix,
    OperatorMatrix,
    ProductState,
    SubsystemLayout,
)
from thermo import (
    ThermoAnalyzer,
    accumulated_heat,
    estimate_constrained_steady_state,
    gibbs_state,
    heat_flow,
    integrated_heat,
    relative_entropy,
    thermal_qubit,
    time_average,
    von_neumann_entropy,
)
from thermo.analyzer import RECORD_COLUMNS
from utils.helpers import NonProductStateError

QUBIT = SubsystemLayout.qubits(1)
PAIR = SubsystemLayout.qubits(2)
BETA = 1.5


def _random_density(rng, dim, layout):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return DensityMatrix(rho / np.trace(rho), layout)


@pytest.fixture
def thermal_model():
    """Qubit with energy gap 1 coupled to a bath at inverse temperature BETA."""
    boltzmann = math.exp(-BETA)
    return LindbladModel(OperatorMatrix(PROJECTOR_1, QUBIT, True),
                         (OperatorMatrix(SIGMA_MINUS, QUBIT), OperatorMatrix(math.sqrt(boltzmann) * SIGMA_PLUS, QUBIT)),
                         QUBIT)


@pytest.fixture
def dephasing_model():
    hamiltonian = OperatorMatrix(np.kron(SIGMA_Z, SIGMA_Z), PAIR, True)
    jump = OperatorMatrix(np.kron(SIGMA_Z, np.eye(2)) + np.kron(np.eye(2), SIGMA_Z), PAIR, True)
    return LindbladModel(hamiltonian, (jump,), PAIR)


def test_entropy_of_pure_and_maximally_mixed_states():
    assert von_neumann_entropy(DensityMatrix.from_pure(KET_0, QUBIT)) == pytest.approx(0.0, abs=1e-12)
    assert von_neumann_entropy(DensityMatrix.maximally_mixed(PAIR)) == pytest.approx(math.log(4))


def test_relative_entropy_basic_properties():
    rng = np.random.default_rng(1)
    rho = _random_density(rng, 2, QUBIT)
    assert relative_entropy(rho, rho) == pytest.approx(0.0, abs=1e-10)
    pure = DensityMatrix.from_pure(KET_0, QUBIT)
    assert relative_entropy(rho, pure) == math.inf
    assert relative_entropy(pure, DensityMatrix.maximally_mixed(QUBIT)) == pytest.approx(math.log(2))


def test_relative_entropy_contracts_under_dense_map(thermal_model):
    rng = np.random.default_rng(2)
    for _ in range(50):
        rho = _random_density(rng, 2, QUBIT)
        sigma = _random_density(rng, 2, QUBIT)
        rho_t = lindblad_propagate(thermal_model, rho, 0.5, 1e-2).states[-1]
        sigma_t = lindblad_propagate(thermal_model, sigma, 0.5, 1e-2).states[-1]
        assert relative_entropy(rho_t, sigma_t) <= relative_entropy(rho, sigma) + 1e-8


def test_gibbs_state_of_qubit_matches_thermal_qubit():
    gibbs = gibbs_state(OperatorMatrix(PROJECTOR_1, QUBIT, True), BETA)
    assert np.allclose(gibbs.entries, thermal_qubit(1.0, 1.0 / BETA))


def test_free_heat_vanishes_when_jump_commutes_with_hamiltonian(dephasing_model):
    rng = np.random.default_rng(3)
    for _ in range(5):
        rho = _random_density(rng, 4, PAIR)
        assert heat_flow(dephasing_model, rho, 'free') == pytest.approx(0.0, abs=1e-12)


def test_free_heat_is_shift_invariant(thermal_model):
    rho = _random_density(np.random.default_rng(4), 2, QUBIT)
    shifted = shift_operators(thermal_model, lambda_shift(thermal_model, 10.0))
    energy = thermal_model.hamiltonian
    assert heat_flow(shifted, rho, 'free', energy) == pytest.approx(heat_flow(thermal_model, rho, 'free'),
                                                                   abs=1e-10)


def test_constrained_heat_of_closed_model_vanishes():
    """The constrained unitary flow conserves the mean energy."""
    rng = np.random.default_rng(5)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    model = LindbladModel.closed(OperatorMatrix(a + a.conj().T, PAIR))
    state = ProductState((np.array([0.6, 0.8j]), np.array([1.0, 0.3 - 0.2j])), PAIR)
    assert heat_flow(model, state, 'constrained') == pytest.approx(0.0, abs=1e-10)


def test_constrained_heat_of_dephasing_is_nonzero(dephasing_model):
    shifted = shift_operators(dephasing_model, lambda_shift(dephasing_model, 10.0))
    state = ProductState((np.array([0.8, 0.6j]), np.array([0.5, 0.7 - 0.2j])), PAIR)
    assert abs(heat_flow(shifted, state, 'constrained', dephasing_model.hamiltonian)) > 1e-6


def test_constrained_heat_needs_product_state(dephasing_model):
    with pytest.raises(NonProductStateError):
        heat_flow(dephasing_model, DensityMatrix.maximally_mixed(PAIR), 'constrained')


def test_first_law_closure(thermal_model):
    """Integrated heat flow equals the energy change when no work is done."""
    rho0 = DensityMatrix(np.array([[0.2, 0.3], [0.3, 0.8]]), QUBIT)
    series = lindblad_propagate(thermal_model, rho0, 1.0, 1e-3)
    heat = accumulated_heat(series.states, thermal_model.hamiltonian)
    rates = [heat_flow(thermal_model, rho, 'free') for rho in series.states]
    integrated = integrated_heat(series.times, rates)
    assert heat[0] == 0.0
    assert np.max(np.abs(integrated - heat)) <= 1e-6


def test_single_bath_second_law(thermal_model):
    rho0 = DensityMatrix(np.array([[0.3, 0.2], [0.2, 0.7]]), QUBIT)
    series = lindblad_propagate(thermal_model, rho0, 2.0, 1e-3, output_stride=10)
    analyzer = ThermoAnalyzer(thermal_model.hamiltonian, beta=BETA)
    record = analyzer.build_record(series.times, series.states, 'free', model=thermal_model)
    assert np.all(analyzer.second_law(record)[1:-1] >= -1e-6)


def test_second_law_needs_temperature(thermal_model):
    rho0 = DensityMatrix.maximally_mixed(QUBIT)
    record = ThermoAnalyzer(thermal_model.hamiltonian).build_record(np.array([0.0, 1.0]), [rho0, rho0], 'free')
    with pytest.raises(ValueError):
        ThermoAnalyzer(thermal_model.hamiltonian).second_law(record)


def test_record_columns_and_reference(thermal_model):
    rho0 = DensityMatrix(np.array([[0.5, 0.1], [0.1, 0.5]]), QUBIT)
    series = lindblad_propagate(thermal_model, rho0, 1.0, 1e-2, output_stride=10)
    reference = gibbs_state(thermal_model.hamiltonian, BETA)
    record = ThermoAnalyzer(thermal_model.hamiltonian).build_record(series.times, series.states, 'free',
                                                                    model=thermal_model, reference=reference)
    assert list(record.frame.columns) == RECORD_COLUMNS
    assert record.mode == 'free'
    relative = record.column('relative_entropy')
    assert np.all(np.diff(relative) <= 1e-10)
    assert np.all(record.column('entropy_production')[1:-1] >= -1e-6)


def test_time_average():
    times = np.linspace(0, 200, 20001)
    assert np.allclose(time_average(times, np.full(len(times), 2.0)), 2.0)
    averaged = time_average(times, np.sin(times) ** 2)
    assert averaged[-1] == pytest.approx(0.5, abs=5e-3)


def test_steady_state_estimate_detects_plateau():
    times = np.linspace(0, 10, 51)
    flat = [np.diag([0.7, 0.3]).astype(complex)] * len(times)
    steady = estimate_constrained_steady_state(times, flat, QUBIT)
    assert steady is not None
    assert np.allclose(steady.entries, np.diag([0.7, 0.3]))
    drifting = [np.diag([0.5 + 0.04 * t, 0.5 - 0.04 * t]).astype(complex) for t in times]
    assert estimate_constrained_steady_state(times, drifting, QUBIT) is None


def test_work_rate_follows_hamiltonian_rate(thermal_model):
    rho0 = DensityMatrix(np.array([[0.3, 0.2], [0.2, 0.7]]), QUBIT)
    series = lindblad_propagate(thermal_model, rho0, 1.0, 1e-2, output_stride=20)
    drive = OperatorMatrix(SIGMA_Z, QUBIT, True)
    record = ThermoAnalyzer(thermal_model.hamiltonian, hamiltonian_rate=drive).build_record(
        series.times, series.states, 'free')
    expected = [np.trace(rho.entries @ SIGMA_Z).real for rho in series.states]
    assert np.allclose(record.column('work_rate'), expected)
    static = ThermoAnalyzer(thermal_model.hamiltonian).build_record(series.times, series.states, 'free')
    assert np.all(static.column('work_rate') == 0.0)


def test_record_carries_second_law_residual(thermal_model):
    rho0 = DensityMatrix(np.array([[0.3, 0.2], [0.2, 0.7]]), QUBIT)
    series = lindblad_propagate(thermal_model, rho0, 1.0, 1e-3, output_stride=10)
    analyzer = ThermoAnalyzer(thermal_model.hamiltonian, beta=BETA)
    record = analyzer.build_record(series.times, series.states, 'free', model=thermal_model)
    assert np.allclose(record.column('second_law'), analyzer.second_law(record))
    unknown = ThermoAnalyzer(thermal_model.hamiltonian).build_record(series.times, series.states, 'free')
    assert np.all(np.isnan(unknown.column('second_law')))
