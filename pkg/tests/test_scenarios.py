import math

import numpy as np
import pytest

from closed_dynamics import unitary_density_series
from open_dynamics import (
    LindbladModel,
    McwfConfig,
    McwfSolver,
    ObservableSet,
    jump_rate_bound,
    jump_substeps,
    lambda_shift,
    lindblad_propagate,
    lindblad_rhs,
    lindblad_steady_state,
    shift_operators,
)
from scenarios import (
    SCENARIO_DEFAULTS,
    build_scenario,
    delocalized_operators,
    delocalized_rate,
    reset_channel_jumps,
    swap_heat_constrained,
    swap_heat_free,
    swap_heat_grid,
)
from scenarios.builders import delocalized_basis
from tensor_core import (
    SIGMA_MINUS,
    DensityMatrix,
    OperatorMatrix,
    ProductState,
    SubsystemLayout,
    embed_local,
    expectation,
    partial_trace,
)
from runner import compare_series
from thermo import accumulated_heat, gibbs_state, heat_flow, integrated_heat, thermal_qubit, time_average
from utils.helpers import ConfigError

THREE = SubsystemLayout.qubits(3)


def _random_density(rng, layout):
    dim = layout.total_dim
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return DensityMatrix(rho / np.trace(rho), layout)


@pytest.mark.parametrize('k', [0, 2])
def test_reset_channel_matches_replacement_map(k):
    """p (tau (x) Tr_k rho - rho) from the four jump operators."""
    rng = np.random.default_rng(11)
    tau = thermal_qubit(0.8, 1.7)
    jumps = reset_channel_jumps(0.3, tau, k, THREE)
    model = LindbladModel(OperatorMatrix(np.zeros((8, 8)), THREE, True), tuple(jumps), THREE)
    rho = _random_density(rng, THREE)
    rest = partial_trace(rho, [j for j in range(3) if j != k]).entries
    replaced = np.kron(tau, rest) if k == 0 else np.kron(rest, tau)
    expected = 0.3 * (replaced - rho.entries)
    assert np.allclose(lindblad_rhs(model, rho), expected, atol=1e-12)


def test_delocalized_rates_satisfy_detailed_balance():
    for omega in (0.5, 1.0, 1.687):
        for beta in (0.1, 0.4):
            ratio = delocalized_rate(0.01, -omega, beta) / delocalized_rate(0.01, omega, beta)
            assert ratio == pytest.approx(math.exp(-beta * omega), rel=1e-12)


def test_delocalized_basis_is_orthonormal():
    basis = np.array(delocalized_basis())
    assert np.allclose(basis.conj() @ basis.T, np.eye(8))


@pytest.mark.parametrize('bath,k', [('w', 0), ('h', 1), ('c', 2)])
def test_delocalized_operators_sum_to_local_lowering(bath, k):
    """Summing over the three frequencies of a bath recovers sigma^- on its qubit."""
    operators = delocalized_operators()
    total = sum(operators[(bath, s)] for s in (0, 1, -1))
    assert np.allclose(total, embed_local(SIGMA_MINUS, k, THREE).entries)


def test_work_qubit_lowering_at_bare_frequency():
    """A_{w, omega_w} takes |100> to |000>."""
    lowering = delocalized_operators()[('w', 0)]
    excited = np.zeros(8)
    excited[0b100] = 1.0
    ground = np.zeros(8)
    ground[0b000] = 1.0
    assert np.allclose(lowering @ excited, ground)


def test_delocalized_operators_lower_energy_by_their_frequency():
    spec = build_scenario('refrigerator_delocalized')
    h = spec.model.hamiltonian.entries
    p = spec.parameters
    for (bath, s), lowering in delocalized_operators().items():
        omega = p[f"omega_{bath}"] + s * p['g']
        assert np.allclose(h @ lowering - lowering @ h, -omega * lowering, atol=1e-12)


def test_refrigerator_resonance():
    spec = build_scenario('refrigerator_localized', omega_c=0.5, omega_w=1.2)
    assert spec.parameters['omega_h'] == pytest.approx(1.7)
    assert spec.labels == ('w', 'h', 'c')
    assert len(spec.model.jumps) == 12


def test_delocalized_equal_temperatures_relax_to_gibbs():
    spec = build_scenario('refrigerator_delocalized', T_w=2.0, T_h=2.0, T_c=2.0)
    steady = lindblad_steady_state(spec.model)
    assert steady is not None
    assert np.allclose(steady.entries, gibbs_state(spec.model.hamiltonian, 0.5).entries, atol=1e-8)


def test_delocalized_rejects_negative_transition_frequency():
    with pytest.raises(ConfigError):
        build_scenario('refrigerator_delocalized', omega_c=0.05, g=0.1)


def test_uncoupled_refrigerator_follows_population_oracles():
    spec = build_scenario('refrigerator_localized', g=0.0)
    series = lindblad_propagate(spec.model, spec.initial.density_matrix(), 20.0, 1e-2, output_stride=100)
    operators = spec.operators(['populations'])
    for label in spec.labels:
        numeric = [expectation(operators[f"population_{label}"], rho).real for rho in series.states]
        oracle = spec.oracles[f"population_{label}_uncoupled"](series.times)
        assert np.allclose(numeric, oracle, atol=1e-8)


def test_free_refrigerator_conserves_trace():
    spec = build_scenario('refrigerator_localized')
    series = lindblad_propagate(spec.model, spec.initial.density_matrix(), 2.0, 2e-3, output_stride=100)
    assert all(abs(rho.trace - 1) < 1e-10 for rho in series.states)


def test_dephasing_jump_commutes_with_hamiltonian():
    spec = build_scenario('dephasing', lambda_init=0.5)
    assert spec.model.hamiltonian.commutes_with(spec.model.jumps[0])
    local = spec.initial.branches[0].locals[0]
    assert abs(local[1] / local[0]) == pytest.approx(0.5)


def test_dephasing_free_heat_is_zero_and_coherences_decay():
    spec = build_scenario('dephasing')
    series = lindblad_propagate(spec.model, spec.initial.density_matrix(), 2.0, 1e-3, output_stride=100)
    energies = [expectation(spec.energy_operator, rho).real for rho in series.states]
    assert np.max(np.abs(np.array(energies) - energies[0])) < 1e-10
    populations = np.array([np.diag(rho.entries).real for rho in series.states])
    assert np.allclose(populations, populations[0], atol=1e-10)
    corner = [abs(rho.entries[0, 3]) for rho in series.states]
    assert corner[-1] < corner[0]


def test_swap_oracles_vanish_at_start():
    p = SCENARIO_DEFAULTS['swap_exchange']
    args = (p['omega_A'], p['omega_B'], p['beta_A'], p['beta_B'], p['kappa'])
    assert swap_heat_free(np.array([0.0]), *args)[0] == pytest.approx(0.0)
    assert swap_heat_constrained(np.array([0.0]), *args)[0] == pytest.approx(0.0, abs=1e-15)


def test_swap_free_heat_vanishes_at_equal_temperatures():
    times = np.linspace(0, 10, 101)
    assert np.allclose(swap_heat_free(times, 1.0, 1.0, 0.7, 0.7, 1.0), 0.0)


def test_swap_free_time_average_converges_to_half_amplitude():
    times = np.linspace(0, 400, 40001)
    heat = swap_heat_free(times, 1.0, 1.0, 0.2, 1.0, 1.0)
    amplitude = swap_heat_free(np.array([math.pi / 2]), 1.0, 1.0, 0.2, 1.0, 1.0)[0]
    assert time_average(times, heat)[-1] == pytest.approx(0.5 * amplitude, abs=2e-3 * abs(amplitude))


def test_swap_heat_grid_shapes():
    free, constrained = swap_heat_grid([0.5, 1.0, 2.0, 4.0], np.linspace(0, 5, 11))
    assert free.shape == (4, 11)
    assert constrained.shape == (4, 11)
    assert np.allclose(free[1], 0.0)


def test_swap_free_oracle_matches_unitary_evolution():
    spec = build_scenario('swap_exchange')
    times = np.linspace(0, 2 * math.pi, 13)
    heat = spec.oracles['heat_analytic_free'](times)
    rho0 = spec.initial.density_matrix()
    states = unitary_density_series(spec.model.hamiltonian, rho0, times)
    e0 = expectation(spec.energy_operator, rho0).real
    numeric = [expectation(spec.energy_operator, rho).real - e0 for rho in states]
    assert np.allclose(numeric, heat, atol=1e-12)


@pytest.mark.parametrize('temperature_a,temperature_b', [(5.0, 1.0), (50.0, 1.0), (1.0, 2.0)])
def test_swap_constrained_oracle_matches_branch_ensemble(temperature_a, temperature_b):
    spec = build_scenario('swap_exchange', beta_A=1.0 / temperature_a, beta_B=1.0 / temperature_b)
    cfg = McwfConfig(dt=1e-3, t_end=4 * math.pi, n_traj=1, seed=0, output_stride=250)
    solver = McwfSolver(spec.model, cfg, ObservableSet(energy=spec.energy_operator))
    ensemble = solver.run(spec.initial, 'exhaustive')
    oracle = spec.oracles['heat_analytic_constrained'](ensemble.times)
    omega_a = spec.parameters['omega_A']
    assert np.max(np.abs(ensemble.mean['heat'].to_numpy() - oracle)) < 1e-6 * omega_a


@pytest.mark.parametrize('temperature_a', [5.0, 50.0])
def test_swap_time_averaged_heats_converge(temperature_a):
    """Both heats average to omega_A (p_B - p_A) / 2 over long times."""
    spec = build_scenario('swap_exchange', beta_A=1.0 / temperature_a, beta_B=1.0)
    times = np.linspace(0.0, 200.0, 40001)
    free = time_average(times, spec.oracles['heat_analytic_free'](times))
    constrained = time_average(times, spec.oracles['heat_analytic_constrained'](times))
    assert abs(free[-1] - constrained[-1]) < 0.02 * spec.parameters['omega_A']


def test_product_states_have_bell_overlap_at_most_half():
    spec = build_scenario('correlated_decay')
    bell = spec.operators(['bell_overlap'])['bell_overlap']
    best = 0.0
    for theta in np.linspace(0, math.pi, 41):
        for phi in np.linspace(0, math.pi, 41):
            state = ProductState((np.array([math.cos(theta), math.sin(theta)]),
                                  np.array([math.cos(phi), math.sin(phi)])), spec.layout)
            best = max(best, expectation(bell, state).real)
    assert best == pytest.approx(0.5, abs=1e-12)


def test_bell_overlap_needs_two_qubits():
    spec = build_scenario('refrigerator_localized')
    with pytest.raises(ConfigError):
        spec.operators(['bell_overlap'])


def test_operator_groups():
    spec = build_scenario('battery')
    names = list(spec.operators(['populations', 'bloch_vectors', 'heat']))
    assert names[:2] == ['population_A', 'population_B']
    assert 'bloch_z_B' in names
    assert len(names) == 8


def test_battery_oracles_start_at_zero_heat():
    spec = build_scenario('battery', epsilon=0.2)
    times = np.array([0.0, 0.5, 1.0])
    assert spec.oracles['heat_analytic_free'](times)[0] == pytest.approx(0.0, abs=1e-12)
    assert spec.oracles['heat_analytic_constrained'](times)[0] == pytest.approx(0.0, abs=1e-12)


def test_unknown_parameter_is_rejected():
    with pytest.raises(ConfigError, match='parameters.temprature'):
        build_scenario('dephasing', temprature=1.0)


def test_negative_rate_is_rejected():
    with pytest.raises(ConfigError, match='parameters.gamma'):
        build_scenario('dephasing', gamma=-1.0)


def test_unknown_scenario_is_rejected():
    with pytest.raises(ConfigError):
        build_scenario('laser')


def test_correlated_decay_constrained_overlap_bound():
    spec = build_scenario('correlated_decay')
    cfg = McwfConfig(dt=1e-2, t_end=1.0, n_traj=50, seed=4, output_stride=10)
    solver = McwfSolver(spec.model, cfg, ObservableSet(operators=spec.operators(['bell_overlap'])))
    ensemble = solver.run(spec.initial)
    assert np.all(ensemble.mean['bell_overlap'].to_numpy() <= 0.5 + 1e-12)


@pytest.mark.slow
def test_dephasing_constrained_heat_is_positive():
    spec = build_scenario('dephasing')
    cfg = McwfConfig(dt=1e-3, t_end=1.0, n_traj=20000, seed=3, output_stride=100)
    solver = McwfSolver(spec.model, cfg, ObservableSet(energy=spec.energy_operator))
    ensemble = solver.run(spec.initial)
    heat = ensemble.mean['heat'].to_numpy()[-1]
    stderr = ensemble.stderr['heat'].to_numpy()[-1]
    assert heat > 5 * stderr


@pytest.mark.slow
def test_unconstrained_trajectories_match_dense_refrigerator():
    spec = build_scenario('refrigerator_localized')
    operators = spec.operators(['populations'])
    cfg = McwfConfig(dt=2e-3, t_end=10.0, n_traj=10000, seed=1, output_stride=250, unconstrained=True)
    ensemble = McwfSolver(spec.model, cfg, ObservableSet(operators=operators), jobs=2).run(spec.initial)
    series = lindblad_propagate(spec.model, spec.initial.density_matrix(), 10.0, 2e-3, output_stride=250)
    for name, op in operators.items():
        dense = np.array([expectation(op, rho).real for rho in series.states])
        deviation = np.abs(ensemble.mean[name].to_numpy() - dense)
        assert np.all(deviation <= 3 * ensemble.stderr[name].to_numpy() + 1e-3)


def test_refrigerators_set_a_bath_temperature_only_for_a_single_bath():
    equal = {'T_w': 2.0, 'T_h': 2.0, 'T_c': 2.0}
    assert build_scenario('refrigerator_delocalized', **equal).beta == pytest.approx(0.5)
    assert build_scenario('refrigerator_delocalized').beta is None
    assert build_scenario('refrigerator_localized', g=0.0, **equal).beta == pytest.approx(0.5)
    assert build_scenario('refrigerator_localized', **equal).beta is None
    assert build_scenario('dephasing').beta is None


def test_dephasing_jump_load_is_split_into_substeps():
    """Shifted jump Z1 + 1Z + 20 has norm 22, so dt = 1e-3 carries 0.484 jumps."""
    spec = build_scenario('dephasing')
    shifted = shift_operators(spec.model, lambda_shift(spec.model, 10.0))
    assert jump_rate_bound(shifted) == pytest.approx(484.0)
    assert jump_substeps(shifted, 1e-3) == 10
    assert jump_substeps(spec.model, 1e-3) == 1
    solver = McwfSolver(spec.model, McwfConfig(dt=1e-3, t_end=0.01, n_traj=1, seed=0))
    assert solver.substeps == 10
    assert solver.run(spec.initial).metadata['substeps'] == 10
    with pytest.raises(ConfigError):
        McwfConfig(dt=1e-3, t_end=1.0, n_traj=1, seed=0, max_jump_load=0.0)


def test_constrained_dephasing_means_do_not_depend_on_the_shift():
    spec = build_scenario('dephasing')
    runs = {}
    for factor in (10.0, 20.0):
        cfg = McwfConfig(dt=1e-2, t_end=0.2, n_traj=256, seed=3, lambda_factor=factor, output_stride=5)
        observables = ObservableSet(energy=spec.energy_operator, heat_flow=True)
        runs[factor] = McwfSolver(spec.model, cfg, observables).run(spec.initial)
    low, high = runs[10.0], runs[20.0]
    report = compare_series(low.mean['heat'], high.mean['heat'], low.stderr['heat'], high.stderr['heat'], sigma=4.0)
    assert report['passed']
    # both heat estimators of one run agree
    report = compare_series(low.mean['heat'], low.mean['constrained_heat'], low.stderr['heat'],
                            low.stderr['constrained_heat'], sigma=4.0)
    assert report['passed']


@pytest.mark.parametrize('name', sorted(SCENARIO_DEFAULTS))
def test_first_law_closure_on_every_scenario(name):
    """Integrated free heat flow equals the energy change without work."""
    spec = build_scenario(name)
    series = lindblad_propagate(spec.model, spec.initial.density_matrix(), 0.5, 5e-4)
    heat = accumulated_heat(series.states, spec.energy_operator)
    rates = [heat_flow(spec.model, rho, 'free', spec.energy_operator) for rho in series.states]
    energies = np.array([expectation(spec.energy_operator, rho).real for rho in series.states])
    closure = np.max(np.abs(integrated_heat(series.times, rates) - heat))
    assert closure <= 1e-6 * max(np.max(np.abs(energies)), 1.0)


@pytest.mark.slow
def test_constrained_refrigerator_follows_uncoupled_populations():
    spec = build_scenario('refrigerator_localized')
    operators = spec.operators(['populations'])
    cfg = McwfConfig(dt=1e-2, t_end=30.0, n_traj=4096, seed=2, output_stride=100)
    ensemble = McwfSolver(spec.model, cfg, ObservableSet(operators=operators), jobs=4).run(spec.initial)
    late = ensemble.times >= 25.0
    for label in spec.labels:
        name = f"population_{label}"
        uncoupled = spec.oracles[f"{name}_uncoupled"](ensemble.times[late])
        deviation = np.abs(ensemble.mean[name].to_numpy()[late] - uncoupled)
        assert np.all(deviation <= 3 * ensemble.stderr[name].to_numpy()[late] + 5e-3)
