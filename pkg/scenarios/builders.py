"""
Scenario builders implementation

Every builder returns a ScenarioSpec: the Lindblad model (closed models
have no jumps), the physical energy operator used for heat, the initial
product state or mixture of product states, named observables and the
closed-form oracles available for the scenario.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from closed_dynamics import analytic_battery, swap_matrix
from open_dynamics import BranchMixture, LindbladModel
from tensor_core import (
    IDENTITY_2,
    KET_0,
    KET_1,
    PROJECTOR_1,
    PSI_PLUS,
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    OperatorMatrix,
    ProductState,
    SubsystemLayout,
    embed_local,
    expectation,
)
from thermo import thermal_qubit
from utils.helpers import ConfigError

logger = logging.getLogger(__name__)

OracleFn = Callable[[np.ndarray], np.ndarray]

PROJECTOR_0 = np.diag([1.0, 0.0]).astype(complex)

SCENARIO_DEFAULTS: Dict[str, Dict[str, float]] = {
    'battery': {'kappa': 1.0, 'omega': 1.0, 'epsilon': 0.0},
    'refrigerator_localized': {
        'omega_w': 1.0, 'omega_c': 0.687, 'g': 0.1,
        'p_w': 0.1, 'p_h': 0.1, 'p_c': 0.1,
        'T_w': 6.33, 'T_h': 3.25, 'T_c': 2.4,
    },
    'refrigerator_delocalized': {
        'omega_w': 1.0, 'omega_c': 0.687, 'g': 0.1, 'gamma': 0.01,
        'T_w': 6.33, 'T_h': 3.25, 'T_c': 2.4,
    },
    'dephasing': {'omega': 1.0, 'gamma': 1.0, 'lambda_init': 1.0},
    'swap_exchange': {'omega_A': 1.0, 'omega_B': 1.0, 'beta_A': 0.2, 'beta_B': 1.0, 'kappa': 1.0},
    'correlated_decay': {'gamma': 1.0},
}

# Parameters that must stay strictly positive (rates, temperatures, frequencies)
POSITIVE_PARAMETERS = {
    'omega', 'omega_w', 'omega_c', 'omega_A', 'omega_B', 'gamma', 'p_w', 'p_h', 'p_c',
    'T_w', 'T_h', 'T_c',
}

# Desk-scale run settings; full_n_traj reproduces the published ensemble sizes
RUN_DEFAULTS: Dict[str, Dict[str, Any]] = {
    'battery': {'dt': 1e-3, 't_end': 2 * math.pi, 'output_stride': 50, 'n_traj': 1, 'full_n_traj': 1,
                'observables': ['bloch_vectors', 'heat']},
    'refrigerator_localized': {'dt': 2e-3, 't_end': 30.0, 'output_stride': 100, 'n_traj': 10000,
                               'full_n_traj': 4000000,
                               'observables': ['populations', 'heat', 'constrained_heat']},
    'refrigerator_delocalized': {'dt': 0.02, 't_end': 300.0, 'output_stride': 100, 'n_traj': 50000,
                                 'full_n_traj': 500000,
                                 'observables': ['populations', 'heat', 'constrained_heat']},
    'dephasing': {'dt': 1e-3, 't_end': 2.0, 'output_stride': 10, 'n_traj': 20000, 'full_n_traj': 20000,
                  'observables': ['heat', 'constrained_heat', 'entropy']},
    'swap_exchange': {'dt': 1e-3, 't_end': 4 * math.pi, 'output_stride': 50, 'n_traj': 1, 'full_n_traj': 1,
                      'observables': ['heat', 'time_averaged_heat']},
    'correlated_decay': {'dt': 1e-3, 't_end': 5.0, 'output_stride': 25, 'n_traj': 10000, 'full_n_traj': 100000,
                         'observables': ['bell_overlap', 'populations']},
}


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """A fully built scenario."""
    name: str
    parameters: Dict[str, float]
    layout: SubsystemLayout
    model: LindbladModel
    energy_operator: OperatorMatrix
    initial: BranchMixture
    labels: Tuple[str, ...]
    oracles: Dict[str, OracleFn] = field(default_factory=dict)
    beta: Optional[float] = None

    @property
    def is_closed(self) -> bool:
        return not self.model.jumps

    def operators(self, groups: Sequence[str]) -> Dict[str, OperatorMatrix]:
        """
        Linear observables for the requested observable groups.

        Groups that are not linear in the state (heat, entropies, ...) are
        ignored here; they are derived from the energy and the density matrix.
        """
        result: Dict[str, OperatorMatrix] = {}
        for group in groups:
            if group == 'populations':
                for k, label in enumerate(self.labels):
                    result[f"population_{label}"] = embed_local(PROJECTOR_0, k, self.layout)
            elif group == 'bloch_vectors':
                for k, label in enumerate(self.labels):
                    for axis, pauli in zip('xyz', (SIGMA_X, SIGMA_Y, SIGMA_Z)):
                        result[f"bloch_{axis}_{label}"] = embed_local(pauli, k, self.layout)
            elif group == 'bell_overlap':
                if self.layout.dims != (2, 2):
                    raise ConfigError(f"observables: bell_overlap needs a two-qubit scenario, not {self.name}")
                result['bell_overlap'] = OperatorMatrix(np.outer(PSI_PLUS, PSI_PLUS.conj()), self.layout, True)
        return result


def resolve_parameters(name: str, overrides: Dict[str, Any]) -> Dict[str, float]:
    defaults = SCENARIO_DEFAULTS[name]
    parameters = dict(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"parameters.{key}: unknown parameter for scenario {name} "
                              f"(allowed: {', '.join(sorted(defaults))})")
        try:
            parameters[key] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"parameters.{key}: expected a number, got {value!r}")
        if not math.isfinite(parameters[key]):
            raise ConfigError(f"parameters.{key}: must be finite")
        if key in POSITIVE_PARAMETERS and parameters[key] <= 0:
            raise ConfigError(f"parameters.{key}: must be positive, got {value}")
    return parameters


def _qubit_local(amplitude: float) -> np.ndarray:
    """(|0> + a|1>) / norm."""
    vector = KET_0 + amplitude * KET_1
    return vector / np.linalg.norm(vector)


def _number_operator(layout: SubsystemLayout, frequencies: Sequence[float]) -> np.ndarray:
    return sum(w * embed_local(PROJECTOR_1, k, layout).entries for k, w in enumerate(frequencies))


def build_battery(kappa: float = 1.0, omega: float = 1.0, epsilon: float = 0.0) -> ScenarioSpec:
    """
    Two-qubit battery charged by H_D = kappa sigma^x (x) sigma^x.

    The energy operator is H_0 = omega (sigma^z (x) 1 + 1 (x) sigma^z); the
    initial locals are (|0> + epsilon |1>) / norm.
    """
    parameters = resolve_parameters('battery', {'kappa': kappa, 'omega': omega, 'epsilon': epsilon})
    layout = SubsystemLayout.qubits(2)
    drive = OperatorMatrix(parameters['kappa'] * np.kron(SIGMA_X, SIGMA_X), layout, True)
    energy = OperatorMatrix(parameters['omega'] * (np.kron(SIGMA_Z, IDENTITY_2) + np.kron(IDENTITY_2, SIGMA_Z)),
                            layout, True)
    local = _qubit_local(parameters['epsilon'])
    state = ProductState((local, local), layout)

    e0 = expectation(energy, state).real

    def heat_free(times: np.ndarray) -> np.ndarray:
        return np.array([expectation(energy, analytic_battery(parameters['kappa'], t, 'free', [local, local])).real
                         for t in times]) - e0

    def heat_constrained(times: np.ndarray) -> np.ndarray:
        # one propagated check over the whole horizon validates every earlier time
        analytic_battery(parameters['kappa'], float(np.max(times)), 'constrained', [local, local], verify=True)
        return np.array([expectation(energy, analytic_battery(parameters['kappa'], t, 'constrained',
                                                             [local, local], verify=False)).real
                         for t in times]) - e0

    oracles = {'heat_analytic_free': heat_free, 'heat_analytic_constrained': heat_constrained}
    return ScenarioSpec('battery', parameters, layout, LindbladModel.closed(drive), energy,
                        BranchMixture.pure(state), ('A', 'B'), oracles)


def reset_channel_jumps(rate: float, tau: np.ndarray, k: int, layout: SubsystemLayout) -> List[OperatorMatrix]:
    """
    Jump operators sqrt(p lambda_i) |i><j|_k of the reset channel p (tau (x) Tr_k rho - rho).

    tau must be diagonal in the computational basis (eigenvalues lambda_i).
    """
    jumps = []
    eigenvalues = np.real(np.diag(tau))
    for i in range(2):
        for j in range(2):
            op = np.zeros((2, 2), dtype=complex)
            op[i, j] = math.sqrt(rate * eigenvalues[i])
            jumps.append(embed_local(op, k, layout))
    return jumps


def _refrigerator_hamiltonian(parameters: Dict[str, float], layout: SubsystemLayout) -> OperatorMatrix:
    frequencies = (parameters['omega_w'], parameters['omega_h'], parameters['omega_c'])
    h0 = _number_operator(layout, frequencies)
    # |101> (index 5) <-> |010> (index 2) in w, h, c order
    coupling = np.zeros((8, 8), dtype=complex)
    coupling[5, 2] = coupling[2, 5] = parameters['g']
    return OperatorMatrix(h0 + coupling, layout, True)


def _common_beta(parameters: Dict[str, float]) -> Optional[float]:
    """Inverse temperature shared by the three baths, or None."""
    temperatures = {parameters[f"T_{label}"] for label in ('w', 'h', 'c')}
    return 1.0 / temperatures.pop() if len(temperatures) == 1 else None


def _uncoupled_population(tau_ground: float, rate: float, start: float) -> OracleFn:
    def oracle(times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return tau_ground + (start - tau_ground) * np.exp(-rate * times)
    return oracle


def build_refrigerator_localized(**overrides: float) -> ScenarioSpec:
    """
    Three-qubit refrigerator (w, h, c) with one thermal reset bath per qubit.

    omega_h is fixed by the resonance omega_h = omega_c + omega_w. The oracles
    are the ground-state populations of the uncoupled (g = 0) model.
    """
    parameters = resolve_parameters('refrigerator_localized', overrides)
    parameters['omega_h'] = parameters['omega_c'] + parameters['omega_w']
    layout = SubsystemLayout.qubits(3)
    hamiltonian = _refrigerator_hamiltonian(parameters, layout)
    labels = ('w', 'h', 'c')
    jumps: List[OperatorMatrix] = []
    oracles: Dict[str, OracleFn] = {}
    for k, label in enumerate(labels):
        tau = thermal_qubit(parameters[f"omega_{label}"], parameters[f"T_{label}"])
        jumps += reset_channel_jumps(parameters[f"p_{label}"], tau, k, layout)
        oracles[f"population_{label}_uncoupled"] = _uncoupled_population(tau[0, 0].real, parameters[f"p_{label}"], 0.5)
    plus = _qubit_local(1.0)
    state = ProductState((plus, plus, plus), layout)
    model = LindbladModel(hamiltonian, tuple(jumps), layout)
    # local resets preserve the global Gibbs state only without coupling
    beta = _common_beta(parameters) if parameters['g'] == 0 else None
    return ScenarioSpec('refrigerator_localized', parameters, layout, model, hamiltonian,
                        BranchMixture.pure(state), labels, oracles, beta)


def delocalized_basis() -> List[np.ndarray]:
    """The eight joint eigenvectors |1>, ..., |8> of the coupled refrigerator (w, h, c order)."""
    def ket(index: int) -> np.ndarray:
        vector = np.zeros(8, dtype=complex)
        vector[index] = 1.0
        return vector
    root = math.sqrt(2.0)
    return [
        ket(0b000), ket(0b100), ket(0b111), ket(0b001), ket(0b110), ket(0b011),
        (ket(0b101) - ket(0b010)) / root,
        (ket(0b101) + ket(0b010)) / root,
    ]


def delocalized_operators() -> Dict[Tuple[str, int], np.ndarray]:
    """
    Lowering operators A_{k, omega_k + s g} keyed by (bath, s) with s in {0, 1, -1}.
    """
    basis = delocalized_basis()
    ketbra = lambda i, j: np.outer(basis[i - 1], basis[j - 1].conj())
    root = math.sqrt(2.0)
    return {
        ('w', 0): ketbra(1, 2) + ketbra(6, 3),
        ('w', 1): (ketbra(4, 8) - ketbra(7, 5)) / root,
        ('w', -1): (ketbra(4, 7) + ketbra(8, 5)) / root,
        ('h', 0): ketbra(2, 5) + ketbra(4, 6),
        ('h', 1): (ketbra(7, 3) + ketbra(1, 8)) / root,
        ('h', -1): (ketbra(8, 3) - ketbra(1, 7)) / root,
        ('c', 0): ketbra(1, 4) + ketbra(5, 3),
        ('c', 1): (ketbra(2, 8) - ketbra(7, 6)) / root,
        ('c', -1): (ketbra(2, 7) + ketbra(8, 6)) / root,
    }


def delocalized_rate(gamma: float, omega: float, beta: float) -> float:
    """Gamma_{k,omega} = gamma omega^3 e^{beta omega/2} sinh(beta omega/2), defined for both signs of omega."""
    return gamma * omega ** 3 * math.exp(beta * omega / 2) * math.sinh(beta * omega / 2)


def build_refrigerator_delocalized(**overrides: float) -> ScenarioSpec:
    """
    Three-qubit refrigerator with delocalized thermalization.

    Jumps are sqrt(Gamma_{k,w}) A_{k,w} and sqrt(Gamma_{k,-w}) A_{k,w}^dag for
    w in {omega_k, omega_k + g, omega_k - g}.
    """
    parameters = resolve_parameters('refrigerator_delocalized', overrides)
    parameters['omega_h'] = parameters['omega_c'] + parameters['omega_w']
    layout = SubsystemLayout.qubits(3)
    hamiltonian = _refrigerator_hamiltonian(parameters, layout)
    labels = ('w', 'h', 'c')
    jumps: List[OperatorMatrix] = []
    for (bath, sign), lowering in delocalized_operators().items():
        omega = parameters[f"omega_{bath}"] + sign * parameters['g']
        beta = 1.0 / parameters[f"T_{bath}"]
        if omega <= 0:
            raise ConfigError(f"parameters.g: transition frequency of bath {bath} must stay positive")
        jumps.append(OperatorMatrix(math.sqrt(delocalized_rate(parameters['gamma'], omega, beta)) * lowering, layout))
        jumps.append(OperatorMatrix(math.sqrt(delocalized_rate(parameters['gamma'], -omega, beta))
                                    * lowering.conj().T, layout))
    plus = _qubit_local(1.0)
    state = ProductState((plus, plus, plus), layout)
    model = LindbladModel(hamiltonian, tuple(jumps), layout)
    return ScenarioSpec('refrigerator_delocalized', parameters, layout, model, hamiltonian,
                        BranchMixture.pure(state), labels, beta=_common_beta(parameters))


def build_dephasing(omega: float = 1.0, gamma: float = 1.0, lambda_init: float = 1.0) -> ScenarioSpec:
    """Correlated dephasing L = sqrt(gamma)(Z1 + 1Z) with H = omega ZZ."""
    parameters = resolve_parameters('dephasing', {'omega': omega, 'gamma': gamma, 'lambda_init': lambda_init})
    layout = SubsystemLayout.qubits(2)
    hamiltonian = OperatorMatrix(parameters['omega'] * np.kron(SIGMA_Z, SIGMA_Z), layout, True)
    jump = OperatorMatrix(math.sqrt(parameters['gamma']) * (np.kron(SIGMA_Z, IDENTITY_2) + np.kron(IDENTITY_2, SIGMA_Z)),
                          layout, True)
    if not hamiltonian.commutes_with(jump):
        raise ConfigError("dephasing: H and L must commute")
    local = _qubit_local(parameters['lambda_init'])
    state = ProductState((local, local), layout)
    model = LindbladModel(hamiltonian, (jump,), layout)
    oracles = {'heat_analytic_free': lambda times: np.zeros(len(times))}
    return ScenarioSpec('dephasing', parameters, layout, model, hamiltonian, BranchMixture.pure(state),
                        ('A', 'B'), oracles)


def _gibbs_excited(beta: float, omega: float) -> float:
    boltzmann = math.exp(-beta * omega)
    return boltzmann / (1.0 + boltzmann)


def swap_heat_free(times: np.ndarray, omega_a: float, omega_b: float, beta_a: float,
                   beta_b: float, kappa: float) -> np.ndarray:
    """Q(t) = omega_A sin^2(kappa t) (p_B - p_A) with p_X the thermal excited population."""
    times = np.asarray(times, dtype=float)
    return omega_a * np.sin(kappa * times) ** 2 * (_gibbs_excited(beta_b, omega_b) - _gibbs_excited(beta_a, omega_a))


def swap_heat_constrained(times: np.ndarray, omega_a: float, omega_b: float, beta_a: float,
                          beta_b: float, kappa: float) -> np.ndarray:
    """Constrained heat of the two-branch swap evolution."""
    times = np.asarray(times, dtype=float)
    z_a = 1.0 + math.exp(-beta_a * omega_a)
    z_b = 1.0 + math.exp(-beta_b * omega_b)
    q0 = 1.0 / math.sqrt(z_a)
    q1 = math.exp(-beta_a * omega_a / 2) / math.sqrt(z_a)
    boltzmann_b = math.exp(-beta_b * omega_b)
    mean_a = omega_a * math.exp(-beta_a * omega_a) / z_a
    cos0 = np.cos(q0 * kappa * times) ** 2
    cos1 = np.cos(q1 * kappa * times) ** 2
    sin1 = np.sin(q1 * kappa * times) ** 2
    return (mean_a * (cos0 + boltzmann_b * cos1) / z_b
            + omega_a * boltzmann_b / z_b * sin1 - mean_a)


def swap_heat_grid(ratios: Sequence[float], times: np.ndarray, kappa: float = 1.0,
                   omega: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Q and Q_ms on a (T_B/T_A, t) grid with T_A = 1 and omega_A = omega_B.

    Returns:
        Tuple of arrays of shape (len(ratios), len(times))
    """
    free = np.array([swap_heat_free(times, omega, omega, 1.0, 1.0 / r, kappa) for r in ratios])
    constrained = np.array([swap_heat_constrained(times, omega, omega, 1.0, 1.0 / r, kappa) for r in ratios])
    return free, constrained


def build_swap_exchange(omega_A: float = 1.0, omega_B: float = 1.0, beta_A: float = 0.2,
                        beta_B: float = 1.0, kappa: float = 1.0) -> ScenarioSpec:
    """
    Qubit A exchanging energy with a two-level environment B through H = kappa V.

    A starts in |psi_A> ~ |0> + e^{-beta_A omega_A / 2}|1>, B in its thermal
    state, represented as the two branches |psi_A>|0> and |psi_A>|1>. Heat is
    measured with H_A = omega_A |1><1| on A.
    """
    parameters = resolve_parameters('swap_exchange', {'omega_A': omega_A, 'omega_B': omega_B, 'beta_A': beta_A,
                                            'beta_B': beta_B, 'kappa': kappa})
    layout = SubsystemLayout.qubits(2)
    hamiltonian = OperatorMatrix(parameters['kappa'] * swap_matrix(2), layout, True)
    energy = embed_local(parameters['omega_A'] * PROJECTOR_1, 0, layout)
    psi_a = _qubit_local(math.exp(-parameters['beta_A'] * parameters['omega_A'] / 2))
    excited_b = _gibbs_excited(parameters['beta_B'], parameters['omega_B'])
    initial = BranchMixture((1.0 - excited_b, excited_b),
                            (ProductState((psi_a, KET_0), layout), ProductState((psi_a, KET_1), layout)))
    args = (parameters['omega_A'], parameters['omega_B'], parameters['beta_A'], parameters['beta_B'],
            parameters['kappa'])
    oracles = {
        'heat_analytic_free': lambda times: swap_heat_free(times, *args),
        'heat_analytic_constrained': lambda times: swap_heat_constrained(times, *args),
    }
    return ScenarioSpec('swap_exchange', parameters, layout, LindbladModel.closed(hamiltonian), energy,
                        initial, ('A', 'B'), oracles)


def build_correlated_decay(gamma: float = 1.0) -> ScenarioSpec:
    """Collective decay L = sqrt(gamma)(sigma^- (x) 1 + 1 (x) sigma^-) of |11> with H = 0."""
    parameters = resolve_parameters('correlated_decay', {'gamma': gamma})
    layout = SubsystemLayout.qubits(2)
    hamiltonian = OperatorMatrix(np.zeros((4, 4)), layout, True)
    jump = OperatorMatrix(math.sqrt(parameters['gamma'])
                          * (np.kron(SIGMA_MINUS, IDENTITY_2) + np.kron(IDENTITY_2, SIGMA_MINUS)), layout)
    state = ProductState((KET_1, KET_1), layout)
    model = LindbladModel(hamiltonian, (jump,), layout)
    # heat is measured with the bare qubit energies
    energy = OperatorMatrix(_number_operator(layout, (1.0, 1.0)), layout, True)
    return ScenarioSpec('correlated_decay', parameters, layout, model, energy, BranchMixture.pure(state),
                        ('A', 'B'))


BUILDERS: Dict[str, Callable[..., ScenarioSpec]] = {
    'battery': build_battery,
    'refrigerator_localized': build_refrigerator_localized,
    'refrigerator_delocalized': build_refrigerator_delocalized,
    'dephasing': build_dephasing,
    'swap_exchange': build_swap_exchange,
    'correlated_decay': build_correlated_decay,
}


def build_scenario(name: str, **overrides: Any) -> ScenarioSpec:
    """
    Build a scenario by name.

    Raises:
        ConfigError: unknown scenario or parameter, or invalid parameter value
    """
    if name not in BUILDERS:
        raise ConfigError(f"scenario: unknown scenario {name!r} (allowed: {', '.join(sorted(BUILDERS))})")
    resolve_parameters(name, overrides)
    logger.info(f"Building scenario {name}")
    return BUILDERS[name](**overrides)
