"""
Open Dynamics Module
Dissipative engines:
- Lindblad models, the lambda shift and a dense Runge-Kutta integrator
- Constrained generator pieces on product states (effective Hamiltonian, jumps, Kraus step)
- Constrained and unconstrained Monte Carlo wavefunction ensembles
"""

__version__ = "0.1.0"

from .ensemble import TrajectoryBatch, TrajectoryEnsemble, combine_weighted, ensemble_average
from .lindblad import (
    DensitySeries,
    LindbladModel,
    apply_constrained_jump,
    constrained_jump_probabilities,
    constrained_jump_weights,
    constrained_kraus_branches,
    dissipator,
    effective_hamiltonian_constrained,
    jump_rate_bound,
    lambda_shift,
    lindblad_propagate,
    lindblad_rhs,
    lindblad_steady_state,
    liouvillian,
    separable_lindblad_rhs,
    shift_operators,
)
from .mcwf import (
    MAX_JUMP_LOAD,
    BranchMixture,
    McwfConfig,
    McwfSolver,
    ObservableSet,
    ProductKernel,
    jump_substeps,
    mcwf_run_trajectory,
    prepare_model,
    run_chunk,
)
