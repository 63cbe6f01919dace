"""
Thermo Module
Thermodynamic bookkeeping along free and constrained evolutions:
- Internal energy, heat flow (free and constrained) and accumulated heat
- Von Neumann and relative entropies, entropy production, second-law residual
- Time-averaged heat, Gibbs states and constrained steady-state estimation
"""

__version__ = "0.1.0"

from .analyzer import (
    ThermoAnalyzer,
    ThermoRecord,
    accumulated_heat,
    entropy_production_rate,
    estimate_constrained_steady_state,
    gibbs_state,
    heat_flow,
    integrated_heat,
    internal_energy,
    relative_entropy,
    second_law_residual,
    thermal_qubit,
    time_average,
    von_neumann_entropy,
    work_rate,
)
