"""
Scenarios Module
Builders for the studied systems:
- Two-qubit quantum battery
- Three-qubit refrigerator with localized and delocalized thermalization
- Correlated dephasing, swap exchange with a two-level bath, correlated decay
"""

__version__ = "0.1.0"

from .builders import (
    BUILDERS,
    RUN_DEFAULTS,
    SCENARIO_DEFAULTS,
    ScenarioSpec,
    build_battery,
    build_correlated_decay,
    build_dephasing,
    build_refrigerator_delocalized,
    build_refrigerator_localized,
    build_scenario,
    build_swap_exchange,
    delocalized_basis,
    delocalized_operators,
    delocalized_rate,
    reset_channel_jumps,
    resolve_parameters,
    swap_heat_constrained,
    swap_heat_free,
    swap_heat_grid,
)
