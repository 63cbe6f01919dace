"""
Closed Dynamics Module
Propagators for closed systems:
- Exact free Schrodinger evolution
- Separability Schrodinger equation (exponential midpoint scheme)
- Closed-form battery and swap reference solutions
"""

__version__ = "0.1.0"

from .propagator import (
    SseStepConfig,
    StateSeries,
    analytic_battery,
    analytic_swap_constrained,
    analytic_swap_free_reduced,
    hamiltonian_generators,
    midpoint_product_step,
    normalize_locals,
    output_indices,
    schrodinger_propagate,
    schrodinger_series,
    sse_propagate,
    sse_rhs,
    step_grid,
    swap_matrix,
    unitary_density_series,
)
