"""
Tensor Core Module
Dense linear algebra for small multipartite Hilbert spaces:
- Tensor products and partial traces
- Expectation values on product states and density matrices
- Reduced operators and the constrained Hamiltonian
"""

__version__ = "0.1.0"

from .operators import (
    IDENTITY_2,
    KET_0,
    KET_1,
    KET_PLUS,
    PROJECTOR_1,
    PSI_PLUS,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    OperatorMatrix,
    ProductState,
    SubsystemLayout,
    batched_kron,
    batched_reduced_operator,
    bloch_vector,
    constrained_hamiltonian,
    embed_local,
    expectation,
    partial_trace,
    reduced_operator,
    sandwich_blocks,
    subsystem_tensor,
    tensor_product,
)
