"""
Shared helpers: exception hierarchy, random streams and small numerics
"""
from typing import List, Sequence

import numpy as np
from scipy import linalg

# Numerical thresholds shared by the engines
SANDWICH_FLOOR = 1e-30
HERMITIAN_RTOL = 1e-12
DENSITY_HERMITIAN_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-9


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""


class DimensionMismatchError(SimulationError, ValueError):
    """Operand shapes do not match a subsystem layout."""


class DegenerateSandwichError(SimulationError, ArithmeticError):
    """A normalizing denominator (norm, overlap or mean value) vanished."""


class NonHermitianError(SimulationError, ValueError):
    """An operator that must be Hermitian is not."""


class NumericalInstabilityError(SimulationError, FloatingPointError):
    """Non-finite values or loss of positivity during propagation."""


class ConfigError(SimulationError, ValueError):
    """A run configuration violates the published schema."""


class AnalyticRangeError(SimulationError, ValueError):
    """A closed-form solution was requested outside its range of validity."""


class NonProductStateError(SimulationError, ValueError):
    """A constrained quantity was requested for a state that is not a product state."""


class RunError(SimulationError):
    """A run failed; carries scenario and time-step context."""


def trajectory_rng(seed: int, traj_index: int) -> np.random.Generator:
    """
    Random stream of one trajectory.

    The stream depends only on (seed, traj_index), so any scheduling of the
    trajectories reproduces the same draws.

    Args:
        seed (int): Master seed of the run
        traj_index (int): Global index of the trajectory

    Returns:
        np.random.Generator: Counter-based Philox generator
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(traj_index),))
    return np.random.Generator(np.random.Philox(sequence))


def batched_expm(generators: np.ndarray) -> np.ndarray:
    """Matrix exponential over the last two axes of a stack of matrices."""
    return linalg.expm(generators)


def is_hermitian(matrix: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    scale = max(float(np.max(np.abs(matrix))), 1.0) if matrix.size else 1.0
    return float(np.max(np.abs(matrix - matrix.conj().T), initial=0.0)) <= rtol * scale


def check_finite(values: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalInstabilityError(f"Non-finite values encountered in {context}")


def chunk_ranges(n_items: int, chunk_size: int) -> List[range]:
    """Split range(n_items) into consecutive ranges of at most chunk_size."""
    return [range(start, min(start + chunk_size, n_items))
            for start in range(0, n_items, chunk_size)]


def hermitian_part(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def weighted_choice(weights: Sequence[float], draw: float) -> int:
    """Index picked from normalized weights with a uniform draw in [0, 1)."""
    cumulative = np.cumsum(weights)
    index = int(np.searchsorted(cumulative, draw * cumulative[-1], side='right'))
    return min(index, len(weights) - 1)
