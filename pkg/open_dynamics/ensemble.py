"""
Trajectory ensembles: chunk statistics, their merge and the averaged result
"""
import logging
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from tensor_core import DensityMatrix, SubsystemLayout
from utils.helpers import DimensionMismatchError

logger = logging.getLogger(__name__)

TIME_GRID_TOL = 1e-12


@dataclass
class TrajectoryBatch:
    """
    Statistics of a group of trajectories on a common time grid.

    mean and m2 (sum of squared deviations from the mean) have shape
    (T, n_observables); two batches merge with the pairwise update, so the
    merged statistics do not depend on how trajectories were grouped.
    """
    times: np.ndarray
    names: List[str]
    count: int
    mean: np.ndarray
    m2: np.ndarray
    density_sum: Optional[np.ndarray]
    jump_counts: np.ndarray
    indices: List[int]
    values: Optional[np.ndarray] = None

    @classmethod
    def from_values(cls, times: np.ndarray, names: Sequence[str], values: np.ndarray,
                    density_sum: Optional[np.ndarray], jump_counts: np.ndarray,
                    indices: Sequence[int], keep_trajectories: bool = False) -> 'TrajectoryBatch':
        """
        Args:
            values (np.ndarray): (T, J, n_observables) samples
        """
        mean = values.mean(axis=1)
        m2 = ((values - mean[:, None, :]) ** 2).sum(axis=1)
        kept = np.transpose(values, (1, 0, 2)).copy() if keep_trajectories else None
        return cls(np.asarray(times, dtype=float), list(names), values.shape[1], mean, m2,
                   density_sum, np.asarray(jump_counts), list(indices), kept)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, index: int = 0) -> 'TrajectoryBatch':
        """Single trajectory given as a frame with a 't' column."""
        if 't' not in frame.columns:
            raise DimensionMismatchError("Trajectory frame needs a 't' column")
        names = [c for c in frame.columns if c != 't']
        values = frame[names].to_numpy(dtype=float)[:, None, :]
        return cls.from_values(frame['t'].to_numpy(dtype=float), names, values, None,
                               np.zeros(0, dtype=np.int64), [index], keep_trajectories=True)

    def merge(self, other: 'TrajectoryBatch') -> 'TrajectoryBatch':
        if self.names != other.names:
            raise DimensionMismatchError(f"Observable sets differ: {self.names} vs {other.names}")
        _check_grid(self.times, other.times)
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / count)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / count)
        density = None
        if self.density_sum is not None and other.density_sum is not None:
            density = self.density_sum + other.density_sum
        jumps = _add_counts(self.jump_counts, other.jump_counts)
        values = None
        if self.values is not None and other.values is not None:
            values = np.concatenate([self.values, other.values], axis=0)
        return TrajectoryBatch(self.times, self.names, count, mean, m2, density, jumps,
                               self.indices + other.indices, values)

    def trajectory_frame(self, i: int) -> pd.DataFrame:
        if self.values is None:
            raise ValueError("Per-trajectory values were not kept for this batch")
        frame = pd.DataFrame(self.values[i], columns=self.names)
        frame.insert(0, 't', self.times)
        return frame


def _check_grid(first: np.ndarray, second: np.ndarray) -> None:
    if first.shape != second.shape or np.max(np.abs(first - second), initial=0.0) > TIME_GRID_TOL:
        raise DimensionMismatchError("Trajectories are sampled on different time grids")


def _add_counts(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    if first.size == 0:
        return np.array(second)
    if second.size == 0:
        return np.array(first)
    return first + second


@dataclass
class TrajectoryEnsemble:
    """
    Averaged trajectory ensemble.

    mean and stderr are frames with a 't' column and one column per
    observable; density holds the ensemble-mean density matrix per output
    time when the trajectories carried their states.
    """
    mean: pd.DataFrame
    stderr: pd.DataFrame
    n_traj: int
    density: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    trajectories: Optional[pd.DataFrame] = None

    @property
    def times(self) -> np.ndarray:
        return self.mean['t'].to_numpy()

    @property
    def names(self) -> List[str]:
        return [c for c in self.mean.columns if c != 't']

    def density_matrices(self, layout: SubsystemLayout) -> List[DensityMatrix]:
        if self.density is None:
            raise ValueError("Ensemble carries no density matrices")
        return [DensityMatrix(0.5 * (rho + rho.conj().T), layout) for rho in self.density]

    @classmethod
    def from_batch(cls, batch: TrajectoryBatch, metadata: Optional[Dict[str, Any]] = None) -> 'TrajectoryEnsemble':
        n = batch.count
        if n > 1:
            stderr = np.sqrt(np.maximum(batch.m2, 0.0) / (n - 1) / n)
        else:
            stderr = np.zeros_like(batch.mean)
        mean_frame = pd.DataFrame(batch.mean, columns=batch.names)
        mean_frame.insert(0, 't', batch.times)
        stderr_frame = pd.DataFrame(stderr, columns=batch.names)
        stderr_frame.insert(0, 't', batch.times)
        density = batch.density_sum / n if batch.density_sum is not None else None

        trajectories = None
        if batch.values is not None:
            frames = []
            for i, index in enumerate(batch.indices):
                frame = batch.trajectory_frame(i)
                frame.insert(0, 'traj', index)
                frames.append(frame)
            trajectories = pd.concat(frames, ignore_index=True)

        info = dict(metadata or {})
        info['n_traj'] = n
        info['jump_counts'] = [int(c) for c in batch.jump_counts]
        info['total_jumps'] = int(np.sum(batch.jump_counts))
        return cls(mean_frame, stderr_frame, n, density, info, trajectories)


def ensemble_average(trajectories: Sequence[Union[TrajectoryBatch, pd.DataFrame]],
                     metadata: Optional[Dict[str, Any]] = None) -> TrajectoryEnsemble:
    """
    Pointwise mean and standard error (sample stddev / sqrt(n)) over trajectories.

    Args:
        trajectories: Chunk batches, or single-trajectory frames with a 't'
            column, merged in the given order
        metadata (dict): Extra run information stored on the ensemble

    Returns:
        TrajectoryEnsemble: Aggregated statistics

    Raises:
        ValueError: empty ensemble
        DimensionMismatchError: unequal time grids or observable sets
    """
    if len(trajectories) == 0:
        raise ValueError("Cannot average an empty ensemble")
    batches = [TrajectoryBatch.from_frame(item, index=i) if isinstance(item, pd.DataFrame) else item
               for i, item in enumerate(trajectories)]
    merged = reduce(lambda first, second: first.merge(second), batches)
    return TrajectoryEnsemble.from_batch(merged, metadata)


def combine_weighted(ensembles: Sequence[TrajectoryEnsemble], weights: Sequence[float]) -> TrajectoryEnsemble:
    """
    Mixture of independently propagated branches.

    mean = sum_b w_b mean_b, stderr = sqrt(sum_b w_b^2 stderr_b^2).
    """
    if len(ensembles) != len(weights) or not ensembles:
        raise DimensionMismatchError("One weight per branch ensemble is required")
    first = ensembles[0]
    for other in ensembles[1:]:
        _check_grid(first.times, other.times)
    names = first.names
    mean = sum(w * e.mean[names].to_numpy() for w, e in zip(weights, ensembles))
    variance = sum((w ** 2) * e.stderr[names].to_numpy() ** 2 for w, e in zip(weights, ensembles))
    mean_frame = pd.DataFrame(mean, columns=names)
    mean_frame.insert(0, 't', first.times)
    stderr_frame = pd.DataFrame(np.sqrt(variance), columns=names)
    stderr_frame.insert(0, 't', first.times)

    density = None
    if all(e.density is not None for e in ensembles):
        density = sum(w * e.density for w, e in zip(weights, ensembles))

    trajectories = None
    if all(e.trajectories is not None for e in ensembles):
        frames = []
        for b, e in enumerate(ensembles):
            frame = e.trajectories.copy()
            frame.insert(0, 'branch', b)
            frames.append(frame)
        trajectories = pd.concat(frames, ignore_index=True)

    metadata = dict(first.metadata)
    metadata['n_traj'] = sum(e.n_traj for e in ensembles)
    metadata['branch_weights'] = [float(w) for w in weights]
    counts = [np.asarray(e.metadata.get('jump_counts', []), dtype=np.int64) for e in ensembles]
    metadata['jump_counts'] = [int(c) for c in reduce(_add_counts, counts)]
    metadata['total_jumps'] = int(sum(e.metadata.get('total_jumps', 0) for e in ensembles))
    return TrajectoryEnsemble(mean_frame, stderr_frame, metadata['n_traj'], density, metadata, trajectories)
