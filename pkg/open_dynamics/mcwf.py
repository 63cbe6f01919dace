"""
Constrained Monte Carlo wavefunction engine

Trajectories are propagated in chunks: the product-state locals of a chunk
are stacked as (J, d_k) arrays and every reduced operator, jump weight and
observable is evaluated row-wise. A chunk of one trajectory is the
single-trajectory run. The unconstrained mode reuses the same machinery on
a one-subsystem layout, where reduced operators are the full operators and
the constrained jump reduces to the ordinary MCWF jump.
"""
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from closed_dynamics import midpoint_product_step, normalize_locals, output_indices, step_grid
from tensor_core import (
    DensityMatrix,
    OperatorMatrix,
    ProductState,
    SubsystemLayout,
    batched_kron,
    sandwich_blocks,
    subsystem_tensor,
)
from utils.helpers import (
    SANDWICH_FLOOR,
    ConfigError,
    DegenerateSandwichError,
    DimensionMismatchError,
    check_finite,
    chunk_ranges,
    trajectory_rng,
    weighted_choice,
)

from .ensemble import TrajectoryBatch, TrajectoryEnsemble, combine_weighted, ensemble_average
from .lindblad import LindbladModel, jump_rate_bound, lambda_shift, shift_operators

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger(__name__)

JUMP_RULES = ('segment', 'per_step')
SAMPLING_MODES = ('exhaustive', 'sample')
MAX_EXHAUSTIVE_BRANCHES = 4
MAX_JUMP_LOAD = 0.05


@dataclass(frozen=True)
class McwfConfig:
    """
    Settings of a trajectory ensemble.

    lambda_factor c sets l_k = c * ||L_k||; c = 0 disables the shift.
    chunk_size fixes how trajectories are grouped, independently of the
    number of worker processes. Each dt step is split into sub-steps so that
    the expected number of jumps per sub-step stays below max_jump_load.
    """
    dt: float
    t_end: float
    n_traj: int
    seed: int
    lambda_factor: float = 10.0
    jump_rule: str = 'segment'
    output_stride: int = 1
    chunk_size: int = 256
    unconstrained: bool = False
    keep_trajectories: bool = False
    max_jump_load: float = MAX_JUMP_LOAD

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ConfigError(f"t_end must be non-negative, got {self.t_end}")
        if int(self.n_traj) < 1:
            raise ConfigError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.lambda_factor < 0:
            raise ConfigError(f"lambda_factor must be >= 0, got {self.lambda_factor}")
        if self.jump_rule not in JUMP_RULES:
            raise ConfigError(f"jump_rule must be one of {JUMP_RULES}, got {self.jump_rule!r}")
        if int(self.output_stride) < 1 or int(self.chunk_size) < 1:
            raise ConfigError("output_stride and chunk_size must be >= 1")
        if not 0 < self.max_jump_load <= 1:
            raise ConfigError(f"max_jump_load must lie in (0, 1], got {self.max_jump_load}")


@dataclass(frozen=True)
class ObservableSet:
    """
    What a trajectory records at every output time.

    operators are linear observables; energy adds the 'energy' and 'heat'
    channels (heat = E(t) - E(0) on each trajectory); heat_flow integrates the
    trace-preserving constrained heat rate as 'constrained_heat'.
    """
    operators: Dict[str, OperatorMatrix] = field(default_factory=dict)
    energy: Optional[OperatorMatrix] = None
    heat_flow: bool = False

    def __post_init__(self):
        if self.heat_flow and self.energy is None:
            raise ValueError("heat_flow integration needs an energy operator")

    def names(self) -> List[str]:
        names = list(self.operators)
        if self.energy is not None:
            names += ['energy', 'heat']
        if self.heat_flow:
            names.append('constrained_heat')
        return names


@dataclass(frozen=True, eq=False)
class BranchMixture:
    """Weighted mixture of pure product states used as an initial condition."""
    weights: Tuple[float, ...]
    branches: Tuple[ProductState, ...]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if len(weights) != len(self.branches) or len(weights) == 0:
            raise DimensionMismatchError("A mixture needs one weight per branch")
        if np.any(weights < 0) or not weights.sum() > 0:
            raise ValueError("Mixture weights must be non-negative with a positive sum")
        layouts = {b.layout.dims for b in self.branches}
        if len(layouts) != 1:
            raise DimensionMismatchError(f"Mixture branches live on different layouts: {layouts}")
        object.__setattr__(self, 'weights', tuple(float(w) for w in weights / weights.sum()))
        object.__setattr__(self, 'branches', tuple(b.normalized() for b in self.branches))

    @classmethod
    def pure(cls, state: ProductState) -> 'BranchMixture':
        return cls((1.0,), (state,))

    @property
    def layout(self) -> SubsystemLayout:
        return self.branches[0].layout

    def density_matrix(self) -> DensityMatrix:
        entries = sum(w * b.density_matrix().entries for w, b in zip(self.weights, self.branches))
        return DensityMatrix(entries, self.layout)


class ProductKernel:
    """Row-wise constrained quantities for a stack of product states."""

    def __init__(self, model: LindbladModel):
        self.model = model
        self.layout = model.layout
        self.n = self.layout.n_subsystems
        self.logger = logging.getLogger(__name__)

        layout = self.layout
        self.jump_entries = [op.entries for op in model.jumps]
        self.ldl_entries = [op.entries.conj().T @ op.entries for op in model.jumps]
        self.h_tensors = [subsystem_tensor(model.hamiltonian.entries, layout, d) for d in range(self.n)]
        self.jump_tensors = [[subsystem_tensor(l, layout, d) for d in range(self.n)] for l in self.jump_entries]
        self.ldl_tensors = [[subsystem_tensor(l, layout, d) for d in range(self.n)] for l in self.ldl_entries]

    @property
    def n_jumps(self) -> int:
        return len(self.jump_entries)

    def _others(self, locals_batch: List[np.ndarray]) -> List[np.ndarray]:
        batch = locals_batch[0].shape[0]
        return [batched_kron([locals_batch[j] for j in range(self.n) if j != d], batch)
                for d in range(self.n)]

    def full_vectors(self, locals_batch: List[np.ndarray]) -> np.ndarray:
        """Normalized joint vectors, shape (J, D)."""
        return batched_kron(normalize_locals(locals_batch), locals_batch[0].shape[0])

    @staticmethod
    def means(full: np.ndarray, entries: np.ndarray) -> np.ndarray:
        return np.einsum('ja,ab,jb->j', full.conj(), entries, full)

    def _checked_means(self, full: np.ndarray, k: int) -> np.ndarray:
        mean = self.means(full, self.jump_entries[k])
        if self.n > 1 and np.any(np.abs(mean) < SANDWICH_FLOOR):
            raise DegenerateSandwichError(f"degenerate sandwich: <L_{k}> vanishes; apply a lambda shift")
        return mean

    def generators(self, locals_batch: List[np.ndarray]) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        Local blocks G_d = (H)_d - (i/2) sum_k (L_k^dag L_k)_d and the scalar
        (i(n-1)/2) sum_k <L_k^dag L_k> of the non-Hermitian effective Hamiltonian.
        """
        others = self._others(locals_batch)
        blocks = [sandwich_blocks(self.h_tensors[d], others[d]) for d in range(self.n)]
        scalar = np.zeros(locals_batch[0].shape[0], dtype=complex)
        if not self.n_jumps:
            return blocks, scalar
        full = self.full_vectors(locals_batch)
        for k in range(self.n_jumps):
            scalar += 0.5j * (self.n - 1) * self.means(full, self.ldl_entries[k]).real
            for d in range(self.n):
                blocks[d] = blocks[d] - 0.5j * sandwich_blocks(self.ldl_tensors[k][d], others[d])
        return blocks, scalar

    def _moved(self, locals_n: List[np.ndarray], others: List[np.ndarray], tensors) -> List[np.ndarray]:
        return [np.einsum('jab,jb->ja', sandwich_blocks(tensors[d], others[d]), locals_n[d])
                for d in range(self.n)]

    def jump_weights(self, locals_batch: List[np.ndarray]) -> np.ndarray:
        """Unnormalized constrained jump weights p~_k, shape (J, K)."""
        locals_n = normalize_locals(locals_batch)
        others = self._others(locals_n)
        full = batched_kron(locals_n, locals_n[0].shape[0])
        weights = np.ones((full.shape[0], self.n_jumps))
        for k in range(self.n_jumps):
            mean = self._checked_means(full, k)
            for moved in self._moved(locals_n, others, self.jump_tensors[k]):
                weights[:, k] *= np.einsum('ja,ja->j', moved.conj(), moved).real
            weights[:, k] /= np.abs(mean) ** (2 * (self.n - 1))
        return weights

    def apply_jumps(self, locals_batch: List[np.ndarray], channels: np.ndarray) -> List[np.ndarray]:
        """Constrained jump of every row through its channel, renormalized."""
        locals_n = normalize_locals(locals_batch)
        others = self._others(locals_n)
        full = batched_kron(locals_n, locals_n[0].shape[0])
        result = [np.array(v) for v in locals_n]
        for k in np.unique(channels):
            rows = channels == k
            mean = self._checked_means(full[rows], int(k))
            sub_locals = [v[rows] for v in locals_n]
            sub_others = [o[rows] for o in others]
            moved = self._moved(sub_locals, sub_others, self.jump_tensors[int(k)])
            moved[0] = moved[0] / (mean ** (self.n - 1))[:, None]
            for d in range(self.n):
                result[d][rows] = moved[d]
        return normalize_locals(result)

    def _local_sum(self, locals_n: List[np.ndarray], others: List[np.ndarray], tensors) -> np.ndarray:
        # sum_d 1 (x) (O)_d (x) 1 applied to the product state
        batch = locals_n[0].shape[0]
        moved = self._moved(locals_n, others, tensors)
        total = 0
        for d in range(self.n):
            replaced = list(locals_n)
            replaced[d] = moved[d]
            total = total + batched_kron(replaced, batch)
        return total

    def heat_rate(self, locals_batch: List[np.ndarray], energy: np.ndarray) -> np.ndarray:
        """
        Tr(L^_ms(rho) E) row-wise, with L^_ms the trace-preserving constrained
        generator on the pure product state of each row.
        """
        locals_n = normalize_locals(locals_batch)
        batch = locals_n[0].shape[0]
        others = self._others(locals_n)
        full = batched_kron(locals_n, batch)
        e_psi = full @ energy.T
        e_mean = np.einsum('ja,ja->j', full.conj(), e_psi).real

        h_ms_psi = self._local_sum(locals_n, others, self.h_tensors)
        rate = -2.0 * np.einsum('ja,ja->j', h_ms_psi.conj(), e_psi).imag
        for k in range(self.n_jumps):
            mean = self._checked_means(full, k)
            ldl_mean = self.means(full, self.ldl_entries[k]).real
            kraus_psi = batched_kron(self._moved(locals_n, others, self.jump_tensors[k]), batch)
            kraus_psi = kraus_psi / (mean ** (self.n - 1))[:, None]
            weight = np.einsum('ja,ja->j', kraus_psi.conj(), kraus_psi).real
            jump_term = np.einsum('ja,ja->j', kraus_psi.conj(), kraus_psi @ energy.T).real
            g_psi = self._local_sum(locals_n, others, self.ldl_tensors[k])
            anticommutator = np.einsum('ja,ja->j', e_psi.conj(), g_psi).real
            rate += jump_term + (self.n - 1) * ldl_mean * e_mean - anticommutator
            rate -= (weight - ldl_mean) * e_mean
        return rate


def prepare_model(model: LindbladModel, cfg: McwfConfig) -> LindbladModel:
    """Model actually propagated: shifted in constrained mode unless c = 0 or already shifted."""
    if cfg.unconstrained or cfg.lambda_factor == 0 or model.shift is not None or not model.jumps:
        return model
    return shift_operators(model, lambda_shift(model, cfg.lambda_factor))


def jump_substeps(model: LindbladModel, dt: float, max_load: float = MAX_JUMP_LOAD) -> int:
    """
    Sub-steps per dt step so that dt/m * sum_k ||L_k||^2 <= max_load.

    The shifted jump operators carry rates of order sum_k |l_k|^2, which
    grow with the square of lambda_factor.
    """
    load = dt * jump_rate_bound(model)
    return max(1, int(math.ceil(load / max_load - 1e-12)))


def _flatten(model: LindbladModel, initial: BranchMixture,
             observables: ObservableSet) -> Tuple[LindbladModel, BranchMixture, ObservableSet]:
    """Unconstrained mode: everything read on a single subsystem of dimension D."""
    flat = SubsystemLayout((model.layout.total_dim,))
    relabel = lambda op: OperatorMatrix(op.entries, flat, op.hermitian_flag)
    branches = tuple(ProductState((b.full_vector(),), flat) for b in initial.branches)
    observables = ObservableSet({name: relabel(op) for name, op in observables.operators.items()},
                                relabel(observables.energy) if observables.energy is not None else None,
                                observables.heat_flow)
    return model.with_layout(flat), BranchMixture(initial.weights, branches), observables


def _survival(locals_batch: List[np.ndarray]) -> np.ndarray:
    norms = np.ones(locals_batch[0].shape[0])
    for v in locals_batch:
        norms = norms * np.einsum('ja,ja->j', v.conj(), v).real
    return norms


def _assign(target: List[np.ndarray], rows: np.ndarray, values: List[np.ndarray]) -> None:
    for d, v in enumerate(values):
        target[d][rows] = v


def run_chunk(model: LindbladModel, cfg: McwfConfig, observables: ObservableSet,
              initial: BranchMixture, traj_indices: Sequence[int],
              branch: Optional[int] = None) -> TrajectoryBatch:
    """
    Propagate one chunk of trajectories.

    Args:
        model (LindbladModel): Model in the layout the chunk is propagated on
        cfg (McwfConfig): Step, horizon, jump rule and seed
        observables (ObservableSet): Recorded channels
        initial (BranchMixture): Initial condition
        traj_indices (Sequence[int]): Global trajectory indices (RNG stream keys)
        branch (Optional[int]): Fixed initial branch; None samples it per trajectory

    Returns:
        TrajectoryBatch: Chunk statistics in trajectory order
    """
    kernel = ProductKernel(model)
    n_sub = kernel.n
    indices = [int(i) for i in traj_indices]
    batch = len(indices)
    rngs = [trajectory_rng(cfg.seed, i) for i in indices]

    if branch is None and len(initial.branches) > 1:
        choices = [weighted_choice(initial.weights, rng.random()) for rng in rngs]
    else:
        choices = [branch or 0] * batch
    locals_batch = [np.stack([initial.branches[c].locals[d] for c in choices]) for d in range(n_sub)]
    locals_batch = normalize_locals(locals_batch)

    n_steps, dt = step_grid(cfg.t_end, cfg.dt)
    steps = output_indices(n_steps, int(cfg.output_stride))
    slots = {step: slot for slot, step in enumerate(steps)}
    names = observables.names()
    dim = model.layout.total_dim
    values = np.zeros((len(steps), batch, len(names)))
    density_sum = np.zeros((len(steps), dim, dim), dtype=complex)
    jump_counts = np.zeros(kernel.n_jumps, dtype=np.int64)

    energy = observables.energy.entries if observables.energy is not None else None
    energy0 = None
    heat_integral = np.zeros(batch)
    rate_prev = kernel.heat_rate(locals_batch, energy) if observables.heat_flow else None

    def record(step: int) -> None:
        nonlocal energy0
        full = kernel.full_vectors(locals_batch)
        row = []
        for op in observables.operators.values():
            row.append(ProductKernel.means(full, op.entries).real)
        if energy is not None:
            current = ProductKernel.means(full, energy).real
            if energy0 is None:
                energy0 = current
            row += [current, current - energy0]
        if observables.heat_flow:
            row.append(np.array(heat_integral))
        slot = slots[step]
        if row:
            values[slot] = np.stack(row, axis=1)
        density_sum[slot] = np.einsum('ja,jb->ab', full, full.conj())

    def draw_channels(rows: np.ndarray, sub_locals: List[np.ndarray]) -> np.ndarray:
        weights = kernel.jump_weights(sub_locals)
        channels = np.empty(len(rows), dtype=np.int64)
        for i, j in enumerate(rows):
            total = weights[i].sum()
            if not total > 0:
                raise DegenerateSandwichError("All constrained jump weights vanish")
            channels[i] = weighted_choice(weights[i] / total, rngs[j].random())
        np.add.at(jump_counts, channels, 1)
        return channels

    segment = cfg.jump_rule == 'segment'
    thresholds = np.array([rng.random() for rng in rngs]) if segment else None
    substeps = jump_substeps(model, dt, cfg.max_jump_load)
    h = dt / substeps

    def advance(step: int) -> None:
        nonlocal locals_batch, rate_prev
        if segment:
            jumping = _survival(locals_batch) <= thresholds
            if not kernel.n_jumps:
                jumping[:] = False
            evolving = np.flatnonzero(~jumping)
            if evolving.size:
                stepped = midpoint_product_step(kernel.generators, [v[evolving] for v in locals_batch], h)
                _assign(locals_batch, evolving, stepped)
            rows = np.flatnonzero(jumping)
            if rows.size:
                sub = [v[rows] for v in locals_batch]
                _assign(locals_batch, rows, kernel.apply_jumps(sub, draw_channels(rows, sub)))
                thresholds[rows] = [rngs[j].random() for j in rows]
        else:
            stepped = midpoint_product_step(kernel.generators, locals_batch, h)
            draws = np.array([rng.random() for rng in rngs])
            jumping = draws >= _survival(stepped)
            if not kernel.n_jumps:
                jumping[:] = False
            rows = np.flatnonzero(jumping)
            previous = locals_batch
            locals_batch = normalize_locals(stepped)
            if rows.size:
                sub = [v[rows] for v in previous]
                _assign(locals_batch, rows, kernel.apply_jumps(sub, draw_channels(rows, sub)))

        survival = _survival(locals_batch)
        if np.any(survival < SANDWICH_FLOOR):
            raise DegenerateSandwichError(f"Trajectory norm collapsed below 1e-30 at step {step}")
        for vectors in locals_batch:
            check_finite(vectors, f"MCWF chunk at step {step} (t={step * dt:.6g})")
        if observables.heat_flow:
            rate = kernel.heat_rate(locals_batch, energy)
            heat_integral[:] += 0.5 * h * (rate_prev + rate)
            rate_prev = rate

    record(0)
    for step in range(1, n_steps + 1):
        for _ in range(substeps):
            advance(step)
        if step in slots:
            record(step)

    times = np.array([step * dt for step in steps])
    return TrajectoryBatch.from_values(times, names, values, density_sum, jump_counts, indices,
                                       keep_trajectories=cfg.keep_trajectories)


class McwfSolver:
    """
    Ensemble driver of the constrained (or unconstrained) MCWF method.

    Chunks are merged in chunk-index order, so results depend only on
    (seed, n_traj, chunk_size) and never on the number of workers.
    """

    def __init__(self, model: LindbladModel, cfg: McwfConfig,
                 observables: Optional[ObservableSet] = None, jobs: int = 1):
        """
        Initialize the solver

        Args:
            model (LindbladModel): Physical (unshifted or already shifted) model
            cfg (McwfConfig): Ensemble settings
            observables (ObservableSet): Recorded channels; defaults to the
                energy of the unshifted Hamiltonian
            jobs (int): Worker processes (1 runs inline)
        """
        self.logger = logging.getLogger(__name__)
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.physical_model = model.unshifted()
        self.model = prepare_model(model, cfg)
        self.substeps = jump_substeps(self.model, step_grid(cfg.t_end, cfg.dt)[1], cfg.max_jump_load)
        if self.substeps > 1:
            self.logger.info(f"Splitting each step into {self.substeps} sub-steps "
                             f"(jump load {cfg.dt * jump_rate_bound(self.model):.3g} per step)")
        self.observables = observables or ObservableSet(energy=self.physical_model.hamiltonian)

    def run(self, initial: Union[ProductState, BranchMixture],
            sampling: str = 'exhaustive') -> TrajectoryEnsemble:
        """
        Run the ensemble from a product state or a mixture of product states.

        Args:
            initial: Initial condition
            sampling (str): 'exhaustive' propagates every branch of a mixture
                with n_traj trajectories and weights the results (at most four
                branches); 'sample' draws the branch per trajectory

        Returns:
            TrajectoryEnsemble: Mean, standard error and mean density matrix
        """
        try:
            if sampling not in SAMPLING_MODES:
                raise ConfigError(f"initial_sampling must be one of {SAMPLING_MODES}, got {sampling!r}")
            mixture = initial if isinstance(initial, BranchMixture) else BranchMixture.pure(initial)
            if mixture.layout.dims != self.model.layout.dims:
                raise DimensionMismatchError("Initial state and model layouts differ")
            model, observables = self.model, self.observables
            if self.cfg.unconstrained:
                model, mixture, observables = _flatten(model, mixture, observables)

            n_branches = len(mixture.branches)
            if n_branches > 1 and sampling == 'exhaustive' and n_branches > MAX_EXHAUSTIVE_BRANCHES:
                self.logger.warning(f"{n_branches} branches exceed the exhaustive limit; sampling instead")
                sampling = 'sample'

            if n_branches == 1 or sampling == 'sample':
                return self._run_branch(model, observables, mixture, None, offset=0)

            ensembles = []
            for b in range(n_branches):
                self.logger.info(f"Propagating initial branch {b + 1}/{n_branches} "
                                 f"(weight {mixture.weights[b]:.6g})")
                ensembles.append(self._run_branch(model, observables, mixture, b,
                                                  offset=b * self.cfg.n_traj))
            return combine_weighted(ensembles, mixture.weights)
        except Exception as e:
            self.logger.error(f"Error in McwfSolver.run: {str(e)}")
            raise

    def _run_branch(self, model: LindbladModel, observables: ObservableSet, mixture: BranchMixture,
                    branch: Optional[int], offset: int) -> TrajectoryEnsemble:
        cfg = self.cfg
        chunks = [range(offset + r.start, offset + r.stop)
                  for r in chunk_ranges(int(cfg.n_traj), int(cfg.chunk_size))]
        worker = partial(run_chunk, model, cfg, observables, mixture, branch=branch)
        batches: List[TrajectoryBatch] = []
        report_every = max(1, len(chunks) // 10)
        if self.jobs == 1 or len(chunks) == 1:
            for i, chunk in enumerate(chunks):
                batches.append(worker(chunk))
                if (i + 1) % report_every == 0:
                    self.logger.info(f"Processed {i + 1}/{len(chunks)} chunks")
        else:
            with ProcessPoolExecutor(max_workers=self.jobs) as executor:
                for i, result in enumerate(executor.map(worker, chunks)):
                    batches.append(result)
                    if (i + 1) % report_every == 0:
                        self.logger.info(f"Processed {i + 1}/{len(chunks)} chunks")
        metadata = {
            'seed': int(cfg.seed),
            'dt': float(cfg.dt),
            'jump_rule': cfg.jump_rule,
            'lambda_shift': [complex(l) for l in (model.shift or ())],
            'unconstrained': bool(cfg.unconstrained),
            'substeps': int(self.substeps),
        }
        return ensemble_average(batches, metadata)


def mcwf_run_trajectory(model: LindbladModel, state0: ProductState, cfg: McwfConfig, traj_index: int,
                        observables: Optional[ObservableSet] = None) -> pd.DataFrame:
    """
    Single trajectory of the ensemble, identical to row traj_index of a run.

    Returns:
        pd.DataFrame: 't' plus one column per recorded observable
    """
    solver = McwfSolver(model, cfg, observables)
    mixture = BranchMixture.pure(state0)
    run_model, observables = solver.model, solver.observables
    if cfg.unconstrained:
        run_model, mixture, observables = _flatten(run_model, mixture, observables)
    single = replace(cfg, keep_trajectories=True)
    batch = run_chunk(run_model, single, observables, mixture, [traj_index])
    return batch.trajectory_frame(0)
