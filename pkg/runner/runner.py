"""
Run orchestration implementation
"""
import json
import logging
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

import closed_dynamics
import open_dynamics
import scenarios
import tensor_core
import thermo
import visualizer
from closed_dynamics import output_indices, step_grid, unitary_density_series
from open_dynamics import (
    McwfConfig,
    McwfSolver,
    ObservableSet,
    TrajectoryEnsemble,
    lindblad_propagate,
    lindblad_steady_state,
)
from scenarios import ScenarioSpec, build_scenario
from tensor_core import DensityMatrix, expectation
from thermo import ThermoAnalyzer, ThermoRecord, estimate_constrained_steady_state, integrated_heat
from utils.helpers import AnalyticRangeError, RunError
from visualizer import Visualizer

from .config import RunConfig

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler(sys.stdout)]
)

RESULTS_NAME = 'results.csv'
MANIFEST_NAME = 'manifest.json'
FLOAT_FORMAT = '%.17g'

# Observable groups computed from density matrices rather than trajectory means
THERMO_GROUPS = ('entropy', 'relative_entropy', 'entropy_production', 'second_law', 'time_averaged_heat')


@dataclass
class EvolutionResult:
    """Output of one evolution mode on the shared time grid."""
    mode: str
    densities: List[DensityMatrix]
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    stderr: Optional[Dict[str, np.ndarray]] = None
    ensemble: Optional[TrajectoryEnsemble] = None
    record: Optional[ThermoRecord] = None


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    return value


class SimulationRunner:
    """Runs the free and constrained evolutions of one scenario and writes the outputs."""

    def __init__(self, config: RunConfig, jobs: int = 1):
        """
        Initialize the runner

        Args:
            config (RunConfig): Validated run configuration
            jobs (int): Worker processes for trajectory ensembles
        """
        self.config = config
        self.jobs = max(1, int(jobs))
        self.logger = logging.getLogger(__name__)
        self.output_dir = Path(config.output_directory)

    def time_grid(self) -> np.ndarray:
        n_steps, dt = step_grid(self.config.t_end, self.config.dt)
        return np.array(output_indices(n_steps, self.config.output_stride), dtype=float) * dt

    def run(self) -> Path:
        """
        Execute the run and write results.csv, manifest.json and optional artifacts.

        Returns:
            Path: Output directory

        Raises:
            RunError: any failure, with scenario and step context; partial
                outputs are removed
        """
        cfg = self.config
        started = time.perf_counter()
        created_dir = not self.output_dir.exists()
        written: List[Path] = []
        try:
            self.logger.info(f"Building scenario {cfg.scenario}")
            spec = build_scenario(cfg.scenario, **cfg.parameters)
            times = self.time_grid()
            operators = spec.operators(cfg.observables)

            free = constrained = None
            if cfg.mode in ('free', 'both'):
                self.logger.info("Running free evolution")
                free = self.run_free(spec, times, operators)
            if cfg.mode in ('constrained', 'both'):
                self.logger.info("Running constrained evolution")
                constrained = self.run_constrained(spec, times, operators)

            self.logger.info("Computing thermodynamic records")
            analyzer = ThermoAnalyzer(spec.energy_operator, spec.beta)
            if 'second_law' in cfg.observables and spec.beta is None:
                self.logger.warning(f"Scenario {cfg.scenario} has no single bath temperature; "
                                    "second_law is reported as NaN")
            for result in (free, constrained):
                if result is not None:
                    result.record = self.thermo_record(analyzer, spec, times, result)

            results = self.results_table(spec, times, operators, free, constrained)

            self.output_dir.mkdir(parents=True, exist_ok=True)
            results_path = self.output_dir / RESULTS_NAME
            written.append(results_path)
            results.to_csv(results_path, index=False, float_format=FLOAT_FORMAT, na_rep='nan')
            self.logger.info(f"Wrote {results_path}")

            if cfg.dump_trajectories:
                for result in (free, constrained):
                    if result is not None and result.ensemble is not None \
                            and result.ensemble.trajectories is not None:
                        path = self.output_dir / f"trajectories_{result.mode}.csv"
                        written.append(path)
                        result.ensemble.trajectories.to_csv(path, index=False, float_format=FLOAT_FORMAT)
                        self.logger.info(f"Wrote {path}")

            if cfg.plot_script:
                written.append(self.output_dir / visualizer.PLOT_SCRIPT_NAME)
                Visualizer(cfg.scenario, results.columns).write_plot_script(self.output_dir)

            manifest_path = self.output_dir / MANIFEST_NAME
            written.append(manifest_path)
            manifest = self.manifest(spec, results, free, constrained, time.perf_counter() - started)
            manifest_path.write_text(json.dumps(_jsonable(manifest), sort_keys=True, indent=2), encoding='utf-8')
            self.logger.info(f"Run finished in {manifest['wall_time_s']:.2f} s")
            return self.output_dir
        except Exception as e:
            self.logger.error(f"Error in run of scenario {cfg.scenario} (dt={cfg.dt}, t_end={cfg.t_end}): {str(e)}")
            self._cleanup(written, created_dir)
            if isinstance(e, RunError):
                raise
            raise RunError(f"scenario {cfg.scenario} (dt={cfg.dt}, t_end={cfg.t_end}): {e}") from e

    def _cleanup(self, written: List[Path], created_dir: bool) -> None:
        for path in written:
            if path.exists():
                path.unlink()
        if created_dir and self.output_dir.exists():
            shutil.rmtree(self.output_dir, ignore_errors=True)

    def _mcwf_config(self, n_traj: int, unconstrained: bool) -> McwfConfig:
        cfg = self.config
        return McwfConfig(dt=cfg.dt, t_end=cfg.t_end, n_traj=n_traj, seed=cfg.seed,
                          lambda_factor=cfg.lambda_factor, jump_rule=cfg.jump_rule,
                          output_stride=cfg.output_stride, chunk_size=cfg.chunk_size,
                          unconstrained=unconstrained, keep_trajectories=cfg.dump_trajectories)

    def _observables(self, spec: ScenarioSpec, operators, heat_flow: bool) -> ObservableSet:
        return ObservableSet(operators=operators, energy=spec.energy_operator, heat_flow=heat_flow)

    def run_free(self, spec: ScenarioSpec, times: np.ndarray, operators) -> EvolutionResult:
        cfg = self.config
        rho0 = spec.initial.density_matrix()
        if spec.is_closed:
            densities = unitary_density_series(spec.model.hamiltonian, rho0, times)
        elif cfg.free_solver == 'dense':
            series = lindblad_propagate(spec.model, rho0, cfg.t_end, cfg.dt, cfg.output_stride)
            densities = series.states
        else:
            solver = McwfSolver(spec.model, self._mcwf_config(cfg.n_traj, True),
                                self._observables(spec, operators, False), self.jobs)
            ensemble = solver.run(spec.initial, cfg.initial_sampling)
            names = ensemble.names
            return EvolutionResult('free', ensemble.density_matrices(spec.layout),
                                   {n: ensemble.mean[n].to_numpy() for n in names},
                                   {n: ensemble.stderr[n].to_numpy() for n in names}, ensemble)
        values = {name: np.array([expectation(op, rho).real for rho in densities])
                  for name, op in operators.items()}
        return EvolutionResult('free', densities, values)

    def run_constrained(self, spec: ScenarioSpec, times: np.ndarray, operators) -> EvolutionResult:
        cfg = self.config
        n_traj = cfg.n_traj
        if spec.is_closed and (len(spec.initial.branches) == 1 or cfg.initial_sampling == 'exhaustive'):
            # closed constrained evolution is deterministic per branch
            n_traj = 1
        heat_flow = 'constrained_heat' in cfg.observables
        solver = McwfSolver(spec.model, self._mcwf_config(n_traj, False),
                            self._observables(spec, operators, heat_flow), self.jobs)
        ensemble = solver.run(spec.initial, cfg.initial_sampling)
        if not np.allclose(ensemble.times, times, rtol=0, atol=1e-9):
            raise RunError("Trajectory output grid does not match the run time grid")
        names = ensemble.names
        self.logger.info(f"Constrained ensemble: {ensemble.n_traj} trajectories, "
                         f"{ensemble.metadata.get('total_jumps', 0)} jumps")
        return EvolutionResult('constrained', ensemble.density_matrices(spec.layout),
                               {n: ensemble.mean[n].to_numpy() for n in names},
                               {n: ensemble.stderr[n].to_numpy() for n in names}, ensemble)

    def thermo_record(self, analyzer: ThermoAnalyzer, spec: ScenarioSpec, times: np.ndarray,
                      result: EvolutionResult) -> ThermoRecord:
        reference = None
        if {'relative_entropy', 'entropy_production'} & set(self.config.observables):
            if result.mode == 'free' and not spec.is_closed:
                reference = lindblad_steady_state(spec.model)
            if reference is None:
                reference = estimate_constrained_steady_state(times, [rho.entries for rho in result.densities],
                                                              spec.layout)
            if reference is None:
                self.logger.warning(f"No steady state for the {result.mode} evolution; "
                                    "relative entropy and entropy production are reported as NaN")
        model = spec.model if result.mode == 'free' else None
        return analyzer.build_record(times, result.densities, result.mode, model=model, reference=reference)

    def _channel(self, name: str, result: EvolutionResult, times: np.ndarray, stochastic: bool):
        """Values and standard error of one observable group in one mode."""
        record = result.record
        stderr = result.stderr or {}
        if name in result.values and name != 'constrained_heat':
            return result.values[name], stderr.get(name)
        if name == 'heat':
            return record.column('heat'), stderr.get('heat')
        if name == 'constrained_heat':
            if result.mode == 'free':
                return integrated_heat(times, record.column('heat_rate')), None
            return result.values[name], stderr.get(name)
        values = record.column(name)
        if stochastic:
            self.logger.warning(f"{name}_{result.mode} is nonlinear in the state; no standard error available")
            return values, np.full(len(times), np.nan)
        return values, None

    def results_table(self, spec: ScenarioSpec, times: np.ndarray, operators,
                      free: Optional[EvolutionResult], constrained: Optional[EvolutionResult]) -> pd.DataFrame:
        """
        Assemble the results table.

        Columns: t, then per observable <name>_free, <name>_free_stderr (only
        for trajectory-based free runs), <name>_constrained and
        <name>_constrained_stderr, then the analytic oracle columns.
        """
        names = list(operators)
        for group in self.config.observables:
            if group in ('heat', 'constrained_heat') or group in THERMO_GROUPS:
                names.append(group)
        columns: Dict[str, np.ndarray] = {'t': times}
        for name in names:
            if free is not None:
                stochastic = free.ensemble is not None
                values, err = self._channel(name, free, times, stochastic)
                columns[f"{name}_free"] = values
                if stochastic:
                    columns[f"{name}_free_stderr"] = err if err is not None else np.zeros(len(times))
            if constrained is not None:
                stochastic = not spec.is_closed
                values, err = self._channel(name, constrained, times, stochastic)
                columns[f"{name}_constrained"] = values
                columns[f"{name}_constrained_stderr"] = err if err is not None else np.zeros(len(times))
        for oracle_name, oracle in spec.oracles.items():
            if oracle_name.endswith('_free') and free is None:
                continue
            if oracle_name.endswith('_constrained') and constrained is None:
                continue
            try:
                columns[oracle_name] = np.asarray(oracle(times), dtype=float)
            except AnalyticRangeError as e:
                self.logger.warning(f"Skipping oracle {oracle_name}: {str(e)}")
        return pd.DataFrame(columns)

    def manifest(self, spec: ScenarioSpec, results: pd.DataFrame, free: Optional[EvolutionResult],
                 constrained: Optional[EvolutionResult], wall_time: float) -> Dict[str, Any]:
        """Everything that determines the numbers in the results table."""
        statistics = {}
        for result in (free, constrained):
            if result is not None and result.ensemble is not None:
                meta = result.ensemble.metadata
                statistics[result.mode] = {key: meta.get(key) for key in
                                           ('n_traj', 'total_jumps', 'jump_counts', 'lambda_shift',
                                            'jump_rule', 'branch_weights', 'unconstrained', 'substeps')}
        return {
            'config': self.config.to_dict(),
            'seed': self.config.seed,
            'scenario_parameters': dict(spec.parameters),
            'time_grid': {'n_rows': len(results), 'dt': float(step_grid(self.config.t_end, self.config.dt)[1])},
            'columns': list(results.columns),
            'versions': {
                'tensor_core': tensor_core.__version__,
                'closed_dynamics': closed_dynamics.__version__,
                'open_dynamics': open_dynamics.__version__,
                'thermo': thermo.__version__,
                'scenarios': scenarios.__version__,
                'numpy': np.__version__,
                'pandas': pd.__version__,
            },
            'jump_statistics': statistics,
            'wall_time_s': wall_time,
        }


def run(config: RunConfig, jobs: int = 1) -> Path:
    """Run a validated configuration; see SimulationRunner.run."""
    return SimulationRunner(config, jobs).run()
