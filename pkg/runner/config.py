"""
Run configuration: published schema, validation and CLI overrides
"""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from scenarios import RUN_DEFAULTS, SCENARIO_DEFAULTS, resolve_parameters
from utils.helpers import ConfigError

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = 'SEPTHERMO_OUTPUT_DIR'

MODES = ('free', 'constrained', 'both')
OBSERVABLE_GROUPS = ('populations', 'heat', 'constrained_heat', 'bell_overlap', 'entropy',
                     'relative_entropy', 'entropy_production', 'second_law', 'time_averaged_heat', 'bloch_vectors')

CONFIG_SCHEMA: Dict[str, Dict[str, Any]] = {
    'scenario': {'type': 'string', 'required': True, 'allowed': sorted(SCENARIO_DEFAULTS),
                 'description': 'Scenario builder to run'},
    'parameters': {'type': 'object', 'default': {},
                   'description': 'Scenario parameter overrides; keys per scenario are listed by `scenarios`'},
    'mode': {'type': 'string', 'default': 'both', 'allowed': list(MODES),
             'description': 'Free evolution, constrained evolution or both'},
    'dt': {'type': 'number', 'default': 'scenario', 'description': 'Time step (> 0, < t_end)'},
    't_end': {'type': 'number', 'default': 'scenario', 'description': 'Final time (> 0)'},
    'output_stride': {'type': 'integer', 'default': 'scenario', 'description': 'Steps between output rows'},
    'n_traj': {'type': 'integer', 'default': 'scenario', 'description': 'Trajectories per initial branch'},
    'seed': {'type': 'integer', 'default': 0, 'description': 'Master seed of the trajectory streams'},
    'lambda_factor': {'type': 'number', 'default': 10.0,
                      'description': 'Shift factor c in l_k = c ||L_k||; 0 disables the shift'},
    'jump_rule': {'type': 'string', 'default': 'segment', 'allowed': ['segment', 'per_step'],
                  'description': 'Waiting-time or per-step jump decision'},
    'free_solver': {'type': 'string', 'default': 'dense', 'allowed': ['dense', 'mcwf'],
                    'description': 'Dense master equation or unconstrained trajectories'},
    'initial_sampling': {'type': 'string', 'default': 'exhaustive', 'allowed': ['exhaustive', 'sample'],
                         'description': 'Propagate every branch of a mixed initial state or sample it'},
    'chunk_size': {'type': 'integer', 'default': 256, 'description': 'Trajectories per work unit'},
    'observables': {'type': 'array', 'default': 'scenario', 'allowed': list(OBSERVABLE_GROUPS),
                    'description': 'Observable groups written to the results table'},
    'output': {
        'type': 'object',
        'properties': {
            'directory': {'type': 'string', 'default': f"${OUTPUT_DIR_ENV} or runs/<scenario>"},
            'dump_trajectories': {'type': 'boolean', 'default': False},
            'plot_script': {'type': 'boolean', 'default': True},
        },
        'description': 'Output directory and optional artifacts',
    },
}

OUTPUT_KEYS = tuple(CONFIG_SCHEMA['output']['properties'])


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run configuration with every default filled."""
    scenario: str
    parameters: Dict[str, float]
    mode: str
    dt: float
    t_end: float
    output_stride: int
    n_traj: int
    seed: int
    lambda_factor: float
    jump_rule: str
    free_solver: str
    initial_sampling: str
    chunk_size: int
    observables: Tuple[str, ...]
    output_directory: str
    dump_trajectories: bool = False
    plot_script: bool = True
    full: bool = False

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['observables'] = list(self.observables)
        return data

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _number(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    return float(value)


def _integer(key: str, value: Any, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
    return int(value)


def _choice(key: str, value: Any) -> str:
    allowed = CONFIG_SCHEMA[key]['allowed']
    if value not in allowed:
        raise ConfigError(f"{key}: must be one of {', '.join(allowed)}, got {value!r}")
    return value


def default_output_directory(scenario: str) -> str:
    base = os.environ.get(OUTPUT_DIR_ENV)
    return str(Path(base) / scenario) if base else str(Path('runs') / scenario)


def parse_config(text: str) -> RunConfig:
    """
    Parse and validate a JSON run configuration.

    Args:
        text (str): UTF-8 JSON document

    Returns:
        RunConfig: Validated configuration with scenario defaults filled

    Raises:
        ConfigError: malformed document, unknown key, bad type or value;
            the message starts with the offending key path
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"<document>: invalid JSON ({e.msg} at line {e.lineno})")
    if not isinstance(raw, dict):
        raise ConfigError("<document>: top level must be an object")

    for key in sorted(raw):
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{key}: unknown key")
    if 'scenario' not in raw:
        raise ConfigError("scenario: required key missing")
    scenario = _choice('scenario', raw['scenario'])
    defaults = RUN_DEFAULTS[scenario]

    overrides = raw.get('parameters', {})
    if not isinstance(overrides, dict):
        raise ConfigError("parameters: expected an object")
    parameters = resolve_parameters(scenario, overrides)

    dt = _number('dt', raw.get('dt', defaults['dt']))
    t_end = _number('t_end', raw.get('t_end', defaults['t_end']))
    if dt <= 0:
        raise ConfigError(f"dt: must be positive, got {dt}")
    if t_end <= 0:
        raise ConfigError(f"t_end: must be positive, got {t_end}")
    if dt >= t_end:
        raise ConfigError(f"dt: must be smaller than t_end ({dt} >= {t_end})")

    lambda_factor = _number('lambda_factor', raw.get('lambda_factor', 10.0))
    if lambda_factor < 0:
        raise ConfigError(f"lambda_factor: must be >= 0, got {lambda_factor}")

    observables = raw.get('observables', defaults['observables'])
    if not isinstance(observables, list) or not observables:
        raise ConfigError("observables: expected a non-empty list")
    for i, group in enumerate(observables):
        if group not in OBSERVABLE_GROUPS:
            raise ConfigError(f"observables[{i}]: unknown observable {group!r}")
    if 'bell_overlap' in observables and scenario in ('refrigerator_localized', 'refrigerator_delocalized'):
        raise ConfigError("observables: bell_overlap needs a two-qubit scenario")

    output = raw.get('output', {})
    if not isinstance(output, dict):
        raise ConfigError("output: expected an object")
    for key in sorted(output):
        if key not in OUTPUT_KEYS:
            raise ConfigError(f"output.{key}: unknown key")
    directory = output.get('directory', default_output_directory(scenario))
    if not isinstance(directory, str) or not directory:
        raise ConfigError("output.directory: expected a non-empty string")
    flags = {}
    for key, default in (('dump_trajectories', False), ('plot_script', True)):
        value = output.get(key, default)
        if not isinstance(value, bool):
            raise ConfigError(f"output.{key}: expected a boolean, got {value!r}")
        flags[key] = value

    config = RunConfig(
        scenario=scenario,
        parameters=parameters,
        mode=_choice('mode', raw.get('mode', 'both')),
        dt=dt,
        t_end=t_end,
        output_stride=_integer('output_stride', raw.get('output_stride', defaults['output_stride']), 1),
        n_traj=_integer('n_traj', raw.get('n_traj', defaults['n_traj']), 1),
        seed=_integer('seed', raw.get('seed', 0), 0),
        lambda_factor=lambda_factor,
        jump_rule=_choice('jump_rule', raw.get('jump_rule', 'segment')),
        free_solver=_choice('free_solver', raw.get('free_solver', 'dense')),
        initial_sampling=_choice('initial_sampling', raw.get('initial_sampling', 'exhaustive')),
        chunk_size=_integer('chunk_size', raw.get('chunk_size', 256), 1),
        observables=tuple(dict.fromkeys(observables)),
        output_directory=directory,
        dump_trajectories=flags['dump_trajectories'],
        plot_script=flags['plot_script'],
    )
    logger.info(f"Parsed configuration for scenario {scenario}")
    return config


def load_config(path: str) -> RunConfig:
    """Read and validate a configuration file."""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"<file>: cannot read {path}: {e}")
    return parse_config(text)


def apply_overrides(config: RunConfig, out: Optional[str] = None, seed: Optional[int] = None,
                    n_traj: Optional[int] = None, full: bool = False) -> RunConfig:
    """
    Apply command-line overrides.

    --full switches to the published trajectory counts unless --n-traj is
    given explicitly.
    """
    changes: Dict[str, Any] = {}
    if out is not None:
        changes['output_directory'] = out
    if seed is not None:
        changes['seed'] = _integer('seed', seed, 0)
    if full:
        changes['full'] = True
        changes['n_traj'] = int(RUN_DEFAULTS[config.scenario]['full_n_traj'])
    if n_traj is not None:
        changes['n_traj'] = _integer('n_traj', n_traj, 1)
    return replace(config, **changes) if changes else config


def scenario_catalog() -> Dict[str, Dict[str, Any]]:
    """Scenario parameters and run defaults, as printed by `scenarios`."""
    return {name: {'parameters': dict(SCENARIO_DEFAULTS[name]), 'run_defaults': dict(RUN_DEFAULTS[name])}
            for name in sorted(SCENARIO_DEFAULTS)}
