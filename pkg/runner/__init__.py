"""
Runner Module
Batch front end of the simulator:
- JSON run configurations validated against a published schema
- Free and constrained runs written as results table, manifest and plot script
- Difference reports between runs and between channels of one run
"""

__version__ = "0.1.0"

from .compare import compare_columns, compare_runs, compare_series, load_results
from .config import (
    CONFIG_SCHEMA,
    OBSERVABLE_GROUPS,
    OUTPUT_DIR_ENV,
    RunConfig,
    apply_overrides,
    load_config,
    parse_config,
    scenario_catalog,
)
from .runner import MANIFEST_NAME, RESULTS_NAME, SimulationRunner, run
