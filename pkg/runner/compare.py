"""
Result comparison: aligned differences and n-sigma agreement
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd

from utils.helpers import ConfigError

from .runner import RESULTS_NAME

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['observable', 'max_abs_dev', 'mean_abs_dev', 'max_z', 'passed']

# deterministic channels (zero standard error) must agree to this absolute tolerance
DETERMINISTIC_ATOL = 1e-10


def load_results(run_dir: Union[str, Path]) -> pd.DataFrame:
    path = Path(run_dir) / RESULTS_NAME
    if not path.exists():
        raise ConfigError(f"<run_dir>: no {RESULTS_NAME} in {run_dir}")
    return pd.read_csv(path, na_values=['nan'])


def compare_series(a: np.ndarray, b: np.ndarray, stderr_a: Optional[np.ndarray] = None,
                   stderr_b: Optional[np.ndarray] = None, sigma: float = 3.0,
                   atol: float = DETERMINISTIC_ATOL) -> Dict[str, float]:
    """
    Deviation statistics of two aligned series.

    A point passes when |a - b| <= sigma * sqrt(se_a^2 + se_b^2) + atol.

    Returns:
        Dict[str, float]: max_abs_dev, mean_abs_dev, max_z (NaN when every
        point is deterministic) and passed
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    se_a = np.zeros_like(a) if stderr_a is None else np.nan_to_num(np.asarray(stderr_a, dtype=float))
    se_b = np.zeros_like(b) if stderr_b is None else np.nan_to_num(np.asarray(stderr_b, dtype=float))
    finite = np.isfinite(a) & np.isfinite(b)
    both_nan = np.isnan(a) & np.isnan(b)
    deviation = np.abs(a - b)
    combined = np.sqrt(se_a ** 2 + se_b ** 2)
    stochastic = finite & (combined > 0)
    max_z = float(np.max(deviation[stochastic] / combined[stochastic])) if np.any(stochastic) else float('nan')
    within = deviation <= sigma * combined + atol
    passed = bool(np.all((finite & within) | both_nan))
    return {
        'max_abs_dev': float(np.max(deviation[finite])) if np.any(finite) else float('nan'),
        'mean_abs_dev': float(np.mean(deviation[finite])) if np.any(finite) else float('nan'),
        'max_z': max_z,
        'passed': passed,
    }


def compare_columns(results: pd.DataFrame, column_a: str, column_b: str, sigma: float = 3.0) -> Dict[str, float]:
    """Compare two channels of one results table, e.g. heat_free and heat_constrained."""
    for column in (column_a, column_b):
        if column not in results.columns:
            raise ConfigError(f"{column}: no such column")
    report = compare_series(results[column_a].to_numpy(), results[column_b].to_numpy(),
                            results.get(f"{column_a}_stderr"), results.get(f"{column_b}_stderr"), sigma)
    report['observable'] = f"{column_a} vs {column_b}"
    return report


def _align(a: pd.DataFrame, b: pd.DataFrame) -> pd.DataFrame:
    """Frame b on the time grid of a (linear interpolation when the grids differ)."""
    ta, tb = a['t'].to_numpy(), b['t'].to_numpy()
    if len(ta) == len(tb) and np.allclose(ta, tb, rtol=0, atol=1e-12):
        return b.reset_index(drop=True)
    inside = (ta >= tb[0]) & (ta <= tb[-1])
    if not np.any(inside):
        raise ConfigError("t: time grids of the two runs do not overlap")
    aligned = {'t': ta}
    for column in b.columns:
        if column != 't':
            values = np.interp(ta, tb, b[column].to_numpy())
            aligned[column] = np.where(inside, values, np.nan)
    return pd.DataFrame(aligned)


def compare_runs(run_dir_a: Union[str, Path], run_dir_b: Union[str, Path], sigma: float = 3.0) -> pd.DataFrame:
    """
    Aligned-grid difference report between two run directories.

    Every value column present in both tables is compared; standard-error
    columns are used as the statistical error of their channel.

    Returns:
        pd.DataFrame: One row per compared column with REPORT_COLUMNS
    """
    a = load_results(run_dir_a)
    b = _align(a, load_results(run_dir_b))
    rows = []
    for column in a.columns:
        if column == 't' or column.endswith('_stderr') or column not in b.columns:
            continue
        row = compare_series(a[column].to_numpy(), b[column].to_numpy(),
                             a.get(f"{column}_stderr"), b.get(f"{column}_stderr"), sigma)
        row['observable'] = column
        rows.append(row)
    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    logger.info(f"Compared {len(report)} columns: {int(report['passed'].sum())} within {sigma:g} sigma")
    return report
