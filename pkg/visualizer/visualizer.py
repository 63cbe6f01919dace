"""
Plot script generation implementation
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence

PLOT_SCRIPT_NAME = 'plot_results.py'

_TEMPLATE = '''"""Plot the results table of a {scenario} run."""
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

HERE = Path(__file__).resolve().parent
PANELS = {panels!r}


def main():
    results = pd.read_csv(HERE / 'results.csv')
    fig, axes = plt.subplots(len(PANELS), 1, figsize=(7, 2.6 * len(PANELS)), sharex=True, squeeze=False)
    for ax, (name, columns) in zip(axes[:, 0], PANELS.items()):
        for column in columns:
            stderr = results.get(column + '_stderr')
            ax.plot(results['t'], results[column], label=column)
            if stderr is not None:
                ax.fill_between(results['t'], results[column] - stderr, results[column] + stderr, alpha=0.25)
        ax.set_ylabel(name)
        ax.legend(fontsize='small')
    axes[-1, 0].set_xlabel('t')
    fig.tight_layout()
    fig.savefig(HERE / 'results.png', dpi=150)


if __name__ == '__main__':
    main()
'''


class Visualizer:
    def __init__(self, scenario: str, columns: Sequence[str]):
        """
        Initialize the Visualizer.

        Args:
            scenario (str): Scenario name shown in the script docstring
            columns (Sequence[str]): Header of the results table
        """
        self.scenario = scenario
        self.columns = list(columns)
        self.logger = logging.getLogger(__name__)

    def panels(self) -> Dict[str, List[str]]:
        """Group value columns by observable; stderr columns are drawn as bands."""
        panels: Dict[str, List[str]] = {}
        for column in self.columns:
            if column == 't' or column.endswith('_stderr'):
                continue
            # oracle columns share the panel of the observable they check
            name = column.split('_analytic')[0].split('_uncoupled')[0]
            for suffix in ('_free', '_constrained'):
                if name.endswith(suffix):
                    name = name[:-len(suffix)]
            panels.setdefault(name, []).append(column)
        return panels

    def write_plot_script(self, directory: Path) -> Path:
        """Write a matplotlib script plotting results.csv next to it."""
        path = Path(directory) / PLOT_SCRIPT_NAME
        path.write_text(_TEMPLATE.format(scenario=self.scenario, panels=self.panels()), encoding='utf-8')
        self.logger.info(f"Wrote plot script {path}")
        return path
