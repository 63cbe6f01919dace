"""
Visualization Module
Writes a ready-to-run matplotlib script next to each results table;
the simulator itself does not draw figures.
"""

__version__ = "0.1.0"

from .visualizer import PLOT_SCRIPT_NAME, Visualizer
