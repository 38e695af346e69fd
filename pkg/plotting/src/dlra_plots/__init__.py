"""Offline figure rendering for the benchmark harness CSV files.

Consumers only: every number plotted comes from the CSVs; nothing is
recomputed. Schemas:

* diagnostics.csv: step, t, rank, eta, reject_bound, norm, retries, tail
* flux_t<time>.csv: x, phi
"""

from .render import FigureKind, FigureSpec, SchemaError, build_figure, render

__version__ = "0.1.0"
