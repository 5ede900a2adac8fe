"""Chart rendering for lock measurement CSV outputs.

Consumes the versioned ``results/1`` and ``overhead/1`` CSV schemas and
renders static comparison charts.  Independent of the measurement
package by design: only the CSV files couple the two.
"""

from .charts import DEFAULT_CAP, KINDS, PlotSpec, RenderInfo, build_figure, render
from .readers import SchemaError, read_overhead, read_results

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CAP",
    "KINDS",
    "PlotSpec",
    "RenderInfo",
    "SchemaError",
    "build_figure",
    "read_overhead",
    "read_results",
    "render",
    "__version__",
]
