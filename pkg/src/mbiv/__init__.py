"""Markov-blanket selection, graph orientation and instrument validation for linear models."""

__version__ = "0.1.0"

from .datamodel import Dataset, load_csv, write_csv  # noqa: E402
from .errors import BoundExceeded, DataError, GraphError, MbivError, NumericError, UsageError  # noqa: E402
from .graph import Dag, d_separated, iv_candidates, markov_blanket, parse_graph  # noqa: E402
from .sem import LinearSem, population_covariance, sample, scenario  # noqa: E402

__all__ = [
    "Dataset", "load_csv", "write_csv",
    "MbivError", "UsageError", "DataError", "NumericError", "BoundExceeded", "GraphError",
    "Dag", "d_separated", "iv_candidates", "markov_blanket", "parse_graph",
    "LinearSem", "population_covariance", "sample", "scenario",
]
