"""Linear transformers that solve graph Laplacian problems, with exact-oracle checks."""

from .constructions import TaskSpec
from .graph import Graph, build_incidence, generate_csl, generate_fc, laplacian
from .verify import ErrorReport, run_task

__all__ = [
    "ErrorReport", "Graph", "TaskSpec", "build_incidence", "generate_csl", "generate_fc", "laplacian", "run_task",
]
