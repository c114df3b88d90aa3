"""Decomposition of a Riemannian metric into parallel blocks and the cone of parallel metrics."""

from .errors import ParallelMetricsError
from .expr import eval_jet2, parse
from .geometry import Chart, christoffel, metric_jet, riemann
from .pipeline import decompose, evaluate, run
from .specfile import ManifoldSpec, load, loads
from .verify import assemble, certify, covariant_residual

__all__ = [
    "Chart",
    "ManifoldSpec",
    "ParallelMetricsError",
    "assemble",
    "certify",
    "christoffel",
    "covariant_residual",
    "decompose",
    "eval_jet2",
    "evaluate",
    "load",
    "loads",
    "metric_jet",
    "parse",
    "riemann",
    "run",
]
