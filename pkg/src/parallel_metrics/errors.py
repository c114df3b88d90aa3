"""Exception hierarchy.

Every pipeline error carries an ``exit_code`` used by the CLI and, where it
makes sense, the chart name and point where the problem was detected.
"""

from __future__ import annotations


class ParallelMetricsError(Exception):
    exit_code = 4

    def __init__(self, message: str, chart: str | None = None, point=None):
        self.chart = chart
        self.point = None if point is None else [float(v) for v in point]
        where = []
        if chart is not None:
            where.append(f"chart {chart!r}")
        if self.point is not None:
            where.append("point (" + ", ".join(f"{v:.6g}" for v in self.point) + ")")
        if where:
            message = f"{message} [{' at '.join(where)}]"
        super().__init__(message)


# expression language

class ExprSyntaxError(SyntaxError):
    """Parse failure; ``offset`` is the 0-based byte offset into the source."""

    def __init__(self, message: str, text: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.msg = message
        self.text = text
        self.offset = offset


class DomainRestriction(ValueError):
    """A construct outside the supported subset (non-constant exponent)."""


class EvalError(ArithmeticError):
    pass


# spec / geometry

class SpecError(ParallelMetricsError):
    pass


class OutsideChart(ParallelMetricsError):
    pass


class NotPositiveDefinite(ParallelMetricsError):
    pass


class SkewnessViolation(ParallelMetricsError):
    pass


# spectral frames

class NotGeneric(ParallelMetricsError):
    exit_code = 2

    def __init__(self, message, chart=None, point=None, worst_gap: float = 0.0):
        super().__init__(message, chart, point)
        self.worst_gap = worst_gap


class EigengapTooSmall(ParallelMetricsError):
    exit_code = 2


class NonImaginaryEigenvalue(ParallelMetricsError):
    exit_code = 2


class AlignmentBreak(ParallelMetricsError):
    pass


# partition / gluing

class BoundaryPoint(ParallelMetricsError):
    pass


class AmbiguousPartition(ParallelMetricsError):
    pass


class AmbiguousIntersection(ParallelMetricsError):
    pass


class DisconnectedAtlas(ParallelMetricsError):
    pass


class OverlapNotConnected(ParallelMetricsError):
    pass


class BlockMissingOnChart(ParallelMetricsError):
    """A global block has no local representative on some chart."""


class RefinementMismatch(ParallelMetricsError):
    exit_code = 3


class WellDefinednessViolation(ParallelMetricsError):
    exit_code = 3


# verification / output

class CertificationFailure(ParallelMetricsError):
    exit_code = 3


class NonPositiveCoefficient(ParallelMetricsError):
    pass


class BadBlockIndex(ParallelMetricsError):
    pass
