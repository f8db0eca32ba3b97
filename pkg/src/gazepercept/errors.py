"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`GazePerceptError`, so callers (and the CLI) can separate data
problems from programming errors.
"""

from __future__ import annotations


class GazePerceptError(ValueError):
    """Base class for all structured errors."""


# core
class BehindCamera(GazePerceptError):
    pass


class FrameMismatch(GazePerceptError):
    pass


# ingest
class ParseError(GazePerceptError):
    def __init__(self, message: str, line: int | None = None, column: str | int | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class EmptyLog(GazePerceptError):
    pass


class MissingComponent(GazePerceptError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"missing component: {path}")


class InconsistentResolution(GazePerceptError):
    pass


# gaze-heatmap
class EmptyWindow(GazePerceptError):
    pass


class OutOfRange(GazePerceptError):
    pass


# knn-detect
class DimensionMismatch(GazePerceptError):
    pass


class KTooLarge(GazePerceptError):
    pass


class TooFewSamples(GazePerceptError):
    pass


# gbvs
class EmptyImage(GazePerceptError):
    pass


class NonPositiveFeature(GazePerceptError):
    pass


class NoGazeInDomain(GazePerceptError):
    pass


class NotConverged(GazePerceptError):
    """Power iteration hit its step budget. ``last`` holds the final iterate."""

    def __init__(self, last, steps: int, residual: float):
        self.last = last
        self.steps = steps
        self.residual = residual
        super().__init__(f"not converged after {steps} steps (residual {residual:.3e})")


# roi
class EmptyHistogram(GazePerceptError):
    pass


class EmptyMask(GazePerceptError):
    pass


# cloud-seg
class NoPlaneFound(GazePerceptError):
    pass


class NothingSegmented(GazePerceptError):
    pass


# multiview
class DegenerateBox(GazePerceptError):
    pass


class TooFewProjected(GazePerceptError):
    pass


class TooFewGazePoints(GazePerceptError):
    pass
