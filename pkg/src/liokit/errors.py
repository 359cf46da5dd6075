"""Exception types raised across the package."""


class LiokitError(Exception):
    """Base class for package errors."""


class MalformedFrameError(LiokitError):
    """Frame violates its invariants (e.g. zero duration)."""


class MalformedMatrixError(LiokitError):
    """Matrix input violates a structural precondition (e.g. asymmetry)."""


class DegenerateGeometryError(LiokitError):
    """Not enough geometric structure (collinear points, no plane)."""


class InsufficientResidualsError(LiokitError):
    """Too few valid correspondences to attempt a solve."""


class SolverDivergedError(LiokitError):
    """Solver failed to make progress (non-finite cost or damping exhausted)."""


class ParseError(LiokitError):
    """Input file failed to parse; message carries file and line."""


class EvaluationError(LiokitError):
    """Metric could not be computed (e.g. too few associated poses)."""
