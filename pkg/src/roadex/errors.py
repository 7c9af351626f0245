"""Exception types shared across the toolkit.

The CLI maps ParameterError/ShapeError to usage failures (exit 1) and
DataError to data failures (exit 2).
"""


class ParameterError(ValueError):
    """An argument violates a documented parameter constraint."""


class ShapeError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class DataError(Exception):
    """Input data (files, masks, checkpoints) is malformed or missing."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; the last finite state was saved."""
