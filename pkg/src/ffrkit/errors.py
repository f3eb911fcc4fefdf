"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems are caught by argparse
(exit 2 there, remapped to 1), DataError -> 2, NumericError -> 3.
"""


class FfrkitError(Exception):
    """Base class for package errors."""


class DataError(FfrkitError):
    """Invalid input data: malformed files, out-of-range values, shape mismatches."""


class NumericError(FfrkitError):
    """Numerical failure: divergence, non-finite values, degenerate geometry."""


class TrainingDiverged(NumericError):
    """Training failed to reach the configured loss ceiling."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []
