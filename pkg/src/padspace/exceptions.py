"""Exception types shared across the package."""


class DataError(ValueError):
    """Bad user-supplied data: malformed files, missing labels, short clips.

    The command line maps this to exit status 2.
    """


class NotFittedError(RuntimeError):
    """An estimator was used before ``fit`` was called."""


class ConvergenceError(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""
