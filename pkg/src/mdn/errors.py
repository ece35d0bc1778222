"""Error taxonomy shared across modules (CLI maps these to exit codes)."""


class DataError(ValueError):
    """Malformed or incompatible input data / files."""


class NumericError(RuntimeError):
    """Numerical failure: NaN/Inf loss, non-convergent decomposition."""
