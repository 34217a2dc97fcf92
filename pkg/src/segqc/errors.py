"""Exception types shared across the package."""


class DataError(ValueError):
    """Invalid or inconsistent input data (bad files, labels, dimensions)."""


class UndefinedMetricError(DataError):
    """A metric was requested on inputs for which it is undefined."""
