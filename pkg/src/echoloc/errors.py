"""Exception types shared across the package."""


class FormatError(Exception):
    """A model or dataset file is malformed, truncated, or version-mismatched."""


class MeasurementError(RuntimeError):
    """A signal does not support the requested measurement (e.g. no decay to fit)."""


class SceneSamplingError(RuntimeError):
    """Rejection sampling failed to produce a valid scene within the retry budget."""
