"""Exception types shared across the engine."""


class AstraError(Exception):
    """Base class for engine errors."""


class ParseError(AstraError):
    """Malformed input document."""


class ValidationError(AstraError):
    """Input violates a structural invariant."""


class UndefinedMetricError(AstraError):
    """Metric has an empty denominator for the given inputs."""


class CalibrationError(AstraError):
    """Calibration problem is degenerate or underdetermined."""


class IndexFormatError(AstraError):
    """On-disk index data is corrupt or unsupported."""


class ClientError(AstraError):
    """External client call failed or returned malformed data."""


class ConfigError(AstraError):
    """Configuration is missing or invalid."""
