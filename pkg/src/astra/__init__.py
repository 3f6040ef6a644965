"""Curated text-to-pose retrieval engine with reference conditioning kernels."""

__version__ = "0.1.0"

from .errors import (
    AstraError,
    CalibrationError,
    ClientError,
    ConfigError,
    IndexFormatError,
    ParseError,
    UndefinedMetricError,
    ValidationError,
)

__all__ = [
    "AstraError",
    "CalibrationError",
    "ClientError",
    "ConfigError",
    "IndexFormatError",
    "ParseError",
    "UndefinedMetricError",
    "ValidationError",
    "__version__",
]
