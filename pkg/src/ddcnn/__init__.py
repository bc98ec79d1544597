"""Domain-decomposition CNN training: local patch networks fused by a coarse dense net."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    DDCNNError,
    FormatError,
    NumericError,
    ParameterError,
    ShapeError,
    UnsupportedVariantError,
)

__all__ = [
    "DDCNNError",
    "FormatError",
    "NumericError",
    "ParameterError",
    "ShapeError",
    "UnsupportedVariantError",
    "__version__",
]
