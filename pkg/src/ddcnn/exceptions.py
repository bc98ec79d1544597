"""Exception hierarchy shared by every ddcnn module."""


class DDCNNError(Exception):
    """Base class for all library errors."""


class ShapeError(DDCNNError, ValueError):
    """Rank or extent mismatch between tensors, boxes or layer specs."""


class ParameterError(DDCNNError, ValueError):
    """A hyperparameter or argument lies outside its admissible range."""


class UnsupportedVariantError(ParameterError):
    """Requested decomposition/architecture variant does not apply here."""


class NumericError(DDCNNError, FloatingPointError):
    """Non-finite values reached a loss or an optimizer update."""


class FormatError(DDCNNError, ValueError):
    """A file on disk does not follow the expected binary or text layout."""
