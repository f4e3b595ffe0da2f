"""Exception types shared across the package."""


class ProtoshotError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(ProtoshotError, ValueError):
    """A tensor or weight shape is inconsistent with what a layer declares."""


class WeightLookupError(ProtoshotError, KeyError):
    """A layer references a weight name that the store cannot resolve."""


class NonFiniteError(ProtoshotError, FloatingPointError):
    """A layer produced NaN or Inf, or a gradient is non-finite."""


class FormatError(ProtoshotError, ValueError):
    """A serialized artifact (PSX, IDX, PGM) is malformed or truncated."""


class UnsupportedLayerError(ProtoshotError, ValueError):
    """An operation was asked to handle a layer kind it does not support."""


class ValidationError(ProtoshotError, ValueError):
    """User-supplied parameters failed validation."""
