"""Exception types shared across the package."""


class IKrNetError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(IKrNetError, ValueError):
    pass


class ShapeError(IKrNetError, ValueError):
    pass


class ConfigError(IKrNetError, ValueError):
    pass


class DegenerateSignalError(IKrNetError, ValueError):
    """Raised for inputs with no usable variation (e.g. a flat record)."""


class InsufficientBeatsError(IKrNetError, ValueError):
    pass


class UndefinedROCError(IKrNetError, ValueError):
    """The misclassification indicator holds a single class."""


class DataIntegrityError(IKrNetError):
    """On-disk artifacts disagree with their headers or manifests."""
