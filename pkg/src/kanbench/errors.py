"""Exception taxonomy shared by all kanbench modules."""


class KanbenchError(Exception):
    """Base class for all kanbench errors."""


class ShapeError(KanbenchError):
    """Operands have incompatible shapes."""


class InputError(KanbenchError):
    """Input values violate an operation's contract (labels, file contents)."""


class ConfigError(KanbenchError):
    """Invalid configuration: unknown keys, bad architecture, bad groups."""


class FormatError(KanbenchError):
    """A binary/text file does not match its declared format."""


class NumericError(KanbenchError):
    """Non-finite values where finite ones are required (diverged training)."""


class UnsupportedOrderError(KanbenchError):
    """Spline operation undefined for the requested order."""
