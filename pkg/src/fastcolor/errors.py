"""Exception types shared across the package."""


class FastcolorError(Exception):
    """Base class for all package errors."""


class ParameterError(FastcolorError, ValueError):
    """An argument is outside its documented domain."""


class StateError(FastcolorError, RuntimeError):
    """An operation was applied to an object in the wrong state."""


class ContractError(FastcolorError, ValueError):
    """An internal consistency check failed (caller broke a precondition)."""


class ParseError(FastcolorError, ValueError):
    """A file could not be parsed; message carries the line number."""


class SizeError(FastcolorError, ValueError):
    """An input exceeds a documented size cap."""
