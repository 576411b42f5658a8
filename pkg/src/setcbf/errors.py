"""Exception hierarchy shared across the package."""


class SetCbfError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SetCbfError, ValueError):
    """Inconsistent dimensions, invalid parameters or malformed input files."""


class InfeasibleError(SetCbfError):
    """An optimization problem that must be feasible turned out not to be."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EmptySetError(SetCbfError):
    """A set operation produced an empty set or lost the origin from its interior."""


class ResourceError(SetCbfError):
    """A computation exceeded a configured size limit."""
