"""Exception types shared by the library and the command line front door."""


class WhitneyBundlesError(Exception):
    """Base class for all errors raised by whitney_bundles."""


class InvalidInputError(WhitneyBundlesError, ValueError):
    """Arguments that violate an operation's preconditions."""


class ModulusError(InvalidInputError):
    """A modulus of continuity that is not regular.

    ``condition`` names the violated property so callers can report it.
    """

    def __init__(self, condition, message=None):
        self.condition = condition
        super().__init__(message or f"not a regular modulus: {condition} violated")


class SpecFileError(WhitneyBundlesError):
    """An instance file that cannot be parsed or fails validation."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
