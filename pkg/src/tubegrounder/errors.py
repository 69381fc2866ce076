"""Exception types shared across the package."""


class TubeGrounderError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(TubeGrounderError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(TubeGrounderError, ValueError):
    """Value outside an operation's mathematical domain (e.g. log of <= 0)."""


class ContractError(TubeGrounderError, ValueError):
    """A documented precondition was violated by the caller."""


class ValidationError(TubeGrounderError, ValueError):
    """A data object violates one of its declared invariants."""


class ParseError(TubeGrounderError, ValueError):
    """A file could not be parsed; the message names the offending location."""


class FeatureLookupError(TubeGrounderError, KeyError):
    """A required (frame, box) feature is missing from the store."""


class ConfigError(TubeGrounderError, ValueError):
    """Inconsistent model or training configuration."""
