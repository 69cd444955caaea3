"""Exception hierarchy shared across the package."""


class ProfnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ProfnetError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ProfnetError):
    """A documented precondition of an operation was violated."""


class ConfigError(ProfnetError):
    """Invalid or inconsistent configuration values."""


class NumericalError(ProfnetError):
    """A numerical procedure failed (singular system, invalid domain, ...)."""


class FormatError(ProfnetError):
    """A file does not conform to its declared on-disk format."""


class ParseError(ProfnetError):
    """A line of a text input could not be parsed."""


class IngestionError(ProfnetError):
    """A dataset file is structurally valid but incomplete."""


class DomainError(ProfnetError):
    """A value transform was applied outside its mathematical domain."""
