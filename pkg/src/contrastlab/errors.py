"""Exception types shared across the library.

The CLI maps these onto exit codes: configuration/contract problems exit 1,
diverged training runs exit 2, file-format and I/O problems exit 3.
"""


class ContrastLabError(Exception):
    """Base class for all library errors."""


class DimensionError(ContrastLabError):
    """Operand shapes do not chain; the message names both shapes."""


class ConfigurationError(ContrastLabError):
    """A config value or call parameter is outside its allowed range."""


class ContractError(ContrastLabError):
    """An input violates a documented precondition."""


class DomainError(ContrastLabError):
    """A numeric input or probe point left the operation's domain (NaN/Inf)."""


class FormatError(ContrastLabError):
    """A file failed to parse; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergedRunError(ContrastLabError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch}, batch {batch})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
