"""Exception types shared across the package."""


class QTransferError(Exception):
    """Base class for all package errors."""


class DomainError(QTransferError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ShapeError(QTransferError, ValueError):
    """Input tensor shape does not match what the model expects."""


class TraceError(QTransferError, RuntimeError):
    """A forward trace was used with a model it was not produced by."""


class RosterError(QTransferError, KeyError):
    """Unknown model id or missing checkpoint."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TrainingError(QTransferError, RuntimeError):
    """Training diverged."""

    def __init__(self, epoch, message="loss became non-finite"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class SelectionError(QTransferError, ValueError):
    """Not enough jointly-correct samples to draw an evaluation set."""

    def __init__(self, requested, available):
        super().__init__(
            f"requested {requested} jointly-correct samples, only {available} available"
        )
        self.requested = requested
        self.available = available


class FormatError(QTransferError, ValueError):
    """A binary file is malformed. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(QTransferError, ValueError):
    """Invalid configuration file or command-line option."""
