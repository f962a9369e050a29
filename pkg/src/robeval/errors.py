"""Exception hierarchy shared by every module of the package."""


class RobevalError(Exception):
    """Base class for all errors raised by robeval."""


class InputError(RobevalError, ValueError):
    """Bad shapes, non-finite values or arguments outside their domain."""


class UnsupportedLossError(InputError):
    """A loss was requested for a model it is undefined on (e.g. K < 4)."""


class FormatError(RobevalError):
    """A binary file does not follow its declared layout.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class TrainingError(RobevalError):
    """Training diverged; ``epoch`` tells where."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")


class AttackError(RobevalError):
    """An attack could not run to completion."""


class ConfigError(RobevalError):
    """Invalid run configuration."""
