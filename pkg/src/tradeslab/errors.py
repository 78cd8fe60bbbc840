"""Exception hierarchy shared by every module."""


class LabError(Exception):
    """Base class for all errors raised by tradeslab."""


class DimensionError(LabError, ValueError):
    """Operand shapes do not conform for a primitive."""


class ContractError(LabError, ValueError):
    """A documented precondition was violated."""


class DataError(LabError, ValueError):
    """Malformed or insufficient dataset input."""


class ConfigError(LabError, ValueError):
    """Invalid experiment configuration.

    ``path`` is the dotted location of the offending field, e.g. ``train.beta``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CheckpointError(LabError, ValueError):
    """Checkpoint file is corrupt or does not match the requested model."""


class NumericalError(LabError, ArithmeticError):
    """A loss or gradient became non-finite during training."""
