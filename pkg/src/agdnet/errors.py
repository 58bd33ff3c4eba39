"""Exception hierarchy shared across the package."""


class AGDError(Exception):
    """Base class for all errors raised by agdnet."""


class DimensionError(AGDError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(AGDError, ValueError):
    """A precondition on an argument was violated."""


class ParameterError(AGDError, ValueError):
    """A numeric parameter is outside its valid range."""


class ConfigurationError(AGDError, ValueError):
    """A configuration document or setting is invalid."""


class TapeStateError(AGDError, RuntimeError):
    """The autodiff record is stale or inconsistent with the request."""


class OptimizerStateError(AGDError, RuntimeError):
    """The optimizer was asked to step without the data it needs."""


class TrainingDivergedError(AGDError, RuntimeError):
    """The training loss became non-finite."""


class FormatError(AGDError, ValueError):
    """A file does not follow its binary or text layout."""


class ChecksumError(FormatError):
    """A checkpoint failed checksum verification."""
