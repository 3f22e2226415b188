"""Exception hierarchy shared by every module in the package."""


class SecAggLabError(Exception):
    """Base class for all errors raised by secagglab."""


class ConfigurationError(SecAggLabError, ValueError):
    """An unsupported or inconsistent parameter was supplied."""


class InvalidKeyError(SecAggLabError, ValueError):
    pass


class InsufficientSharesError(SecAggLabError):
    pass


class TamperError(SecAggLabError):
    """Authenticated decryption failed."""


class DataError(SecAggLabError, ValueError):
    pass


class DomainError(SecAggLabError, ValueError):
    pass


class ExhaustionError(SecAggLabError):
    """No admissible pairing distance is left."""


class AbortRound(SecAggLabError):
    """The current round cannot complete and must be abandoned."""


class ProtocolError(SecAggLabError):
    pass


class ProtocolOrderError(ProtocolError):
    """An operation was invoked in the wrong protocol phase."""


class TrainingError(SecAggLabError):
    pass


class ExperimentFailure(SecAggLabError):
    """A simulated run could not finish; ``round_number`` is the offending round."""

    def __init__(self, message, round_number=None):
        super().__init__(message)
        self.round_number = round_number
