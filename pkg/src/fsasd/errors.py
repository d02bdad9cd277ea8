"""Exception types raised across the package.

The CLI maps :class:`UnlabeledData` to its own exit code; every other
:class:`AsdError` is reported as a runtime/data error.
"""


class AsdError(Exception):
    """Base class for all package errors."""


# datasets
class MalformedName(AsdError, ValueError):
    pass


class UnknownDomainToken(MalformedName):
    pass


class UnknownLabelToken(MalformedName):
    pass


class MissingDirectory(AsdError, FileNotFoundError):
    pass


class EmptyCorpus(AsdError):
    pass


class MissingDecision(AsdError, ValueError):
    pass


class InvalidWav(AsdError, ValueError):
    pass


class IoFailure(AsdError, OSError):
    pass


# synthgen
class InvalidSpec(AsdError, ValueError):
    pass


# features
class TooShort(AsdError, ValueError):
    pass


class DegenerateBand(AsdError, ValueError):
    pass


class TooFewFrames(AsdError, ValueError):
    pass


class InvalidConfig(AsdError, ValueError):
    pass


# autoencoder
class InvalidArchitecture(AsdError, ValueError):
    pass


class ShapeMismatch(AsdError, ValueError):
    pass


class NonFiniteLoss(AsdError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class CorruptFile(AsdError, ValueError):
    pass


class VersionMismatch(AsdError, ValueError):
    pass


# scoring
class ConfigMismatch(AsdError, ValueError):
    pass


class SingularAfterRidge(AsdError, ArithmeticError):
    pass


class EmptyScores(AsdError, ValueError):
    pass


# metrics
class EmptyList(AsdError, ValueError):
    pass


class PTooSmall(AsdError, ValueError):
    pass


class MissingScores(AsdError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnlabeledData(AsdError):
    pass


# cli
class MissingModel(AsdError, FileNotFoundError):
    pass
