"""Exception hierarchy for the fruitband pipeline.

Every error a pipeline stage can raise on bad domain input derives from
DomainError so the CLI can map them to exit code 1 without a traceback.
"""


class DomainError(Exception):
    """Base class for all expected pipeline failures."""


# --- dataset / manifest ---

class ManifestNotFound(DomainError):
    pass


class ManifestParseError(DomainError):
    pass


class DegenerateSplit(DomainError):
    pass


# --- synthetic generator ---

class InvalidBand(DomainError):
    pass


class OutputNotWritable(DomainError):
    pass


# --- registration ---

class InsufficientCorrespondences(DomainError):
    pass


class DegenerateConfiguration(DomainError):
    pass


class NoModelFound(DomainError):
    pass


class SingularHomography(DomainError):
    pass


class MatchFailure(DomainError):
    pass


# --- model ---

class PretrainedWeightsUnavailable(DomainError):
    pass


class SpecMismatch(DomainError):
    pass


class BranchShapeMismatch(DomainError):
    pass


class ShapeMismatch(DomainError):
    pass


class CorruptCheckpoint(DomainError):
    pass


# --- trainer ---

class EmptyDataset(DomainError):
    pass


class LabelOutOfRange(DomainError):
    pass


class NonFiniteLoss(DomainError):
    pass


# --- evaluation / reporting ---

class EmptyEvaluation(DomainError):
    pass


class LengthMismatch(DomainError):
    pass


class MissingModality(DomainError):
    pass


class UnknownLayout(DomainError):
    pass
