"""Exception types shared across the toolkit."""

from __future__ import annotations


class AffectFuseError(Exception):
    """Base class for all toolkit errors."""


# -- dataset ingestion ---------------------------------------------------


class ParseError(AffectFuseError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class LabelError(AffectFuseError):
    pass


class EmptyDataset(AffectFuseError):
    pass


class SizeError(AffectFuseError):
    pass


# -- LLM client ----------------------------------------------------------


class TransportError(AffectFuseError):
    pass


class ApiError(AffectFuseError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"API returned status {status}")


class EmptyResponse(AffectFuseError):
    pass


# -- featurization -------------------------------------------------------


class EmptyCorpus(AffectFuseError):
    pass


class DimMismatch(AffectFuseError):
    pass


class FormatError(AffectFuseError):
    pass


class MissingId(AffectFuseError):
    pass


class DimZero(AffectFuseError):
    pass


# -- model training ------------------------------------------------------


class RangeError(AffectFuseError):
    pass


class NonFiniteLoss(AffectFuseError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged to a non-finite loss at epoch {epoch}")


# -- fusion --------------------------------------------------------------


class IdMismatch(AffectFuseError):
    pass


class EmptyList(AffectFuseError):
    pass


class MissingModality(AffectFuseError):
    pass


# -- tuning --------------------------------------------------------------


class AllTrialsDiverged(AffectFuseError):
    pass


# -- evaluation ----------------------------------------------------------


class EmptyEvaluation(AffectFuseError):
    pass


class DegenerateClass(AffectFuseError):
    pass


class LengthMismatch(AffectFuseError):
    pass


# -- pipeline ------------------------------------------------------------


class PlanSyntaxError(AffectFuseError):
    def __init__(self, message: str, pos: int = 0):
        self.pos = pos
        super().__init__(f"{message} (at position {pos})")


class ConfigError(AffectFuseError):
    pass


class StageError(AffectFuseError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
