"""Exception taxonomy.

Two families matter for CLI exit codes: ``DataError`` (bad or missing input
data, exit code 2) and ``BackendError`` (annotation backend failures, exit
code 3). Everything derives from ``DecorateError``.
"""

from __future__ import annotations


class DecorateError(Exception):
    """Base class for all package errors."""


class DataError(DecorateError):
    """Input data is missing, malformed, or inconsistent."""


class BackendError(DecorateError):
    """An annotation backend failed or replied unusably."""


# corpus io

class MalformedRecord(DataError):
    pass


class MissingShard(DataError):
    pass


class IoFailure(DataError):
    pass


class UnknownTokenizer(DataError):
    pass


# annotator gateway

class TooFewDocuments(DataError):
    pass


class TransportError(BackendError):
    pass


class UnparseableReply(BackendError):
    pass


class UnknownTag(BackendError):
    pass


class PathMismatch(BackendError):
    pass


class EmptyReply(BackendError):
    pass


# rating engine

class NoComparisons(DataError):
    pass


class LengthMismatch(DataError):
    pass


class DegenerateInput(DataError):
    pass


# tag taxonomy

class SchemaError(DataError):
    pass


class DuplicateSibling(DataError):
    pass


class WrongDepth(DataError):
    pass


class InvalidTagPath(DataError):
    pass


class EmptyCounts(DataError):
    pass


class InvalidDistribution(DataError):
    pass


# samplers

class NonPositiveTau(DataError):
    pass


class MissingRatings(DataError):
    pass


class MissingTags(DataError):
    pass


class MissingStats(DataError):
    pass


class MissingEditedText(DataError):
    pass


class BudgetInfeasible(DataError):
    pass


class ZeroCountPath(DataError):
    pass


class IdMismatch(DataError):
    pass


class NonPositiveWeight(DataError):
    pass


# metrics

class EmptySource(DataError):
    pass


class ScorerFailure(DataError):
    pass
