"""Shared domain vocabulary: documents, criteria, ratings, tags, comparisons.

Everything here is an immutable value object; instances are safe to share
across threads and to use as dict keys where hashable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional


class Criterion(enum.Enum):
    """The eight text-quality dimensions a document is scored on.

    Definition order is the canonical order used for deterministic
    tie-breaking throughout the pipeline.
    """

    EDUCATIONAL_VALUE = "educational_value"
    EXPERTISE = "expertise"
    FACT_AND_TRIVIA = "fact_and_trivia"
    REASONING_LEVEL = "reasoning_level"
    SCARCITY = "scarcity"
    STRUCTURAL_FORMAT = "structural_format"
    STORY_LIKENESS = "story_likeness"
    SUBJECTIVITY = "subjectivity"

    def __repr__(self) -> str:  # noqa: D105 - compact logs
        return f"Criterion.{self.name}"


def canonical_criterion_order() -> list[Criterion]:
    """All eight criteria in their fixed canonical order, stable across runs."""
    return list(Criterion)


class Winner(enum.Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class Document:
    """One corpus sample; the unit of sampling and annotation.

    ``id`` is an opaque string, unique within a corpus manifest. It is not a
    content hash: duplicate texts from different sources stay distinct
    sampling units. ``token_count`` is stored (per the configured tokenizer),
    not recomputed on every use.
    """

    id: str
    text: str
    source: str
    token_count: int
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")
        if self.token_count < 0:
            raise ValueError(f"token_count must be >= 0, got {self.token_count}")


@dataclass(frozen=True)
class RatingVector:
    """Per-document map of all eight criteria to scores in [0, 100]."""

    scores: Mapping[Criterion, float]

    def __post_init__(self) -> None:
        missing = [c.value for c in Criterion if c not in self.scores]
        if missing:
            raise ValueError(f"rating vector missing criteria: {missing}")
        extra = [k for k in self.scores if not isinstance(k, Criterion)]
        if extra:
            raise ValueError(f"rating vector has non-criterion keys: {extra}")
        for crit, score in self.scores.items():
            if not (0.0 <= score <= 100.0):
                raise ValueError(
                    f"score for {crit.value} out of [0, 100]: {score}"
                )

    def __getitem__(self, criterion: Criterion) -> float:
        return self.scores[criterion]

    @classmethod
    def from_scores(cls, scores: Mapping[Criterion, float]) -> "RatingVector":
        return cls(scores=dict(scores))


@dataclass(frozen=True)
class ComparisonRecord:
    """One pairwise judgment for a single criterion."""

    criterion: Criterion
    doc_a: str
    doc_b: str
    winner: Winner
    judge: str
    rationale: Optional[str] = None

    def __post_init__(self) -> None:
        if self.doc_a == self.doc_b:
            raise ValueError(f"self-comparison for document {self.doc_a!r}")


@dataclass(frozen=True)
class TagPath:
    """A first -> second -> third level path; validity is relative to a taxonomy."""

    level1: str
    level2: str
    level3: str

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.level1, self.level2, self.level3)


@dataclass(frozen=True)
class AnnotatedDocument:
    """A document together with whichever annotations exist for it."""

    doc: Document
    ratings: Optional[RatingVector] = None
    tags: Optional[TagPath] = None
    edited_text: Optional[str] = None
    edited_token_count: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.edited_text is None) != (self.edited_token_count is None):
            raise ValueError(
                "edited_token_count must be present iff edited_text is present"
            )
        if self.edited_token_count is not None and self.edited_token_count < 0:
            raise ValueError("edited_token_count must be >= 0")
