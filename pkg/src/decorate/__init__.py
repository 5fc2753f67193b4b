"""Corpus decoration toolkit: rate, tag, and edit pretraining text, then
select a high-quality, domain-balanced subcorpus with seeded samplers."""

from .types import (
    AnnotatedDocument,
    ComparisonRecord,
    Criterion,
    Document,
    RatingVector,
    TagPath,
    Winner,
    canonical_criterion_order,
)

__all__ = [
    "AnnotatedDocument",
    "ComparisonRecord",
    "Criterion",
    "Document",
    "RatingVector",
    "TagPath",
    "Winner",
    "canonical_criterion_order",
]

__version__ = "0.1.0"
