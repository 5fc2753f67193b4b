"""Evaluation analytics: tag accuracy, editing preference tallies,
per-source dataset summaries, and a scorer-agnostic perplexity histogram."""

from __future__ import annotations

import bisect
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import EmptySource, IdMismatch, ScorerFailure
from .taxonomy import TagTaxonomy, count_tags, tag_cross_entropy, tag_distribution
from .types import AnnotatedDocument, Criterion, TagPath, canonical_criterion_order

# Metric names used when judging edited against original texts.
STANDARD_EDIT_METRICS = (
    "Enhanced Clarity",
    "Text Fluency",
    "Term Precision",
    "Logical Coherence",
    "Information Precision",
    "Information Completeness",
)

PREFERENCE_VERDICTS = ("win", "lose", "tie")


@dataclass(frozen=True)
class TagAccuracyReport:
    """Hierarchical-path accuracy: a level counts as a hit only when every
    level above it also matches."""

    level1_acc: float
    level2_acc: float
    level3_acc: float
    n: int

    def to_json(self) -> dict:
        return {
            "level1_acc": self.level1_acc,
            "level2_acc": self.level2_acc,
            "level3_acc": self.level3_acc,
            "n": self.n,
        }


def tag_accuracy(
    predictions: Mapping[str, TagPath], gold: Mapping[str, TagPath]
) -> TagAccuracyReport:
    if set(predictions) != set(gold):
        raise IdMismatch(
            f"prediction ids differ from gold ids "
            f"({len(predictions)} vs {len(gold)} entries)"
        )
    if not gold:
        raise IdMismatch("need at least one prediction")
    hits1 = hits2 = hits3 = 0
    for doc_id, pred in predictions.items():
        truth = gold[doc_id]
        if pred.level1 != truth.level1:
            continue
        hits1 += 1
        if pred.level2 != truth.level2:
            continue
        hits2 += 1
        if pred.level3 == truth.level3:
            hits3 += 1
    n = len(gold)
    return TagAccuracyReport(
        level1_acc=hits1 / n, level2_acc=hits2 / n, level3_acc=hits3 / n, n=n
    )


@dataclass(frozen=True)
class PreferenceTally:
    win: int
    lose: int
    tie: int

    @property
    def n(self) -> int:
        return self.win + self.lose + self.tie

    def rates(self) -> dict[str, float]:
        return {
            "win": self.win / self.n,
            "lose": self.lose / self.n,
            "tie": self.tie / self.n,
        }


@dataclass
class PreferenceReport:
    """Win/lose/tie tallies per evaluation metric."""

    per_metric: dict[str, PreferenceTally]

    def to_json(self) -> dict:
        return {
            metric: {"win": t.win, "lose": t.lose, "tie": t.tie, "n": t.n, **t.rates()}
            for metric, t in self.per_metric.items()
        }


def aggregate_preferences(
    judgments: Iterable[tuple[str, str]]
) -> PreferenceReport:
    """Tally (metric, verdict) judgments; metrics without judgments are
    simply absent from the report."""
    counts: dict[str, dict[str, int]] = defaultdict(lambda: dict.fromkeys(PREFERENCE_VERDICTS, 0))
    for metric, verdict in judgments:
        if verdict not in PREFERENCE_VERDICTS:
            raise ValueError(f"verdict must be one of {PREFERENCE_VERDICTS}, got {verdict!r}")
        counts[metric][verdict] += 1
    return PreferenceReport(
        per_metric={
            metric: PreferenceTally(win=c["win"], lose=c["lose"], tie=c["tie"])
            for metric, c in counts.items()
        }
    )


@dataclass
class SourceSummary:
    source: str
    documents: int
    token_count: int
    mean_ratings: dict[Criterion, float]
    tag_cross_entropy: float

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "documents": self.documents,
            "token_count": self.token_count,
            "mean_ratings": {c.value: v for c, v in self.mean_ratings.items()},
            "tag_cross_entropy": self.tag_cross_entropy,
        }


def dataset_summary(
    annotations: Iterable[AnnotatedDocument], taxonomy: TagTaxonomy
) -> list[SourceSummary]:
    """Per-source mean rating per criterion, first-level tag cross-entropy,
    and token totals; sources ordered by name."""
    by_source: dict[str, list[AnnotatedDocument]] = defaultdict(list)
    for ann in annotations:
        by_source[ann.doc.source].append(ann)
    if not by_source:
        raise EmptySource("no annotated documents")
    rows = []
    for source in sorted(by_source):
        anns = by_source[source]
        rated = [a for a in anns if a.ratings is not None]
        tagged = [a for a in anns if a.tags is not None]
        if not rated or not tagged:
            raise EmptySource(
                f"source {source!r} needs at least one rated and one tagged document"
            )
        means = {
            c: sum(a.ratings[c] for a in rated) / len(rated)
            for c in canonical_criterion_order()
        }
        dist = tag_distribution(count_tags(tagged, taxonomy), level=1)
        rows.append(
            SourceSummary(
                source=source,
                documents=len(anns),
                token_count=sum(a.doc.token_count for a in anns),
                mean_ratings=means,
                tag_cross_entropy=tag_cross_entropy(dist, taxonomy, level=1),
            )
        )
    return rows


def summary_to_csv(rows: Sequence[SourceSummary]) -> str:
    """Plot-ready CSV of dataset_summary rows."""
    criteria = canonical_criterion_order()
    header = ["source", "documents", "token_count", "tag_cross_entropy"] + [
        c.value for c in criteria
    ]
    lines = [",".join(header)]
    for row in rows:
        cells = [
            row.source,
            str(row.documents),
            str(row.token_count),
            f"{row.tag_cross_entropy:.6f}",
        ] + [f"{row.mean_ratings[c]:.6f}" for c in criteria]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def format_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Aligned-column text table."""
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells: Sequence[str]) -> str:
        return "  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"


@dataclass
class PerplexityReport:
    """Paired histograms over score buckets for original and edited texts.

    ``boundaries`` splits the line into len(boundaries) + 1 buckets; bucket i
    holds values v with boundaries[i-1] < v <= boundaries[i]. Documents
    without an edited text appear only in the original histogram.
    """

    boundaries: list[float]
    original: list[int]
    edited: list[int]

    def to_json(self) -> dict:
        return {
            "boundaries": self.boundaries,
            "original": self.original,
            "edited": self.edited,
        }


def perplexity_report(
    docs: Iterable[AnnotatedDocument],
    scorer: Callable[[str], float],
    buckets: Sequence[float],
) -> PerplexityReport:
    boundaries = sorted(buckets)
    original = [0] * (len(boundaries) + 1)
    edited = [0] * (len(boundaries) + 1)

    def score(doc_id: str, text: str) -> float:
        try:
            value = float(scorer(text))
        except Exception as exc:
            raise ScorerFailure(f"scorer failed on {doc_id!r}: {exc}") from exc
        if not math.isfinite(value) or value <= 0.0:
            raise ScorerFailure(f"scorer returned {value!r} for {doc_id!r}")
        return value

    for ann in docs:
        original[bisect.bisect_left(boundaries, score(ann.doc.id, ann.doc.text))] += 1
        if ann.edited_text is not None:
            edited[bisect.bisect_left(boundaries, score(ann.doc.id, ann.edited_text))] += 1
    return PerplexityReport(boundaries=list(boundaries), original=original, edited=edited)
