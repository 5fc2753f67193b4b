"""Selection strategies over rated/tagged/edited corpora.

All strategies are seeded and deterministic. Weighted selection without
replacement uses the exponential-key order statistic: each document gets
key = -ln(u) / w with u drawn from a counter-based stream keyed by
(seed, stage, doc id), and the smallest keys are taken until the token
budget is met. Budgets use "last document may overshoot" semantics;
documents are never split.

Strategy names accepted by ``run_strategy``:

- ``separate``      phase-wise selection, one criterion at a time
- ``aggregate``     single pass over a weighted sum of standardized scores
- ``tag``           smoothed tag-frequency balancing
- ``agg_tag``       aggregate x tag, multiplied per document
- ``sep_tag``       criterion-weight-combined per-criterion weights x tag
- ``agg_edit``      aggregate, then an edited-text mix-in
- ``agg_tag_edit``  aggregate x tag, then an edited-text mix-in
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import (
    BudgetInfeasible,
    IdMismatch,
    MalformedRecord,
    MissingEditedText,
    MissingRatings,
    MissingStats,
    MissingTags,
    NonPositiveTau,
    NonPositiveWeight,
    TooFewDocuments,
    ZeroCountPath,
)
from .taxonomy import PATH_SEP, TagCounts, TagTaxonomy, count_tags
from .types import AnnotatedDocument, Criterion, RatingVector, TagPath
from .util import derive_seed, fingerprint_json, stable_u01

# Default criterion profile: 0.2 on the four knowledge-bearing dimensions,
# 0.05 on the rest.
DEFAULT_CRITERION_WEIGHTS: dict[Criterion, float] = {
    Criterion.EDUCATIONAL_VALUE: 0.2,
    Criterion.EXPERTISE: 0.2,
    Criterion.FACT_AND_TRIVIA: 0.2,
    Criterion.REASONING_LEVEL: 0.2,
    Criterion.SCARCITY: 0.05,
    Criterion.STRUCTURAL_FORMAT: 0.05,
    Criterion.STORY_LIKENESS: 0.05,
    Criterion.SUBJECTIVITY: 0.05,
}

STRATEGIES = (
    "separate",
    "aggregate",
    "tag",
    "agg_tag",
    "sep_tag",
    "agg_edit",
    "agg_tag_edit",
)


# ---------------------------------------------------------------------------
# configs

@dataclass(frozen=True)
class SeparateConfig:
    """Phase-wise selection config; weights must sum to 1."""

    criterion_weights: Mapping[Criterion, float]
    target_tokens: int
    midpoint: float = 50.0
    temperature: float = 50.0

    def __post_init__(self) -> None:
        if self.temperature <= 0.0:
            raise NonPositiveTau(f"temperature must be > 0, got {self.temperature}")
        if any(w < 0 for w in self.criterion_weights.values()):
            raise ValueError("criterion weights must be >= 0")
        total = sum(self.criterion_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"criterion weights sum to {total!r}, not 1")


@dataclass(frozen=True)
class AggregateConfig:
    """Single-pass weighted-sum config; stds must be strictly positive."""

    criterion_weights: Mapping[Criterion, float]
    score_means: Mapping[Criterion, float]
    score_stds: Mapping[Criterion, float]
    target_tokens: int

    def __post_init__(self) -> None:
        if any(k < 0 for k in self.criterion_weights.values()):
            raise ValueError("criterion weights must be >= 0")
        for crit, sigma in self.score_stds.items():
            if sigma <= 0.0:
                raise MissingStats(f"std for {crit.value} must be > 0, got {sigma}")


@dataclass(frozen=True)
class TagSamplerConfig:
    """Smoothing exponents per taxonomy level; 1 reproduces the empirical
    tag distribution, 0 samples present paths uniformly."""

    exponents: tuple[float, float, float] = (0.5, 0.5, 0.5)
    target_tokens: int = 0
    overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not all(math.isfinite(e) for e in self.exponents):
            raise ValueError(f"exponents must be finite, got {self.exponents}")
        for prefix, mult in self.overrides.items():
            if mult <= 0.0:
                raise ValueError(f"override for {prefix!r} must be > 0, got {mult}")


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class ManifestEntry:
    doc_id: str
    weight: float
    tokens: int
    phase: Optional[Criterion] = None
    edited: bool = False


@dataclass
class SampleManifest:
    """Deterministic record of a selection: ordered entries, seed, and the
    fingerprint of the config that produced it."""

    entries: list[ManifestEntry]
    seed: int
    config_fingerprint: str
    total_tokens: int

    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "type": "sample_manifest",
                "seed": self.seed,
                "config_fingerprint": self.config_fingerprint,
                "total_tokens": self.total_tokens,
                "entries": len(self.entries),
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for e in self.entries:
                record: dict = {
                    "id": e.doc_id,
                    "weight": e.weight,
                    "tokens": e.tokens,
                    "edited": e.edited,
                }
                if e.phase is not None:
                    record["phase"] = e.phase.value
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SampleManifest":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
                if header.get("type") != "sample_manifest":
                    raise MalformedRecord(f"{path}: not a sample manifest")
                entries = []
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    entries.append(
                        ManifestEntry(
                            doc_id=rec["id"],
                            weight=float(rec["weight"]),
                            tokens=int(rec["tokens"]),
                            phase=Criterion(rec["phase"]) if "phase" in rec else None,
                            edited=bool(rec["edited"]),
                        )
                    )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MalformedRecord(f"{path}: {exc}") from None
        return cls(
            entries=entries,
            seed=int(header["seed"]),
            config_fingerprint=str(header["config_fingerprint"]),
            total_tokens=int(header["total_tokens"]),
        )


def _check_no_duplicates(entries: Sequence[ManifestEntry]) -> None:
    ids = [e.doc_id for e in entries]
    if len(ids) != len(set(ids)):
        raise IdMismatch("manifest contains duplicate document ids")


# ---------------------------------------------------------------------------
# per-document weights

def separate_weight(score: float, midpoint: float = 50.0, temperature: float = 50.0) -> float:
    """exp((score - midpoint) / temperature); strictly increasing in score."""
    if temperature <= 0.0:
        raise NonPositiveTau(f"temperature must be > 0, got {temperature}")
    return math.exp((score - midpoint) / temperature)


def separate_profile_weight(ratings: RatingVector, config: SeparateConfig) -> float:
    """Criterion-weight-combined scalar of the per-criterion weights; used
    when a phase-wise strategy must be multiplied with another weight map."""
    return sum(
        w * separate_weight(ratings[c], config.midpoint, config.temperature)
        for c, w in config.criterion_weights.items()
    )


def compute_mu_sigma(
    docs: Sequence[AnnotatedDocument], criterion: Criterion
) -> tuple[float, float]:
    """Population mean and std of a criterion's scores; std floored at 1e-9."""
    scores = [ann.ratings[criterion] for ann in docs if ann.ratings is not None]
    if len(scores) < 2:
        raise TooFewDocuments(
            f"need >= 2 rated documents for {criterion.value}, got {len(scores)}"
        )
    n = len(scores)
    mean = sum(scores) / n
    var = sum((s - mean) ** 2 for s in scores) / n
    return mean, max(math.sqrt(var), 1e-9)


def aggregate_weight(ratings: RatingVector, config: AggregateConfig) -> float:
    """Weighted sum over criteria of exp((score - mean) / std)."""
    total = 0.0
    for crit, k in config.criterion_weights.items():
        if k == 0.0:
            continue
        if crit not in config.score_means or crit not in config.score_stds:
            raise MissingStats(f"no mean/std for {crit.value}")
        total += k * math.exp(
            (ratings[crit] - config.score_means[crit]) / config.score_stds[crit]
        )
    return total


def _exp_factor(count: int, exponent: float) -> float:
    # Zero-count siblings are absent from the distribution, for any exponent.
    return 0.0 if count == 0 else count**exponent


def tag_weight(path: TagPath, counts: TagCounts, config: TagSamplerConfig) -> float:
    """Product of three normalized exponentiated-count factors, one per level,
    times any override multipliers whose path prefix matches."""
    a, b, g = config.exponents
    n1 = counts.level1.get(path.level1, 0)
    n2 = counts.level2.get((path.level1, path.level2), 0)
    n3 = counts.level3.get(path.as_tuple(), 0)
    if n1 == 0 or n2 == 0 or n3 == 0:
        raise ZeroCountPath(f"path {path.as_tuple()} has a zero count")

    den1 = sum(_exp_factor(c, a) for c in counts.level1.values())
    den2 = sum(
        _exp_factor(c, b)
        for (l1, _), c in counts.level2.items()
        if l1 == path.level1
    )
    den3 = sum(
        _exp_factor(c, g)
        for (l1, l2, _), c in counts.level3.items()
        if (l1, l2) == (path.level1, path.level2)
    )
    weight = (
        (_exp_factor(n1, a) / den1)
        * (_exp_factor(n2, b) / den2)
        * (_exp_factor(n3, g) / den3)
    )
    for prefix in (
        path.level1,
        PATH_SEP.join((path.level1, path.level2)),
        PATH_SEP.join(path.as_tuple()),
    ):
        mult = config.overrides.get(prefix)
        if mult is not None:
            weight *= mult
    return weight


def combine_weights(
    per_doc_a: Mapping[str, float], per_doc_b: Mapping[str, float]
) -> dict[str, float]:
    """Elementwise product over identical id sets."""
    if set(per_doc_a) != set(per_doc_b):
        only_a = sorted(set(per_doc_a) - set(per_doc_b))[:5]
        only_b = sorted(set(per_doc_b) - set(per_doc_a))[:5]
        raise IdMismatch(f"id sets differ (a-only {only_a}, b-only {only_b})")
    return {doc_id: per_doc_a[doc_id] * per_doc_b[doc_id] for doc_id in per_doc_a}


# ---------------------------------------------------------------------------
# selection

def _select_by_exponential_keys(
    docs: Sequence[AnnotatedDocument],
    weights: Mapping[str, float],
    budget_tokens: float,
    seed: int,
    stage: tuple[str, ...],
) -> list[AnnotatedDocument]:
    """Ascending-key prefix whose token sum first reaches the budget."""
    keyed = []
    for ann in docs:
        w = weights[ann.doc.id]
        if w <= 0.0 or not math.isfinite(w):
            raise NonPositiveWeight(
                f"document {ann.doc.id!r} has non-positive weight {w!r}"
            )
        u = stable_u01(seed, *stage, ann.doc.id)
        keyed.append((-math.log(u) / w, ann.doc.id, ann))
    keyed.sort(key=lambda t: (t[0], t[1]))
    selected: list[AnnotatedDocument] = []
    tokens = 0
    for _, _, ann in keyed:
        if tokens >= budget_tokens:
            break
        selected.append(ann)
        tokens += ann.doc.token_count
    return selected


def sample_weighted(
    docs: Sequence[AnnotatedDocument],
    weights: Mapping[str, float],
    target_tokens: int,
    seed: int,
    config_fingerprint: str = "",
) -> SampleManifest:
    """Weighted without-replacement selection until the token budget is met
    (the final document may overshoot it)."""
    missing = [ann.doc.id for ann in docs if ann.doc.id not in weights]
    if missing:
        raise IdMismatch(f"no weight for documents {missing[:5]}")
    available = sum(ann.doc.token_count for ann in docs)
    if available < target_tokens:
        raise BudgetInfeasible(
            f"corpus has {available} tokens, target is {target_tokens}"
        )
    chosen = _select_by_exponential_keys(
        docs, weights, float(target_tokens), seed, ("select",)
    )
    entries = [
        ManifestEntry(
            doc_id=ann.doc.id,
            weight=weights[ann.doc.id],
            tokens=ann.doc.token_count,
        )
        for ann in chosen
    ]
    _check_no_duplicates(entries)
    return SampleManifest(
        entries=entries,
        seed=seed,
        config_fingerprint=config_fingerprint,
        total_tokens=sum(e.tokens for e in entries),
    )


def sample_separate(
    docs: Sequence[AnnotatedDocument],
    config: SeparateConfig,
    seed: int,
    config_fingerprint: str = "",
) -> SampleManifest:
    """Phase-wise selection, criteria in descending configured weight
    (canonical order breaks ties). Each phase draws from the documents no
    earlier phase selected, with per-document weight exp((score - midpoint)
    / temperature) for that phase's criterion, until the phase budget
    (weight x target) is met."""
    for ann in docs:
        if ann.ratings is None:
            raise MissingRatings(f"document {ann.doc.id!r} has no ratings")
    available = sum(ann.doc.token_count for ann in docs)
    if available < config.target_tokens:
        raise BudgetInfeasible(
            f"corpus has {available} tokens, target is {config.target_tokens}"
        )

    order = {c: i for i, c in enumerate(Criterion)}
    phases = sorted(
        config.criterion_weights.items(), key=lambda kv: (-kv[1], order[kv[0]])
    )
    remaining: dict[str, AnnotatedDocument] = {ann.doc.id: ann for ann in docs}
    entries: list[ManifestEntry] = []
    for criterion, crit_weight in phases:
        budget = crit_weight * config.target_tokens
        if budget <= 0.0 or not remaining:
            continue
        pool = list(remaining.values())
        phase_weights = {
            ann.doc.id: separate_weight(
                ann.ratings[criterion], config.midpoint, config.temperature
            )
            for ann in pool
        }
        chosen = _select_by_exponential_keys(
            pool, phase_weights, budget, seed, ("select", criterion.value)
        )
        for ann in chosen:
            entries.append(
                ManifestEntry(
                    doc_id=ann.doc.id,
                    weight=phase_weights[ann.doc.id],
                    tokens=ann.doc.token_count,
                    phase=criterion,
                )
            )
            del remaining[ann.doc.id]
    _check_no_duplicates(entries)
    return SampleManifest(
        entries=entries,
        seed=seed,
        config_fingerprint=config_fingerprint,
        total_tokens=sum(e.tokens for e in entries),
    )


def oversample_then_truncate(
    manifest: SampleManifest, keep_fraction: float = 45.0 / 58.5, seed: int = 0
) -> SampleManifest:
    """Thin a manifest to ~keep_fraction of its tokens by removing entries
    in seeded uniform-random order until the token sum no longer exceeds
    keep_fraction x total; survivors keep their original order. Random
    thinning of an already-weighted sample plays the role of a higher
    sampling temperature."""
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    budget = keep_fraction * manifest.total_tokens
    rng = random.Random(seed)
    removal_order = rng.sample(range(len(manifest.entries)), len(manifest.entries))
    removed: set[int] = set()
    tokens = manifest.total_tokens
    for idx in removal_order:
        if tokens <= budget:
            break
        tokens -= manifest.entries[idx].tokens
        removed.add(idx)
    entries = [e for i, e in enumerate(manifest.entries) if i not in removed]
    return SampleManifest(
        entries=entries,
        seed=seed,
        config_fingerprint=manifest.config_fingerprint,
        total_tokens=sum(e.tokens for e in entries),
    )


def mix_edited(
    manifest: SampleManifest,
    annotations: Mapping[str, AnnotatedDocument],
    fraction: float,
    seed: int,
    allow_partial: bool = False,
) -> SampleManifest:
    """Flag exactly floor(fraction x n) uniformly chosen entries as edited,
    preserving ids and order; totals are recomputed with edited token counts
    for the flagged entries.

    Entries lacking edited text make the call fail unless ``allow_partial``,
    which shrinks the replacement pool to the entries that have one.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n = len(manifest.entries)
    k = int(fraction * n)
    rng = random.Random(seed)
    if allow_partial:
        pool = [
            i
            for i, e in enumerate(manifest.entries)
            if (ann := annotations.get(e.doc_id)) is not None
            and ann.edited_text is not None
        ]
        chosen = set(rng.sample(pool, min(k, len(pool))))
    else:
        chosen = set(rng.sample(range(n), k))
        unavailable = [
            manifest.entries[i].doc_id
            for i in sorted(chosen)
            if (ann := annotations.get(manifest.entries[i].doc_id)) is None
            or ann.edited_text is None
        ]
        if unavailable:
            raise MissingEditedText(
                f"no edited text for {unavailable[:10]}"
                + (f" (+{len(unavailable) - 10} more)" if len(unavailable) > 10 else "")
            )
    entries = []
    for i, e in enumerate(manifest.entries):
        if i in chosen:
            ann = annotations[e.doc_id]
            entries.append(
                ManifestEntry(
                    doc_id=e.doc_id,
                    weight=e.weight,
                    tokens=ann.edited_token_count,
                    phase=e.phase,
                    edited=True,
                )
            )
        else:
            entries.append(e)
    return SampleManifest(
        entries=entries,
        seed=seed,
        config_fingerprint=manifest.config_fingerprint,
        total_tokens=sum(e.tokens for e in entries),
    )


# ---------------------------------------------------------------------------
# strategy runner

@dataclass
class StrategyConfig:
    """Parsed strategy file; ``raw`` keeps the original dict for fingerprints."""

    strategy: str
    target_tokens: int
    criterion_weights: dict[Criterion, float]
    midpoint: float = 50.0
    temperature: float = 50.0
    exponents: tuple[float, float, float] = (0.5, 0.5, 0.5)
    keep_fraction: float = 1.0
    edited_fraction: float = 1.0 / 3.0
    overrides: dict[str, float] = field(default_factory=dict)
    seed: Optional[int] = None
    raw: dict = field(default_factory=dict)


def parse_strategy_config(doc: Mapping) -> StrategyConfig:
    """Parse the strategy JSON. Recognized keys: strategy, target_tokens,
    k (criterion -> weight), lambda, tau, alpha, beta, gamma, keep_fraction,
    edited_fraction, overrides, seed."""
    strategy = doc.get("strategy")
    if strategy not in STRATEGIES:
        raise MalformedRecord(
            f"unknown strategy {strategy!r}; expected one of {STRATEGIES}"
        )
    if "target_tokens" not in doc:
        raise MalformedRecord("strategy config must set target_tokens")
    weights = dict(DEFAULT_CRITERION_WEIGHTS)
    if "k" in doc:
        try:
            weights = {Criterion(name): float(v) for name, v in doc["k"].items()}
        except (ValueError, AttributeError) as exc:
            raise MalformedRecord(f"bad criterion weights: {exc}") from None
    return StrategyConfig(
        strategy=strategy,
        target_tokens=int(doc["target_tokens"]),
        criterion_weights=weights,
        midpoint=float(doc.get("lambda", 50.0)),
        temperature=float(doc.get("tau", 50.0)),
        exponents=(
            float(doc.get("alpha", 0.5)),
            float(doc.get("beta", 0.5)),
            float(doc.get("gamma", 0.5)),
        ),
        keep_fraction=float(doc.get("keep_fraction", 1.0)),
        edited_fraction=float(doc.get("edited_fraction", 1.0 / 3.0)),
        overrides={str(k): float(v) for k, v in doc.get("overrides", {}).items()},
        seed=int(doc["seed"]) if "seed" in doc else None,
        raw=dict(doc),
    )


def _require_ratings(docs: Sequence[AnnotatedDocument]) -> None:
    missing = [ann.doc.id for ann in docs if ann.ratings is None]
    if missing:
        raise MissingRatings(f"documents without ratings: {missing[:10]}")


def _tag_weights(
    docs: Sequence[AnnotatedDocument],
    taxonomy: TagTaxonomy,
    config: TagSamplerConfig,
) -> dict[str, float]:
    untagged = [ann.doc.id for ann in docs if ann.tags is None]
    if untagged:
        raise MissingTags(f"documents without tags: {untagged[:10]}")
    counts = count_tags(docs, taxonomy)
    return {ann.doc.id: tag_weight(ann.tags, counts, config) for ann in docs}


def _aggregate_weights(
    docs: Sequence[AnnotatedDocument], cfg: StrategyConfig
) -> dict[str, float]:
    _require_ratings(docs)
    active = [c for c, k in cfg.criterion_weights.items() if k > 0]
    stats = {c: compute_mu_sigma(docs, c) for c in active}
    agg = AggregateConfig(
        criterion_weights=cfg.criterion_weights,
        score_means={c: m for c, (m, _) in stats.items()},
        score_stds={c: s for c, (_, s) in stats.items()},
        target_tokens=cfg.target_tokens,
    )
    return {ann.doc.id: aggregate_weight(ann.ratings, agg) for ann in docs}


def run_strategy(
    docs: Sequence[AnnotatedDocument],
    config: StrategyConfig,
    seed: int,
    taxonomy: Optional[TagTaxonomy] = None,
    allow_partial: bool = False,
) -> SampleManifest:
    """Execute a strategy over joined annotations, then apply the configured
    oversample-truncate thinning and edited mix-in."""
    fingerprint = fingerprint_json(config.raw)
    tag_cfg = TagSamplerConfig(
        exponents=config.exponents,
        target_tokens=config.target_tokens,
        overrides=config.overrides,
    )
    needs_tags = config.strategy in ("tag", "agg_tag", "sep_tag", "agg_tag_edit")
    if needs_tags and taxonomy is None:
        raise MissingTags(f"strategy {config.strategy!r} needs a taxonomy")

    if config.strategy == "separate":
        sep = SeparateConfig(
            criterion_weights=config.criterion_weights,
            target_tokens=config.target_tokens,
            midpoint=config.midpoint,
            temperature=config.temperature,
        )
        manifest = sample_separate(docs, sep, seed, fingerprint)
    else:
        if config.strategy in ("aggregate", "agg_edit"):
            weights = _aggregate_weights(docs, config)
        elif config.strategy == "tag":
            weights = _tag_weights(docs, taxonomy, tag_cfg)
        elif config.strategy in ("agg_tag", "agg_tag_edit"):
            weights = combine_weights(
                _aggregate_weights(docs, config),
                _tag_weights(docs, taxonomy, tag_cfg),
            )
        elif config.strategy == "sep_tag":
            _require_ratings(docs)
            sep = SeparateConfig(
                criterion_weights=config.criterion_weights,
                target_tokens=config.target_tokens,
                midpoint=config.midpoint,
                temperature=config.temperature,
            )
            sep_weights = {
                ann.doc.id: separate_profile_weight(ann.ratings, sep) for ann in docs
            }
            weights = combine_weights(sep_weights, _tag_weights(docs, taxonomy, tag_cfg))
        else:  # pragma: no cover - parse_strategy_config guards this
            raise MalformedRecord(f"unknown strategy {config.strategy!r}")
        manifest = sample_weighted(
            docs, weights, config.target_tokens, seed, fingerprint
        )

    if config.keep_fraction < 1.0:
        manifest = oversample_then_truncate(
            manifest, config.keep_fraction, derive_seed(seed, "truncate")
        )
    if config.strategy.endswith("edit"):
        annotations = {ann.doc.id: ann for ann in docs}
        manifest = mix_edited(
            manifest,
            annotations,
            config.edited_fraction,
            derive_seed(seed, "edit-mix"),
            allow_partial=allow_partial,
        )
    return manifest
