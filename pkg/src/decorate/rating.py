"""Pairwise-comparison rating: Bradley-Terry fitting, score normalization,
and rank-correlation checks.

Each criterion is fitted independently. A document's fitted strength is a
log-strength theta; the pairwise win probability between documents i and j
is sigmoid(theta_i - theta_j). Fitting is regularized by giving every
document ``prior_pseudo_wins`` virtual wins and losses against a fixed
average opponent (log-strength 0), which keeps all-win/all-loss documents
finite and connects disconnected comparison graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateInput, LengthMismatch, NoComparisons
from .types import ComparisonRecord, Criterion, RatingVector, Winner, canonical_criterion_order

DEFAULT_PRIOR = 0.1
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


@dataclass
class BtFit:
    """Fitted per-criterion strengths (mean-centered log scale)."""

    criterion: Criterion
    strengths: dict[str, float]
    iterations: int
    final_delta: float
    log_likelihood: float
    converged: bool
    ll_history: list[float] = field(default_factory=list, repr=False)

    def win_probability(self, doc_a: str, doc_b: str) -> float:
        """P(doc_a beats doc_b) under the fitted model."""
        d = self.strengths[doc_a] - self.strengths[doc_b]
        return 1.0 / (1.0 + np.exp(-d))

    def report(self) -> dict:
        return {
            "criterion": self.criterion.value,
            "iterations": self.iterations,
            "final_delta": self.final_delta,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "documents": len(self.strengths),
        }


@dataclass
class NormalizationResult:
    """Rank-uniform scores on [0, 100]; ties broken by id, ascending."""

    scores: dict[str, float]
    tie_break: str = "by id, ascending"


def fit_bradley_terry(
    comparisons: Sequence[ComparisonRecord],
    prior_pseudo_wins: float = DEFAULT_PRIOR,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> BtFit:
    """Maximize the regularized Bradley-Terry likelihood for one criterion.

    Minorization-maximization on the strength scale: each iteration sets
    pi_i <- wins_i / sum_j n_ij / (pi_i + pi_j), with the virtual opponent
    (strength 1) included in both numerator and denominator via the prior
    pseudo-counts. The objective is non-decreasing every iteration; the loop
    stops when the max absolute log-strength change drops below ``tol``.
    Hitting ``max_iter`` first returns the fit flagged as unconverged.
    """
    if not comparisons:
        raise NoComparisons("no comparison records supplied")
    if prior_pseudo_wins < 0:
        raise ValueError("prior_pseudo_wins must be >= 0")
    criteria = {rec.criterion for rec in comparisons}
    if len(criteria) != 1:
        raise ValueError(f"expected one criterion, got {sorted(c.value for c in criteria)}")
    criterion = next(iter(criteria))

    ids = sorted({d for rec in comparisons for d in (rec.doc_a, rec.doc_b)})
    index = {doc_id: i for i, doc_id in enumerate(ids)}
    n = len(ids)

    wins = np.zeros(n)
    pair_matches: dict[tuple[int, int], int] = {}
    for rec in comparisons:
        a, b = index[rec.doc_a], index[rec.doc_b]
        wins[a if rec.winner is Winner.A else b] += 1.0
        key = (a, b) if a < b else (b, a)
        pair_matches[key] = pair_matches.get(key, 0) + 1

    pair_i = np.array([k[0] for k in pair_matches], dtype=np.intp)
    pair_j = np.array([k[1] for k in pair_matches], dtype=np.intp)
    n_ij = np.array(list(pair_matches.values()), dtype=float)

    prior = float(prior_pseudo_wins)
    w = wins + prior  # prior virtual wins against the fixed opponent

    def log_likelihood(pi: np.ndarray) -> float:
        ll = float(w @ np.log(pi))
        ll -= float(n_ij @ np.log(pi[pair_i] + pi[pair_j]))
        ll -= 2.0 * prior * float(np.sum(np.log(pi + 1.0)))
        return ll

    pi = np.ones(n)
    theta = np.zeros(n)
    ll_history = [log_likelihood(pi)]
    delta = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        denom = np.zeros(n)
        contrib = n_ij / (pi[pair_i] + pi[pair_j])
        np.add.at(denom, pair_i, contrib)
        np.add.at(denom, pair_j, contrib)
        if prior > 0.0:
            denom += 2.0 * prior / (pi + 1.0)
        pi = w / denom
        new_theta = np.log(pi)
        delta = float(np.max(np.abs(new_theta - theta)))
        theta = new_theta
        ll_history.append(log_likelihood(pi))
        if delta < tol:
            break

    centered = theta - theta.mean()
    return BtFit(
        criterion=criterion,
        strengths={doc_id: float(centered[i]) for doc_id, i in index.items()},
        iterations=iterations,
        final_delta=delta,
        log_likelihood=ll_history[-1],
        converged=delta < tol,
        ll_history=ll_history,
    )


def normalize_scores(fit: BtFit) -> NormalizationResult:
    """Map strengths onto the uniform 0-100 scale by rank.

    Documents sorted ascending by (strength, id); rank r of n gets
    100 * r / (n - 1). A single document gets the midpoint 50.
    """
    ids = sorted(fit.strengths, key=lambda d: (fit.strengths[d], d))
    n = len(ids)
    if n == 1:
        return NormalizationResult(scores={ids[0]: 50.0})
    return NormalizationResult(
        scores={doc_id: 100.0 * r / (n - 1) for r, doc_id in enumerate(ids)}
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks (1-based), ties receiving the group average."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rho: Pearson correlation of fractional (average) ranks."""
    if len(x) != len(y):
        raise LengthMismatch(f"length {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise LengthMismatch("need at least 2 observations")
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise DegenerateInput("inputs must be finite")
    rx = _average_ranks(xa)
    ry = _average_ranks(ya)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = np.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        raise DegenerateInput("zero rank variance")
    return float(dx @ dy) / denom


def criterion_correlation_matrix(ratings: Sequence[RatingVector]) -> np.ndarray:
    """8x8 Spearman matrix between criteria, in canonical criterion order."""
    if len(ratings) < 2:
        raise LengthMismatch("need at least 2 rating vectors")
    order = canonical_criterion_order()
    columns = {c: [rv[c] for rv in ratings] for c in order}
    m = np.eye(len(order))
    for i, ci in enumerate(order):
        for j in range(i + 1, len(order)):
            rho = spearman(columns[ci], columns[order[j]])
            m[i, j] = m[j, i] = rho
    return m
