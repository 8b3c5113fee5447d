"""Detector evaluation metrics: AUROC, AUPR, FPR at a TPR target, histograms.

Scores follow the convention "higher means more in-distribution". The fast
implementations here are sort-based; their O(n^2) pairwise and exhaustive
threshold-sweep twins live in the test suite and must agree to 1e-12.

Conventions pinned here because they change the numbers:
  - AUROC counts ties between the domains as one half.
  - AUPR takes the positive class as an explicit argument (default "out") and
    integrates step-wise, sum of (R_k - R_{k-1}) * P_k over descending
    thresholds with ties grouped - no interpolation.
  - The FPR threshold is the smallest k-th largest in-score whose inclusive
    tail reaches the TPR target; "score >= threshold" counts as predicted-in.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .gda import DOMAIN_IN, DOMAIN_OUT


class MissingDomain(ValueError):
    """The records do not contain at least one score per domain."""


@dataclass(frozen=True)
class ScoreRecord:
    score: float
    domain: str  # "in" or "out"

    def __post_init__(self) -> None:
        if self.domain not in (DOMAIN_IN, DOMAIN_OUT):
            raise ValueError(f"domain must be 'in' or 'out', got {self.domain!r}")
        if not np.isfinite(self.score):
            raise ValueError("score must be finite")


@dataclass(frozen=True)
class MetricsReport:
    auroc: float
    aupr: float
    fpr95: float
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray
    clamped: int  # values outside the range, folded into the end bins
    edges: np.ndarray


def _split_scores(records: Iterable[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    in_scores = []
    out_scores = []
    for rec in records:
        (in_scores if rec.domain == DOMAIN_IN else out_scores).append(rec.score)
    if not in_scores or not out_scores:
        raise MissingDomain("need at least one record per domain")
    return np.asarray(in_scores, dtype=float), np.asarray(out_scores, dtype=float)


def records_from_arrays(scores: Sequence[float], domains: Sequence[str]) -> list[ScoreRecord]:
    return [ScoreRecord(float(s), str(d)) for s, d in zip(scores, domains, strict=True)]


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(records: Iterable[ScoreRecord]) -> float:
    """Probability an in-score outranks an out-score, ties counting one half."""
    in_scores, out_scores = _split_scores(records)
    ranks = _average_ranks(np.concatenate([in_scores, out_scores]))
    n_in, n_out = len(in_scores), len(out_scores)
    rank_sum = float(ranks[:n_in].sum())
    return (rank_sum - n_in * (n_in + 1) / 2.0) / (n_in * n_out)


def aupr(records: Iterable[ScoreRecord], positive: str = DOMAIN_OUT) -> float:
    """Step-wise area under the precision-recall curve for the chosen positive class."""
    if positive not in (DOMAIN_IN, DOMAIN_OUT):
        raise ValueError(f"positive must be 'in' or 'out', got {positive!r}")
    in_scores, out_scores = _split_scores(records)
    if positive == DOMAIN_IN:
        pos, neg = in_scores, out_scores
    else:
        # Low scores flag the out class, so sweep the negated axis.
        pos, neg = -out_scores, -in_scores
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos), dtype=bool), np.zeros(len(neg), dtype=bool)])
    order = np.argsort(-scores, kind="mergesort")
    scores, labels = scores[order], labels[order]
    # Group tied scores at a single threshold.
    distinct = np.nonzero(np.diff(scores))[0]
    group_ends = np.concatenate([distinct, [len(scores) - 1]])
    tp = np.cumsum(labels)[group_ends]
    predicted = group_ends + 1.0
    precision = tp / predicted
    recall = tp / len(pos)
    recall_steps = np.diff(recall, prepend=0.0)
    return float((recall_steps * precision).sum())


def fpr_at_tpr(records: Iterable[ScoreRecord], tpr_target: float = 0.95) -> float:
    """False-positive rate at the threshold where in-recall first reaches the target."""
    if not 0.0 <= tpr_target <= 1.0:
        raise ValueError("tpr_target must be in [0, 1]")
    in_scores, out_scores = _split_scores(records)
    n_in = len(in_scores)
    k = int(np.ceil(tpr_target * n_in))
    while k > 0 and (k - 1) / n_in >= tpr_target:
        k -= 1
    while k / n_in < tpr_target:
        k += 1
    if k == 0:
        return 0.0
    threshold = np.sort(in_scores)[n_in - k]
    return float(np.mean(out_scores >= threshold))


def compute_report(
    records: Sequence[ScoreRecord], aupr_positive: str = DOMAIN_OUT, tpr_target: float = 0.95
) -> MetricsReport:
    in_scores, out_scores = _split_scores(records)
    return MetricsReport(
        auroc=auroc(records),
        aupr=aupr(records, positive=aupr_positive),
        fpr95=fpr_at_tpr(records, tpr_target=tpr_target),
        n_in=len(in_scores),
        n_out=len(out_scores),
    )


def histogram(scores: Sequence[float], bins: int, value_range: tuple[float, float]) -> Histogram:
    """Equal-width counts; bins are left-closed, the final bin also right-closed.

    Values outside the range land in the nearest end bin and are tallied in
    ``clamped``.
    """
    lo, hi = float(value_range[0]), float(value_range[1])
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not lo < hi:
        raise ValueError("range must satisfy lo < hi")
    scores = np.asarray(scores, dtype=float)
    counts = np.zeros(bins, dtype=int)
    clamped = int(np.sum(scores < lo) + np.sum(scores > hi))
    if scores.size:
        idx = np.floor((scores - lo) / (hi - lo) * bins).astype(int)
        idx = np.clip(idx, 0, bins - 1)
        np.add.at(counts, idx, 1)
    edges = np.linspace(lo, hi, bins + 1)
    return Histogram(counts=counts, clamped=clamped, edges=edges)


def records_to_csv(records: Iterable[ScoreRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score", "domain"])
        for rec in records:
            writer.writerow([repr(rec.score), rec.domain])


def records_from_csv(path) -> list[ScoreRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["score", "domain"]:
            raise ValueError(f"unexpected ScoreRecord header in {path}: {header}")
        return [ScoreRecord(float(score), domain) for score, domain in reader]
