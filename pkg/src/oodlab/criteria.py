"""Training criteria: values and analytic gradients with respect to head scores.

Per-sample losses (sce, oe_uniform, energy, ice_id, ice_ood, bce_outlier) each
return a LossReport carrying the scalar value and dL/dscores. The combined
objectives pair an in-distribution branch with an outlier branch under a
balance weight, and a small dispatcher maps a criterion kind to its two
branches so the trainer and the shift simulation share one code path.

Sign conventions worth keeping in mind:
  - sce pushes the ground-truth score up and every other score down;
  - the uniform-target outlier loss pushes a score down exactly when its
    softmax mass exceeds 1/K, and up when it is below (the "contradictory"
    regime);
  - energy as an outlier loss pushes every score down; its negated
    in-distribution counterpart pushes every score up;
  - ice_id touches only the ground-truth score and ice_ood only the argmax
    score, so neither opposes the sce direction on any other class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .heads import InvalidScore

KINDS = ("plain", "oe", "energy", "ice", "ice_minus", "bce")

# Balance-weight defaults per criterion kind. The two ablation kinds reuse the
# weight of the method they ablate.
DEFAULT_LAMBDA = {
    "plain": 0.0,
    "oe": 0.5,
    "energy": 0.1,
    "ice": 1.0,
    "ice_minus": 1.0,
    "bce": 0.5,
}

ICE_OOD_EPS = 1e-12
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class LossReport:
    value: float
    d_scores: np.ndarray

    def scaled(self, factor: float) -> "LossReport":
        return LossReport(factor * self.value, factor * self.d_scores)


@dataclass(frozen=True)
class BranchReports:
    """A combined objective split into its two gradient branches.

    ``in_branch.d_scores`` is the full gradient of the total with respect to
    the in-distribution sample's scores; ``out_branch`` likewise for the
    outlier's scores. ``total`` is the sum of both branch values.
    """

    total: float
    in_branch: LossReport
    out_branch: LossReport


@dataclass(frozen=True)
class CriterionConfig:
    kind: str
    lam: float | None = None  # None means the per-kind default

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be >= 0")

    @property
    def weight(self) -> float:
        return DEFAULT_LAMBDA[self.kind] if self.lam is None else self.lam

    def needs_gaussian_head(self) -> bool:
        return self.kind in ("ice", "ice_minus")


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    expd = np.exp(shifted)
    return expd / expd.sum()


def _logsumexp(scores: np.ndarray) -> float:
    m = float(scores.max())
    return m + math.log(float(np.exp(scores - m).sum()))


def _log1mexp(x: float) -> float:
    """log(1 - exp(x)) for x < 0, split at -ln 2 for relative accuracy."""
    if x > -_LN2:
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


def _check_nonpositive(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if np.any(h > 0):
        raise InvalidScore("expected non-positive Gaussian-head scores")
    return h


def sce(scores: np.ndarray, y: int) -> LossReport:
    """Softmax cross-entropy against the one-hot target ``y``."""
    scores = np.asarray(scores, dtype=float)
    if not 0 <= y < scores.shape[0]:
        raise ValueError(f"label {y} out of range for K={scores.shape[0]}")
    probs = _softmax(scores)
    value = _logsumexp(scores) - float(scores[y])
    d_scores = probs.copy()
    d_scores[y] -= 1.0
    return LossReport(value, d_scores)


def oe_uniform(scores: np.ndarray) -> LossReport:
    """Cross-entropy to the uniform distribution over classes.

    The gradient is softmax - 1/K per coordinate, i.e. the literal gradient of
    the value; positive exactly where the softmax mass exceeds 1/K.
    """
    scores = np.asarray(scores, dtype=float)
    k = scores.shape[0]
    if k < 2:
        raise ValueError("need at least two classes")
    value = _logsumexp(scores) - float(scores.mean())
    d_scores = _softmax(scores) - 1.0 / k
    return LossReport(value, d_scores)


def energy(scores: np.ndarray) -> LossReport:
    """logsumexp of the scores; its gradient is the softmax, strictly positive."""
    scores = np.asarray(scores, dtype=float)
    return LossReport(_logsumexp(scores), _softmax(scores))


def energy_objective(in_scores: np.ndarray, y: int, out_scores: np.ndarray, lam: float) -> BranchReports:
    """sce on the in-sample plus lam * (-energy(in) + energy(out)).

    The lam term adds a strictly negative contribution to every
    in-distribution score gradient, which is what makes this objective fight
    the sce direction on non-target classes.
    """
    sce_rep = sce(in_scores, y)
    e_in = energy(in_scores)
    e_out = energy(out_scores)
    in_branch = LossReport(
        sce_rep.value - lam * e_in.value,
        sce_rep.d_scores - lam * e_in.d_scores,
    )
    out_branch = e_out.scaled(lam)
    return BranchReports(in_branch.value + out_branch.value, in_branch, out_branch)


def ice_id(h: np.ndarray, y: int) -> LossReport:
    """Negated ground-truth score, -h_y: pulls the sample onto its class center."""
    h = _check_nonpositive(h)
    if not 0 <= y < h.shape[0]:
        raise ValueError(f"label {y} out of range for K={h.shape[0]}")
    d_scores = np.zeros_like(h)
    d_scores[y] = -1.0
    return LossReport(-float(h[y]), d_scores)


def ice_ood(h: np.ndarray) -> LossReport:
    """-log(1 - exp(max_i h_i)): pushes an outlier off its nearest class center.

    Singular as the max score approaches 0; when 1 - exp(max h) drops below
    ICE_OOD_EPS both the value and the gradient are computed with the floored
    denominator, so the loss tops out at -log(ICE_OOD_EPS).
    """
    h = _check_nonpositive(h)
    top = int(np.argmax(h))
    h_star = float(h[top])
    one_minus = -math.expm1(h_star)  # exact 1 - exp(h*) for h* <= 0
    d_scores = np.zeros_like(h)
    if one_minus < ICE_OOD_EPS:
        value = -math.log(ICE_OOD_EPS)
        d_scores[top] = math.exp(h_star) / ICE_OOD_EPS
    else:
        value = -_log1mexp(h_star)
        d_scores[top] = math.exp(h_star) / one_minus
    return LossReport(value, d_scores)


def ice_objective(
    in_h: np.ndarray, y: int, out_h: np.ndarray, lam: float, include_id: bool = True
) -> BranchReports:
    """sce on the in-sample scores plus lam * (ice_id(in) + ice_ood(out)).

    ``include_id=False`` drops the ice_id summand, which is the ablation that
    keeps the outlier push but gives up the center pull.
    """
    sce_rep = sce(_check_nonpositive(in_h), y)
    if include_id:
        id_rep = ice_id(in_h, y)
        in_branch = LossReport(
            sce_rep.value + lam * id_rep.value,
            sce_rep.d_scores + lam * id_rep.d_scores,
        )
    else:
        in_branch = sce_rep
    out_branch = ice_ood(out_h).scaled(lam)
    return BranchReports(in_branch.value + out_branch.value, in_branch, out_branch)


def bce_outlier(scores: np.ndarray, targets: np.ndarray) -> LossReport:
    """Per-class sigmoid binary cross-entropy summed over classes.

    In-distribution samples use one-hot targets, outliers all-zero targets.
    """
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.shape != scores.shape:
        raise ValueError("targets must match scores in shape")
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise ValueError("targets must be binary")
    # -[t log sig(s) + (1-t) log(1 - sig(s))] = t*softplus(-s) + (1-t)*softplus(s)
    softplus = np.logaddexp(0.0, scores)
    softplus_neg = np.logaddexp(0.0, -scores)
    value = float((targets * softplus_neg + (1.0 - targets) * softplus).sum())
    sigmoid = 1.0 / (1.0 + np.exp(-scores))
    return LossReport(value, sigmoid - targets)


def _one_hot(k: int, y: int) -> np.ndarray:
    t = np.zeros(k)
    t[y] = 1.0
    return t


def _zero_report(k: int) -> LossReport:
    return LossReport(0.0, np.zeros(k))


def id_loss(config: CriterionConfig, scores: np.ndarray, y: int, weight: float | None = None) -> LossReport:
    """The in-distribution branch of ``config.kind``, balance terms included."""
    scores = np.asarray(scores, dtype=float)
    w = config.weight if weight is None else weight
    if config.kind in ("plain", "oe"):
        return sce(scores, y)
    if config.kind == "energy":
        sce_rep = sce(scores, y)
        e_rep = energy(scores)
        return LossReport(sce_rep.value - w * e_rep.value, sce_rep.d_scores - w * e_rep.d_scores)
    if config.kind == "ice":
        sce_rep = sce(_check_nonpositive(scores), y)
        id_rep = ice_id(scores, y)
        return LossReport(sce_rep.value + w * id_rep.value, sce_rep.d_scores + w * id_rep.d_scores)
    if config.kind == "ice_minus":
        return sce(_check_nonpositive(scores), y)
    if config.kind == "bce":
        return bce_outlier(scores, _one_hot(scores.shape[0], y))
    raise AssertionError(config.kind)


def ood_loss(config: CriterionConfig, scores: np.ndarray, weight: float | None = None) -> LossReport:
    """The outlier branch of ``config.kind``, scaled by the balance weight."""
    scores = np.asarray(scores, dtype=float)
    w = config.weight if weight is None else weight
    if config.kind == "plain":
        return _zero_report(scores.shape[0])
    if config.kind == "oe":
        return oe_uniform(scores).scaled(w)
    if config.kind == "energy":
        return energy(scores).scaled(w)
    if config.kind in ("ice", "ice_minus"):
        return ice_ood(scores).scaled(w)
    if config.kind == "bce":
        return bce_outlier(scores, np.zeros(scores.shape[0])).scaled(w)
    raise AssertionError(config.kind)
