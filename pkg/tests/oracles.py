"""Independent oracles the fast implementations are tested against.

Everything here is deliberately brute force: central finite differences,
O(n^2) pairwise counting, exhaustive threshold sweeps, and Bayes' rule spelled
out with explicit densities. None of it shares code with the package paths it
checks.
"""

import numpy as np


def central_difference(f, x, step=1e-5):
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        grad.flat[i] = (f(xp) - f(xm)) / (2.0 * step)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6):
    """Max absolute deviation, scaled by the numeric gradient's magnitude."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(floor, float(np.max(np.abs(numeric), initial=0.0)))
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def pairwise_auroc(in_scores, out_scores):
    """Mann-Whitney statistic by explicit pair enumeration, ties as one half."""
    wins = 0.0
    for a in in_scores:
        for b in out_scores:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(in_scores) * len(out_scores))


def sweep_aupr(in_scores, out_scores, positive):
    """Step-wise PR area via an exhaustive threshold sweep with full rescans."""
    if positive == "in":
        pos = list(in_scores)
        neg = list(out_scores)
    else:
        pos = [-s for s in out_scores]
        neg = [-s for s in in_scores]
    thresholds = sorted(set(pos + neg), reverse=True)
    area = 0.0
    prev_recall = 0.0
    for tau in thresholds:
        tp = sum(1 for s in pos if s >= tau)
        fp = sum(1 for s in neg if s >= tau)
        precision = tp / (tp + fp)
        recall = tp / len(pos)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def sweep_fpr_at_tpr(in_scores, out_scores, tpr_target):
    """Largest threshold whose inclusive in-tail reaches the target, by full scan."""
    best_tau = None
    for tau in sorted(set(in_scores), reverse=True):
        tpr = sum(1 for s in in_scores if s >= tau) / len(in_scores)
        if tpr >= tpr_target:
            best_tau = tau
            break
    if best_tau is None:
        # No finite threshold reaches the target; only tau = -inf would.
        return 1.0
    return sum(1 for s in out_scores if s >= best_tau) / len(out_scores)


def gaussian_density(z, mean, cov):
    z = np.asarray(z, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = len(z)
    diff = z - mean
    quad = diff @ np.linalg.inv(cov) @ diff
    norm = (2.0 * np.pi) ** (d / 2.0) * np.sqrt(np.linalg.det(cov))
    return float(np.exp(-0.5 * quad) / norm)


def bayes_posterior(z, means, cov):
    """Posterior over classes from explicit densities under uniform priors."""
    dens = np.array([gaussian_density(z, mu, cov) for mu in means])
    return dens / dens.sum()
