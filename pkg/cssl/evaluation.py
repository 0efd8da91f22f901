"""
Structure recovery metrics and the per-variable correlation anomaly score.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from django.core.exceptions import ValidationError
from scipy import linalg, stats

from .exceptions import NotPositiveDefiniteError
from .selection import DEFAULT_DENSITY_TOL, entry_variation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StructureMetrics:
    wtp: float
    wfp: float
    wfn: float
    precision: float
    recall: float
    f_measure: float
    f0_measure: Optional[float] = None

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AnomalyReport:
    """
    ``scores[j]`` is the larger of the two directed divergences in
    ``per_direction[j]``.
    """

    scores: np.ndarray
    per_direction: np.ndarray
    auc: Optional[float] = None

    def rows(self):
        return [{'j': j, 'd_ab': float(ab), 'd_ba': float(ba),
                 'a': float(score)}
                for j, ((ab, ba), score) in enumerate(
                    zip(self.per_direction, self.scores))]


def _stacks(estimates, truth):
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape or estimates.ndim != 3:
        raise ValidationError(
            'Estimates {0} and truth {1} must be stacks of the same '
            'shape.'.format(estimates.shape, truth.shape), code='shape')
    return estimates, truth


def _ratio(numerator, denominator):
    return numerator / denominator if denominator > 0 else 0.0


def f0_measure(estimates, truth, zero_tol=DEFAULT_DENSITY_TOL):
    """
    Agreement of the zero patterns over all positions ``j < k`` of all
    precisions, ``2 TP / (2 TP + FP + FN)``, where a true positive is a zero
    in both. An estimate counts as zero when ``|value| <= zero_tol``.
    Without any zero on either side the measure is 1.
    """
    estimates, truth = _stacks(estimates, truth)
    rows, cols = np.triu_indices(truth.shape[-1], 1)
    true_zero = truth[:, rows, cols] == 0
    estimated_zero = np.abs(estimates[:, rows, cols]) <= zero_tol
    tp = int((true_zero & estimated_zero).sum())
    fp = int((~true_zero & estimated_zero).sum())
    fn = int((true_zero & ~estimated_zero).sum())
    denominator = 2 * tp + fp + fn
    if not denominator:
        return 1.0
    return 2 * tp / denominator


def weighted_prf(estimates, truth, eps, zero_tol=DEFAULT_DENSITY_TOL):
    """
    Weighted precision, recall and F-measure of common edge detection.

    A position ``j < k`` is detected as common when its variation across the
    estimates is strictly below ``eps`` and it is nonzero in at least one
    estimate. It is truly common when its variation across ``truth`` is
    zero. Every position is weighted by ``max_i |truth_i,jk|``.
    """
    estimates, truth = _stacks(estimates, truth)
    if truth.shape[0] < 2:
        raise ValidationError('Common edges need at least two precisions.',
                              code='too_few')
    rows, cols = np.triu_indices(truth.shape[-1], 1)
    detected = entry_variation(estimates)[rows, cols] < eps
    present = np.abs(estimates[:, rows, cols]).max(axis=0) > zero_tol
    common = entry_variation(truth)[rows, cols] == 0
    weight = np.abs(truth[:, rows, cols]).max(axis=0)
    hit = detected & present
    wtp = float(weight[hit & common].sum())
    wfp = float(weight[hit & ~common].sum())
    wfn = float(weight[~hit & common].sum())
    precision = _ratio(wtp, wtp + wfp)
    recall = _ratio(wtp, wtp + wfn)
    f_measure = _ratio(2 * precision * recall, precision + recall)
    return StructureMetrics(
        wtp, wfp, wfn, precision, recall, f_measure,
        f0_measure(estimates, truth, zero_tol))


def _covariance(precision):
    try:
        factor = linalg.cho_factor(precision, lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            'Anomaly scores need positive definite precisions.')
    covariance = linalg.cho_solve(factor, np.eye(precision.shape[0]))
    return (covariance + covariance.T) / 2


def _directed(lam_a, cov_a, lam_b, j, rest):
    """
    Expected KL divergence of ``x_j | rest`` from model ``a`` to ``b``
    under the distribution of ``a``.
    """
    l_a, l_b = lam_a[rest, j], lam_b[rest, j]
    d_a, d_b = lam_a[j, j], lam_b[j, j]
    v_a, sigma_a = cov_a[rest, j], cov_a[j, j]
    V_a = cov_a[np.ix_(rest, rest)]
    return (v_a @ (l_b - l_a) +
            0.5 * (l_b @ V_a @ l_b / d_b - l_a @ V_a @ l_a / d_a) +
            0.5 * (math.log(d_a / d_b) + sigma_a * (d_b - d_a)))


def anomaly_score_pair(lamA, lamB):
    """
    Score every variable by how much its conditional distribution given
    the others changes between two Gaussian models, taking the larger of the
    two directions.
    """
    lam_a = np.asarray(lamA, dtype=float)
    lam_b = np.asarray(lamB, dtype=float)
    if lam_a.shape != lam_b.shape or lam_a.ndim != 2:
        raise ValidationError('Both precisions must have the same d x d '
                              'shape.', code='shape')
    cov_a, cov_b = _covariance(lam_a), _covariance(lam_b)
    d = lam_a.shape[0]
    per_direction = np.empty((d, 2))
    indices = np.arange(d)
    for j in range(d):
        rest = indices[indices != j]
        per_direction[j, 0] = _directed(lam_a, cov_a, lam_b, j, rest)
        per_direction[j, 1] = _directed(lam_b, cov_b, lam_a, j, rest)
    return AnomalyReport(per_direction.max(axis=1), per_direction)


def anomaly_scores_between(estimates_a, estimates_b, labels=None):
    """
    Average :func:`anomaly_score_pair` over every pair drawn from the two
    groups. With ``labels`` the report carries the ROC AUC.
    """
    reports = [anomaly_score_pair(lam_a, lam_b)
               for lam_a in estimates_a for lam_b in estimates_b]
    logger.debug('averaged anomaly scores over %d pairs', len(reports))
    scores = np.mean([report.scores for report in reports], axis=0)
    per_direction = np.mean([report.per_direction for report in reports],
                            axis=0)
    auc = None if labels is None else roc_auc(scores, labels)
    return AnomalyReport(scores, per_direction, auc)


def roc_auc(scores, labels):
    """
    Area under the ROC curve from the rank statistic; tied scores count one
    half.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    positives = int(labels.sum())
    negatives = len(labels) - positives
    if not positives or not negatives:
        raise ValidationError(
            'The AUC needs at least one positive and one negative label.',
            code='labels')
    ranks = stats.rankdata(scores)
    total = ranks[labels].sum() - positives * (positives + 1) / 2
    return float(total / (positives * negatives))
