"""
Hyper-parameter heuristics and extraction of the common substructure from
estimated precisions.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.core.exceptions import ValidationError

from .core import Hyperparams, symmetrize

logger = logging.getLogger(__name__)

DEFAULT_ZERO_TOL = 1e-6
DEFAULT_DENSITY_TOL = 1e-8


@dataclass(frozen=True)
class ScaleLine:
    """
    Least squares fit ``|sum_i t_i S_i,jk| = s1 max_i |S_i,jk| + s0``.
    """

    s0: float
    s1: float

    def __post_init__(self):
        if not (math.isfinite(self.s0) and math.isfinite(self.s1)):
            raise ValidationError('The scale line must be finite.',
                                  code='degenerate')


@dataclass(frozen=True)
class CommonStructure:
    """
    Detected common edges. ``support`` is a symmetric boolean mask without
    diagonal; ``theta_hat`` carries the estimated common values on it.
    ``threshold`` is the variation cut-off when one was used.
    """

    theta_hat: np.ndarray
    support: np.ndarray
    threshold: Optional[float] = None

    def __post_init__(self):
        support = np.array(self.support, dtype=bool)
        if support.ndim != 2 or not np.array_equal(support, support.T):
            raise ValidationError('The support mask must be symmetric.',
                                  code='asymmetric')
        theta_hat = symmetrize(self.theta_hat, 'theta_hat')
        if np.any(theta_hat[~support] != 0):
            raise ValidationError(
                'theta_hat must vanish outside the support.', code='support')
        support.setflags(write=False)
        theta_hat.setflags(write=False)
        object.__setattr__(self, 'support', support)
        object.__setattr__(self, 'theta_hat', theta_hat)

    @property
    def n_edges(self):
        return int(np.triu(self.support, 1).sum())

    def edges(self):
        """
        Upper-triangle edge list ``[{'j', 'k', 'value'}, ...]``.
        """
        rows, cols = np.nonzero(np.triu(self.support, 1))
        return [{'j': int(j), 'k': int(k),
                 'value': float(self.theta_hat[j, k])}
                for j, k in zip(rows, cols)]


def fit_scale_line(cov):
    """
    Regress ``|sum_i t_i S_i,jk|`` on ``max_i |S_i,jk|`` over all positions
    ``j <= k``.
    """
    if cov.d < 2:
        raise ValidationError(
            'The scale line needs d >= 2, got d = {0}.'.format(cov.d),
            code='degenerate')
    rows, cols = np.triu_indices(cov.d)
    entries = cov.matrices[:, rows, cols]
    x = np.abs(entries).max(axis=0)
    y = np.abs(cov.weights @ entries)
    if np.ptp(x) == 0:
        raise ValidationError(
            'All covariance magnitudes are equal; the scale line is not '
            'identifiable.', code='degenerate')
    s1, s0 = np.polyfit(x, y, 1)
    logger.debug('scale line: s0=%g s1=%g', s0, s1)
    return ScaleLine(float(s0), float(s1))


def params_from_alpha(line, alpha):
    """
    ``rho = max(s1 alpha + s0, 0)`` and ``gamma = alpha``.
    """
    if not alpha > 0:
        raise ValidationError(
            'alpha must be positive, got {0!r}.'.format(alpha), code='alpha')
    return max(line.s1 * alpha + line.s0, 0.0), float(alpha)


def heuristic_hyperparams(cov, alpha, p=2.0, penalize_diagonal=True):
    rho, gamma = params_from_alpha(fit_scale_line(cov), alpha)
    return Hyperparams(rho, gamma, p, penalize_diagonal)


def _empty(d):
    return CommonStructure(np.zeros((d, d)), np.zeros((d, d), dtype=bool))


def extract_common_exact(decomposition, zero_tol=DEFAULT_ZERO_TOL,
                         nonzero_tol=DEFAULT_ZERO_TOL):
    """
    An off-diagonal position is common when every individual part vanishes
    there (``max_i |Omega_i,jk| <= zero_tol``) and the common part does not
    (``|Theta_jk| > nonzero_tol``).
    """
    d = decomposition.d
    individual = np.abs(decomposition.omegas).max(axis=0)
    support = (individual <= zero_tol) & \
        (np.abs(decomposition.theta) > nonzero_tol)
    np.fill_diagonal(support, False)
    if not support.any():
        return _empty(d)
    theta_hat = np.where(support, decomposition.precisions[0], 0.0)
    return CommonStructure(theta_hat, support)


def entry_variation(precisions):
    """
    ``max_i L_i,jk - min_i L_i,jk`` for every position.
    """
    precisions = np.asarray(precisions, dtype=float)
    return precisions.max(axis=0) - precisions.min(axis=0)


def extract_common_threshold(precisions, eps0):
    """
    Mark as common the positions ``j < k`` whose variation across the
    precisions is at most the ``eps0`` quantile of all variations. A
    position that is zero in every precision is never common.

    The quantile is the smallest variation ``v`` with at least
    ``ceil(eps0 m)`` of the ``m`` values ``<= v``.
    """
    precisions = np.asarray(precisions, dtype=float)
    N, d = precisions.shape[0], precisions.shape[1]
    if N < 2:
        raise ValidationError(
            'Threshold extraction compares at least two precisions.',
            code='too_few')
    if not 0 < eps0 < 1:
        raise ValidationError(
            'eps0 must lie in (0, 1), got {0!r}.'.format(eps0), code='eps0')
    rows, cols = np.triu_indices(d, 1)
    if not len(rows):
        return _empty(d)
    variation = entry_variation(precisions)[rows, cols]
    rank = max(math.ceil(eps0 * len(variation)), 1)
    threshold = float(np.sort(variation)[rank - 1])
    nonzero = np.any(precisions[:, rows, cols] != 0, axis=0)
    chosen = (variation <= threshold) & nonzero
    support = np.zeros((d, d), dtype=bool)
    support[rows[chosen], cols[chosen]] = True
    support |= support.T
    theta_hat = np.where(support, precisions[0], 0.0)
    return CommonStructure(theta_hat, support, threshold)


def estimate_density(precisions, tol=DEFAULT_DENSITY_TOL):
    """
    Fraction of positions ``j < k`` with ``|L_jk| > tol``, averaged over the
    precisions.
    """
    precisions = np.asarray(precisions, dtype=float)
    d = precisions.shape[-1]
    rows, cols = np.triu_indices(d, 1)
    if not len(rows):
        return 0.0
    return float((np.abs(precisions[:, rows, cols]) > tol).mean())
