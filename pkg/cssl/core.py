"""
Domain types shared by every other module: datasets, covariance sets,
hyper-parameters and precision decompositions, plus the Gaussian
log-likelihood ``log det(L) - tr(S L)`` and its maximiser ``S^-1``.

All values are immutable after construction. Arrays are stored as
read-only float arrays; matrices are symmetrised on the way in and rejected
when they are visibly asymmetric.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.core.exceptions import ValidationError
from scipy import linalg

from .exceptions import NotPositiveDefiniteError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
WEIGHT_TOL = 1e-12
CENTER_TOL = 1e-10

NORM_ORDERS = (1.0, 2.0, math.inf)


def parse_norm_order(value):
    """
    Return ``value`` as one of the supported norm orders ``1.0``, ``2.0``
    or ``inf``. Accepts numbers and the strings ``"1"``, ``"2"``, ``"inf"``.
    """
    try:
        order = float(value)
    except (TypeError, ValueError):
        order = None
    if order not in NORM_ORDERS:
        raise ValidationError(
            'Norm order must be one of 1, 2 or inf, got {0!r}.'.format(value),
            code='norm_order')
    return order


def conjugate_order(order):
    """
    Return q with 1/p + 1/q = 1 for p in {1, 2, inf}.
    """
    order = parse_norm_order(order)
    if order == 1.0:
        return math.inf
    if order == 2.0:
        return 2.0
    return 1.0


def symmetrize(matrix, name='matrix'):
    """
    Return ``(A + A^T) / 2`` for a square matrix (or a stack of them) after
    checking that the asymmetry is below ``SYMMETRY_TOL`` relative to the
    largest entry.
    """
    matrix = np.array(matrix, dtype=float)
    if matrix.ndim < 2 or matrix.shape[-1] != matrix.shape[-2]:
        raise ValidationError(
            '{0} must be square, got shape {1}.'.format(name, matrix.shape),
            code='shape')
    if not np.all(np.isfinite(matrix)):
        raise ValidationError(
            '{0} contains non-finite entries.'.format(name), code='finite')
    transposed = np.swapaxes(matrix, -1, -2)
    if matrix.size:
        scale = max(1.0, float(np.abs(matrix).max()))
        asymmetry = float(np.abs(matrix - transposed).max())
        if asymmetry > SYMMETRY_TOL * scale:
            raise ValidationError(
                '{0} is not symmetric (max asymmetry {1:.3g}).'.format(
                    name, asymmetry),
                code='asymmetric')
    return (matrix + transposed) / 2


def _frozen(array):
    array.setflags(write=False)
    return array


def check_positive_definite(matrix, name='matrix'):
    """
    Raise :class:`NotPositiveDefiniteError` unless every matrix in the
    (stack of) symmetric matrices admits a Cholesky factor.
    """
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            '{0} is not positive definite.'.format(name))


def log_likelihoods(precisions, covariances):
    """
    Vectorised :func:`log_likelihood` over stacks of shape ``(N, d, d)``.
    """
    precisions = np.asarray(precisions, dtype=float)
    covariances = np.asarray(covariances, dtype=float)
    try:
        factors = np.linalg.cholesky(precisions)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            'log det is undefined for a precision that is not positive '
            'definite.')
    diagonals = np.diagonal(factors, axis1=-2, axis2=-1)
    logdets = 2.0 * np.log(diagonals).sum(axis=-1)
    traces = np.einsum('...ij,...ji->...', covariances, precisions)
    return logdets - traces


def log_likelihood(precision, covariance):
    """
    Gaussian log-likelihood up to constants, ``log det L - tr(S L)``.
    """
    return float(log_likelihoods(precision, covariance))


def mle_precision(covariance):
    """
    Maximum likelihood precision ``S^-1`` of a strictly positive definite
    covariance.
    """
    covariance = symmetrize(covariance, 'covariance')
    try:
        factor = linalg.cho_factor(covariance, lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            'The covariance is singular; add a diagonal load '
            '(diag_load > 0) before inverting it.')
    inverse = linalg.cho_solve(factor, np.eye(covariance.shape[0]))
    return (inverse + inverse.T) / 2


@dataclass(frozen=True)
class Dataset:
    """
    ``n x d`` observations, one row per data point. ``centered`` asserts
    that every column has zero mean.
    """

    samples: np.ndarray
    centered: bool = False

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 2:
            raise ValidationError(
                'Samples must be an n x d matrix, got shape {0}.'.format(
                    samples.shape),
                code='shape')
        if not np.all(np.isfinite(samples)):
            raise ValidationError(
                'Samples contain non-finite values.', code='finite')
        if self.centered and samples.shape[0]:
            means = np.abs(samples.mean(axis=0))
            scale = max(1.0, float(np.abs(samples).max()))
            if means.max() > CENTER_TOL * scale:
                raise ValidationError(
                    'Dataset is flagged as centered but a column mean is '
                    '{0:.3g}.'.format(means.max()),
                    code='not_centered')
        object.__setattr__(self, 'samples', _frozen(samples))

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def d(self):
        return self.samples.shape[1]

    def center(self):
        """
        Return a copy with the sample mean removed.
        """
        if not self.n:
            return Dataset(self.samples, centered=True)
        return Dataset(self.samples - self.samples.mean(axis=0),
                       centered=True)


def sample_covariance(dataset, diag_load=0.0, center=False, zero_mean=False):
    """
    ``(1/n) X^T X + diag_load * I``.

    ``X`` must be centered: either the dataset says so, ``center=True``
    removes the sample mean first, or ``zero_mean=True`` declares that the
    rows come from a distribution with known zero mean.
    """
    if not diag_load >= 0:
        raise ValidationError(
            'diag_load must be nonnegative, got {0!r}.'.format(diag_load),
            code='diag_load')
    if dataset.n < 1:
        raise ValidationError(
            'A sample covariance needs at least one sample.', code='empty')
    if dataset.centered or zero_mean:
        samples = dataset.samples
    elif center:
        samples = dataset.center().samples
    else:
        raise ValidationError(
            'The dataset is not centered. Pass center=True to subtract the '
            'sample mean or zero_mean=True for zero-mean data.',
            code='not_centered')
    covariance = samples.T @ samples / dataset.n
    covariance = (covariance + covariance.T) / 2
    if diag_load:
        covariance = covariance + diag_load * np.eye(dataset.d)
    return covariance


@dataclass(frozen=True)
class CovarianceSet:
    """
    The solver input: ``N`` symmetric ``d x d`` sample covariances ``S_i``
    with nonnegative weights ``t_i`` summing to one.
    """

    matrices: np.ndarray
    weights: np.ndarray
    n_points: Optional[np.ndarray] = None

    def __post_init__(self):
        matrices = symmetrize(self.matrices, 'covariance')
        if matrices.ndim != 3 or not matrices.shape[0] or \
                not matrices.shape[1]:
            raise ValidationError(
                'Expected a non-empty stack of d x d covariances, got shape '
                '{0}.'.format(matrices.shape),
                code='shape')
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != matrices.shape[0]:
            raise ValidationError(
                'Got {0} weights for {1} covariances.'.format(
                    weights.shape[0], matrices.shape[0]),
                code='weights')
        if not np.all(weights >= 0):
            raise ValidationError(
                'Weights must be nonnegative.', code='weights')
        if abs(weights.sum() - 1.0) > WEIGHT_TOL * max(1, len(weights)):
            raise ValidationError(
                'Weights must sum to 1, they sum to {0!r}.'.format(
                    weights.sum()),
                code='weights')
        object.__setattr__(self, 'matrices', _frozen(matrices))
        object.__setattr__(self, 'weights', _frozen(weights))
        if self.n_points is not None:
            n_points = np.array(self.n_points, dtype=int).reshape(-1)
            if n_points.shape != weights.shape or np.any(n_points < 1):
                raise ValidationError(
                    'n_points needs one positive count per covariance.',
                    code='n_points')
            object.__setattr__(self, 'n_points', _frozen(n_points))

    @classmethod
    def normalized(cls, matrices, weights=None, n_points=None):
        """
        Build a set from unnormalised weights. Without weights, ``n_points``
        proportional weights are used, or uniform ones without counts.
        """
        matrices = np.asarray(matrices, dtype=float)
        if weights is None:
            if n_points is not None:
                weights = np.asarray(n_points, dtype=float)
            else:
                weights = np.ones(matrices.shape[0])
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0:
            raise ValidationError(
                'Weights must have a positive sum.', code='weights')
        return cls(matrices, weights / total, n_points)

    @classmethod
    def from_datasets(cls, datasets, weights=None, diag_load=0.0,
                      center=False, zero_mean=False):
        matrices = np.stack([
            sample_covariance(dataset, diag_load, center=center,
                              zero_mean=zero_mean)
            for dataset in datasets])
        n_points = [dataset.n for dataset in datasets]
        return cls.normalized(matrices, weights, n_points)

    @property
    def N(self):
        return self.matrices.shape[0]

    @property
    def d(self):
        return self.matrices.shape[1]

    def pooled(self):
        """
        The single-matrix set ``S = sum_i t_i S_i``.
        """
        pooled = np.einsum('i,ijk->jk', self.weights, self.matrices)
        n_points = None
        if self.n_points is not None:
            n_points = [int(self.n_points.sum())]
        return CovarianceSet(pooled[None], [1.0], n_points)


@dataclass(frozen=True)
class Hyperparams:
    """
    Penalty weights of the common part (``rho``, l1) and the individual
    parts (``gamma``, group l_{1,p}).

    ``gamma = inf`` forces every individual part to zero (a single pooled
    sparse precision); ``rho = inf`` forces the common part to zero (joint
    group-sparse estimation).
    """

    rho: float
    gamma: float
    p: float = 2.0
    penalize_diagonal: bool = True

    def __post_init__(self):
        rho = float(self.rho)
        gamma = float(self.gamma)
        if not rho >= 0:
            raise ValidationError(
                'rho must be nonnegative, got {0!r}.'.format(self.rho),
                code='rho')
        if not gamma > 0:
            raise ValidationError(
                'gamma must be positive or inf, got {0!r}.'.format(
                    self.gamma),
                code='gamma')
        if math.isinf(rho) and math.isinf(gamma):
            raise ValidationError(
                'rho and gamma cannot both be infinite.', code='gamma')
        object.__setattr__(self, 'rho', rho)
        object.__setattr__(self, 'gamma', gamma)
        object.__setattr__(self, 'p', parse_norm_order(self.p))
        object.__setattr__(
            self, 'penalize_diagonal', bool(self.penalize_diagonal))

    @property
    def q(self):
        return conjugate_order(self.p)

    def group_scale(self, N):
        """
        ``N^(1/p)``, the l_p norm of the all-ones N-vector.
        """
        return float(N) ** (1.0 / self.p)

    def theta_vanishes(self, N):
        """
        ``rho >= N^(1/p) gamma``: the common part is zero at the optimum.
        """
        return self.rho >= self.group_scale(N) * self.gamma

    def in_bounded_regime(self, N):
        """
        ``0 < rho < N^(1/p) gamma < inf``, where the eigenvalue bounds hold.
        """
        return (0 < self.rho and math.isfinite(self.gamma) and
                not self.theta_vanishes(N))

    def projection_spec(self):
        """
        The constraint set ``{|1^T u| <= rho, ||u||_q <= gamma}`` of one
        matrix position in the dual.
        """
        from .projections import ProjectionSpec
        return ProjectionSpec(self.rho, self.gamma, self.q)

    def as_dict(self):
        return {
            'rho': self.rho,
            'gamma': self.gamma,
            'p': self.p,
            'penalize_diagonal': self.penalize_diagonal,
        }


def group_norm(omegas, p, include_diagonal=True):
    """
    ``||Omega||_{1,p}``: sum over positions of the l_p norm across the
    stack.
    """
    omegas = np.asarray(omegas, dtype=float)
    norms = np.linalg.norm(omegas, ord=p, axis=0)
    if not include_diagonal:
        norms = norms - np.diag(np.diag(norms))
    return float(norms.sum())


@dataclass(frozen=True)
class PrecisionDecomposition:
    """
    ``Lambda_i = theta + omegas[i]``: a common part shared by every dataset
    and one individual part per dataset. Every ``Lambda_i`` is positive
    definite.
    """

    theta: np.ndarray
    omegas: np.ndarray

    def __post_init__(self):
        theta = symmetrize(self.theta, 'theta')
        omegas = symmetrize(self.omegas, 'omega')
        if theta.ndim != 2:
            raise ValidationError('theta must be a d x d matrix.',
                                  code='shape')
        if omegas.ndim != 3 or omegas.shape[1:] != theta.shape or \
                not omegas.shape[0]:
            raise ValidationError(
                'omegas must be a non-empty stack of {0} matrices.'.format(
                    theta.shape),
                code='shape')
        check_positive_definite(theta[None] + omegas, 'theta + omega')
        object.__setattr__(self, 'theta', _frozen(theta))
        object.__setattr__(self, 'omegas', _frozen(omegas))

    @property
    def N(self):
        return self.omegas.shape[0]

    @property
    def d(self):
        return self.theta.shape[0]

    @property
    def precisions(self):
        return self.theta[None] + self.omegas

    def individual_spread(self, p):
        """
        Return ``(max_{i,i'} ||Lambda_i - Lambda_i'||_1, ||Omega||_{1,p})``.
        The first never exceeds twice the second.
        """
        omegas = self.omegas
        spread = 0.0
        for i in range(self.N):
            differences = np.abs(omegas[i][None] - omegas).sum(axis=(1, 2))
            spread = max(spread, float(differences.max()))
        return spread, group_norm(omegas, p)
